#pragma once

// Umbrella header.

#include "sgt/analysis.hpp"
#include "sgt/config.hpp"
#include "sgt/data.hpp"
#include "sgt/error.hpp"
#include "sgt/harness.hpp"
#include "sgt/loss.hpp"
#include "sgt/matrix.hpp"
#include "sgt/net.hpp"
#include "sgt/random.hpp"
#include "sgt/schedule.hpp"
#include "sgt/text.hpp"
#include "sgt/transform.hpp"
