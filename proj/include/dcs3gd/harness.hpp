#pragma once

#include "dcs3gd/harness/compare.hpp"
#include "dcs3gd/harness/config.hpp"
#include "dcs3gd/harness/experiment.hpp"
#include "dcs3gd/harness/sweep.hpp"
