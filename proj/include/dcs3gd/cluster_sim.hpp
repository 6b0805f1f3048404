#pragma once

#include "dcs3gd/sim/allreduce.hpp"
#include "dcs3gd/sim/cost_model.hpp"
#include "dcs3gd/sim/run_record.hpp"
#include "dcs3gd/sim/sharding.hpp"
#include "dcs3gd/sim/simulator.hpp"
