#pragma once

#include "error.hpp"
#include "log.hpp"
#include "model.hpp"
#include "grid.hpp"
#include "agrid.hpp"
#include "routing.hpp"
#include "evaluator.hpp"
#include "balancer.hpp"
#include "random.hpp"
#include "runtime.hpp"
#include "workload.hpp"
#include "baselines.hpp"
#include "experiment.hpp"
