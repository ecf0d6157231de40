#pragma once

#include "ffp/core.hpp"
#include "ffp/market_model.hpp"
#include "ffp/model_library.hpp"
#include "ffp/constraint_set.hpp"
#include "ffp/drivers.hpp"
#include "ffp/grid.hpp"
#include "ffp/ergodic_solver.hpp"
#include "ffp/forward_process.hpp"
#include "ffp/parallel.hpp"
#include "ffp/verification.hpp"
#include "ffp/io.hpp"
#include "ffp/config.hpp"
