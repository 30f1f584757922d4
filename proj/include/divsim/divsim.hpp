#pragma once

#include "divsim/covariates.hpp"
#include "divsim/csv.hpp"
#include "divsim/engine.hpp"
#include "divsim/errors.hpp"
#include "divsim/harness.hpp"
#include "divsim/hazard.hpp"
#include "divsim/invariants.hpp"
#include "divsim/metrics.hpp"
#include "divsim/policy.hpp"
#include "divsim/population.hpp"
#include "divsim/rng.hpp"
#include "divsim/scenario.hpp"
