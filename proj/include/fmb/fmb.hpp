#pragma once

#include "fmb/error.hpp"
#include "fmb/linalg.hpp"
#include "fmb/rng.hpp"
#include "fmb/price.hpp"
#include "fmb/infogeo.hpp"
#include "fmb/bayes_vb.hpp"
#include "fmb/objective.hpp"
#include "fmb/optim.hpp"
#include "fmb/evo_strategy.hpp"
#include "fmb/filters.hpp"
#include "fmb/hierarchy.hpp"
