#pragma once

// Umbrella header.

#include "bilevel/csv.hpp"
#include "bilevel/data/dataset.hpp"
#include "bilevel/data/idx.hpp"
#include "bilevel/data/libsvm.hpp"
#include "bilevel/data/synthetic.hpp"
#include "bilevel/directions.hpp"
#include "bilevel/experiment.hpp"
#include "bilevel/hash.hpp"
#include "bilevel/metrics.hpp"
#include "bilevel/optimum_cache.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/problems/hyperclean.hpp"
#include "bilevel/problems/logreg.hpp"
#include "bilevel/problems/quadratic.hpp"
#include "bilevel/problems/ridge.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/solvers.hpp"
#include "bilevel/vec.hpp"
