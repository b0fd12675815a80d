#pragma once

#include "lrd/core/checkpoint.hpp"
#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"
#include "lrd/core/rng.hpp"
#include "lrd/core/stats.hpp"
#include "lrd/core/tensor.hpp"
#include "lrd/data/dataset.hpp"
#include "lrd/data/idx.hpp"
#include "lrd/harness/gradcheck.hpp"
#include "lrd/harness/runner.hpp"
#include "lrd/harness/spec.hpp"
#include "lrd/nn/mlp.hpp"
#include "lrd/optim/optimizer.hpp"
#include "lrd/optim/rule.hpp"
#include "lrd/testfn/toy.hpp"
