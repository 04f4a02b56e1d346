#pragma once

#include "mixgraph/admm.hpp"
#include "mixgraph/cg.hpp"
#include "mixgraph/config.hpp"
#include "mixgraph/dense.hpp"
#include "mixgraph/error.hpp"
#include "mixgraph/graph.hpp"
#include "mixgraph/graph_learn.hpp"
#include "mixgraph/io.hpp"
#include "mixgraph/parallel.hpp"
#include "mixgraph/pipeline.hpp"
#include "mixgraph/priors.hpp"
#include "mixgraph/sparse.hpp"
#include "mixgraph/tuner.hpp"
#include "mixgraph/verify.hpp"
