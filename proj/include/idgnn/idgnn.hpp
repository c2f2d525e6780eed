#pragma once

// Umbrella header for the implicit dynamic graph neural network library.

#include "idgnn/bench.hpp"
#include "idgnn/bilevel.hpp"
#include "idgnn/error.hpp"
#include "idgnn/generators.hpp"
#include "idgnn/graph.hpp"
#include "idgnn/implicit_grad.hpp"
#include "idgnn/io.hpp"
#include "idgnn/metrics.hpp"
#include "idgnn/model.hpp"
#include "idgnn/oracle.hpp"
#include "idgnn/tensor.hpp"
#include "idgnn/trainer.hpp"
