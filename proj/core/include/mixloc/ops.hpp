#pragma once

#include <vector>

#include "mixloc/graph.hpp"

namespace mixloc::ad {

// Differentiable wrappers over the array kernels. Every op checks its inputs
// when the node is built (the forward pass runs eagerly) and registers an
// exact reverse-mode rule.

Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var multiply(Var a, Var b);          // elementwise
Var scale(Var x, double c);
Var exp(Var x);
Var log(Var x);
Var tanh(Var x);
Var matmul(Var a, Var b);
Var transpose(Var x);
Var softmax_rows(Var x, double tau);
Var max_rows(Var x);                 // gradient goes to the lowest-index argmax
Var trace_log(Var x);
Var l2_normalize_rows(Var x, double eps);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t row0, std::size_t nrows);
Var sum_all(Var x);
Var affine(Var x, Var w, Var b);     // x*w + b, bias broadcast over rows

}  // namespace mixloc::ad
