#include "mixloc/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace mixloc::ad {

namespace {

void accumulate(Array& acc, const Array& g, double factor = 1.0) {
  for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += factor * g[i];
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw std::invalid_argument("op inputs belong to different graphs");
  return *a.graph;
}

Array affine_kernel(const Array& x, const Array& w, const Array& b) {
  Array out = mixloc::matmul(x, w);
  const std::size_t m = out.rows(), c = out.cols();
  if (b.numel() != c) {
    throw std::invalid_argument("affine: bias length " + std::to_string(b.numel()) +
                                " does not match output columns " + std::to_string(c));
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += b[j];
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  return graph_of(a, b).derived(
      "add", {a.id, b.id},
      [](std::span<const Array* const> in) { return mixloc::add(*in[0], *in[1]); },
      [](const Array&, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) {
        accumulate(*adj[0], g);
        accumulate(*adj[1], g);
      });
}

Var subtract(Var a, Var b) {
  return graph_of(a, b).derived(
      "subtract", {a.id, b.id},
      [](std::span<const Array* const> in) { return mixloc::subtract(*in[0], *in[1]); },
      [](const Array&, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) {
        accumulate(*adj[0], g);
        accumulate(*adj[1], g, -1.0);
      });
}

Var multiply(Var a, Var b) {
  return graph_of(a, b).derived(
      "multiply", {a.id, b.id},
      [](std::span<const Array* const> in) { return mixloc::multiply(*in[0], *in[1]); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        for (std::size_t i = 0; i < g.numel(); ++i) {
          (*adj[0])[i] += g[i] * (*in[1])[i];
          (*adj[1])[i] += g[i] * (*in[0])[i];
        }
      });
}

Var scale(Var x, double c) {
  return x.graph->derived(
      "scale", {x.id},
      [c](std::span<const Array* const> in) { return mixloc::scale(*in[0], c); },
      [c](const Array&, const Array& g, std::span<const Array* const>,
          std::span<Array* const> adj) { accumulate(*adj[0], g, c); });
}

Var exp(Var x) {
  return x.graph->derived(
      "exp", {x.id},
      [](std::span<const Array* const> in) { return mixloc::exp(*in[0]); },
      [](const Array& y, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*adj[0])[i] += g[i] * y[i];
      });
}

Var log(Var x) {
  return x.graph->derived(
      "log", {x.id},
      [](std::span<const Array* const> in) { return mixloc::log(*in[0]); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*adj[0])[i] += g[i] / (*in[0])[i];
      });
}

Var tanh(Var x) {
  return x.graph->derived(
      "tanh", {x.id},
      [](std::span<const Array* const> in) { return mixloc::tanh(*in[0]); },
      [](const Array& y, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*adj[0])[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

Var matmul(Var a, Var b) {
  return graph_of(a, b).derived(
      "matmul", {a.id, b.id},
      [](std::span<const Array* const> in) { return mixloc::matmul(*in[0], *in[1]); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        accumulate(*adj[0], mixloc::matmul(g, mixloc::transpose(*in[1])));
        accumulate(*adj[1], mixloc::matmul(mixloc::transpose(*in[0]), g));
      });
}

Var transpose(Var x) {
  return x.graph->derived(
      "transpose", {x.id},
      [](std::span<const Array* const> in) { return mixloc::transpose(*in[0]); },
      [](const Array&, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) { accumulate(*adj[0], mixloc::transpose(g)); });
}

Var softmax_rows(Var x, double tau) {
  if (tau <= 0.0) {
    throw std::invalid_argument("softmax_rows: temperature must be positive, got " +
                                std::to_string(tau));
  }
  return x.graph->derived(
      "softmax_rows", {x.id},
      [tau](std::span<const Array* const> in) { return mixloc::softmax_rows(*in[0], tau); },
      [tau](const Array& y, const Array& g, std::span<const Array* const>,
            std::span<Array* const> adj) {
        const std::size_t r = y.rows(), c = y.cols();
        for (std::size_t i = 0; i < r; ++i) {
          double gy = 0.0;
          for (std::size_t j = 0; j < c; ++j) gy += g.at(i, j) * y.at(i, j);
          for (std::size_t j = 0; j < c; ++j) {
            adj[0]->at(i, j) += y.at(i, j) * (g.at(i, j) - gy) / tau;
          }
        }
      });
}

Var max_rows(Var x) {
  return x.graph->derived(
      "max_rows", {x.id},
      [](std::span<const Array* const> in) { return mixloc::max_rows(*in[0]); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        const auto idx = mixloc::argmax_rows(*in[0]);
        for (std::size_t i = 0; i < idx.size(); ++i) adj[0]->at(i, idx[i]) += g[i];
      });
}

Var trace_log(Var x) {
  return x.graph->derived(
      "trace_log", {x.id},
      [](std::span<const Array* const> in) { return Array::scalar(mixloc::trace_log(*in[0])); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        const Array& v = *in[0];
        for (std::size_t i = 0; i < v.rows(); ++i) adj[0]->at(i, i) += g[0] / v.at(i, i);
      });
}

Var l2_normalize_rows(Var x, double eps) {
  if (eps <= 0.0) {
    throw std::invalid_argument("l2_normalize_rows: eps must be positive, got " +
                                std::to_string(eps));
  }
  return x.graph->derived(
      "l2_normalize_rows", {x.id},
      [eps](std::span<const Array* const> in) { return mixloc::l2_normalize_rows(*in[0], eps); },
      [eps](const Array& y, const Array& g, std::span<const Array* const> in,
            std::span<Array* const> adj) {
        const Array& v = *in[0];
        const std::size_t r = v.rows(), c = v.cols();
        for (std::size_t i = 0; i < r; ++i) {
          double sq = 0.0;
          for (std::size_t j = 0; j < c; ++j) sq += v.at(i, j) * v.at(i, j);
          const double norm = std::sqrt(sq);
          if (norm >= eps) {
            double gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < c; ++j) {
              adj[0]->at(i, j) += (g.at(i, j) - gy * y.at(i, j)) / norm;
            }
          } else {
            for (std::size_t j = 0; j < c; ++j) adj[0]->at(i, j) += g.at(i, j) / eps;
          }
        }
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Graph* graph = parts[0].graph;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    if (p.graph != graph) throw std::invalid_argument("concat_rows: mixed graphs");
    ids.push_back(p.id);
  }
  return graph->derived(
      "concat_rows", std::move(ids),
      [](std::span<const Array* const> in) { return mixloc::concat_rows(in); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          Array& a = *adj[p];
          for (std::size_t i = 0; i < a.numel(); ++i) a[i] += g[offset + i];
          offset += a.numel();
        }
      });
}

Var slice_rows(Var x, std::size_t row0, std::size_t nrows) {
  return x.graph->derived(
      "slice_rows", {x.id},
      [row0, nrows](std::span<const Array* const> in) {
        return mixloc::slice_rows(*in[0], row0, nrows);
      },
      [row0](const Array&, const Array& g, std::span<const Array* const> in,
             std::span<Array* const> adj) {
        const std::size_t offset = row0 * in[0]->cols();
        for (std::size_t i = 0; i < g.numel(); ++i) (*adj[0])[offset + i] += g[i];
      });
}

Var sum_all(Var x) {
  return x.graph->derived(
      "sum_all", {x.id},
      [](std::span<const Array* const> in) { return Array::scalar(mixloc::sum(*in[0])); },
      [](const Array&, const Array& g, std::span<const Array* const>,
         std::span<Array* const> adj) {
        for (std::size_t i = 0; i < adj[0]->numel(); ++i) (*adj[0])[i] += g[0];
      });
}

Var affine(Var x, Var w, Var b) {
  Graph& graph = graph_of(x, w);
  if (b.graph != &graph) throw std::invalid_argument("affine: mixed graphs");
  return graph.derived(
      "affine", {x.id, w.id, b.id},
      [](std::span<const Array* const> in) { return affine_kernel(*in[0], *in[1], *in[2]); },
      [](const Array&, const Array& g, std::span<const Array* const> in,
         std::span<Array* const> adj) {
        accumulate(*adj[0], mixloc::matmul(g, mixloc::transpose(*in[1])));
        accumulate(*adj[1], mixloc::matmul(mixloc::transpose(*in[0]), g));
        Array& db = *adj[2];
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
      });
}

}  // namespace mixloc::ad
