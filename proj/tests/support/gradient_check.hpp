#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace pistm::testing {

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  std::string worst_where;
};

// Central finite differences against reverse-mode gradients for every
// parameter of a scalar-rooted graph. Entries where both the analytic and
// numeric value are below abs_floor are compared absolutely.
inline GradCheckResult check_gradients(Graph& g, NodeId loss,
                                       double step = 1e-5,
                                       double rel_tol = 1e-4,
                                       double abs_floor = 1e-7) {
  GradCheckResult res;
  g.forward();
  g.backward(loss);

  std::vector<NodeId> param_ids = g.params();
  std::vector<Tensor> analytic;
  analytic.reserve(param_ids.size());
  for (NodeId pid : param_ids) analytic.push_back(g.grad(pid));

  for (std::size_t pi = 0; pi < param_ids.size(); ++pi) {
    Tensor& p = g.param_value(param_ids[pi]);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double saved = p[j];
      p[j] = saved + step;
      g.forward();
      const double up = g.value(loss)[0];
      p[j] = saved - step;
      g.forward();
      const double dn = g.value(loss)[0];
      p[j] = saved;
      const double numeric = (up - dn) / (2.0 * step);
      const double exact = analytic[pi][j];
      const double denom = std::max(std::abs(numeric), std::abs(exact));
      double rel;
      if (denom < abs_floor) {
        rel = std::abs(numeric - exact);
      } else {
        rel = std::abs(numeric - exact) / denom;
      }
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.worst_where =
            "param " + std::to_string(pi) + " entry " + std::to_string(j);
      }
      if (rel > rel_tol) res.ok = false;
    }
  }
  g.forward();
  return res;
}

}  // namespace pistm::testing
