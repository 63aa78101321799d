// Copyright 2026 The lmkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lmkit/nn/graph.hpp"

namespace lmkit::nn {

struct GradCheckEntry {
  std::string name;
  double relative_error = 0.0;  // |analytic - numeric| / max(|analytic| + |numeric|, 1e-8)
  double analytic_norm = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> groups;

  double max_relative_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.relative_error);
    return m;
  }
  bool all_finite() const {
    return std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.finite; });
  }
  std::vector<std::string> failing(double tolerance) const {
    std::vector<std::string> out;
    for (const auto& g : groups) {
      if (!g.finite || g.relative_error >= tolerance) out.push_back(g.name);
    }
    return out;
  }
};

// Compares backprop gradients of a scalar loss with central differences,
// one group per parameter (norms taken over the whole tensor). `loss` must
// build a fresh graph and return its scalar output.
inline GradCheckReport grad_check(const std::vector<Parameter<double>*>& params,
                                  const std::function<Var(Graph<double>&)>& loss,
                                  double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    Graph<double> g;
    return g.scalar(loss(g));
  };
  GradCheckReport report;
  for (auto* p : params) {
    const Mat<double> analytic = p->grad;
    Mat<double> numeric(analytic.rows(), analytic.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + eps;
      const double up = eval();
      w = saved - eps;
      const double down = eval();
      w = saved;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    GradCheckEntry e;
    e.name = p->name;
    e.analytic_norm = analytic.norm();
    e.finite = analytic.allFinite() && numeric.allFinite();
    const double denom = std::max(analytic.norm() + numeric.norm(), 1e-8);
    e.relative_error = (analytic - numeric).norm() / denom;
    report.groups.push_back(e);
  }
  return report;
}

}  // namespace lmkit::nn
