// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rob/core/graph.hpp"
#include "rob/core/rng.hpp"

namespace robtest {

using rob::NodePtr;
using rob::Tensor;
using rob::real;

struct FdReport {
  rob::real max_rel_err = 0.0;
  std::size_t n_checked = 0;
  std::string worst_location;
};

/// Central-difference check of d(build())/d(params). `build` must be a pure
/// function of the current values of `params` and return a scalar node.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline FdReport fd_check(const std::vector<NodePtr>& params,
                         const std::function<NodePtr()>& build, rob::real h = 1e-5,
                         std::size_t max_per_param = 0, rob::real denom_floor = 1e-4) {
  for (const auto& p : params) p->grad = Tensor();  // params may be reused across checks
  NodePtr root = build();
  rob::check(root->value.size() == 1, "fd_check: build() must return a scalar");
  rob::backward(root);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.push_back(p->grad.empty() ? Tensor::zeros(p->value.shape()) : p->grad);

  FdReport rep;
  rob::Rng pick(0xFDC);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& v = params[pi]->value;
    std::vector<std::size_t> elems;
    if (max_per_param == 0 || v.size() <= max_per_param) {
      elems.resize(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) elems[i] = i;
    } else {
      elems = pick.sample_without_replacement(v.size(), max_per_param);
    }
    for (std::size_t i : elems) {
      const rob::real keep = v[i];
      v[i] = keep + h;
      const rob::real fp = build()->value[0];
      v[i] = keep - h;
      const rob::real fm = build()->value[0];
      v[i] = keep;
      const rob::real num = (fp - fm) / (2.0 * h);
      const rob::real ana = analytic[pi][i];
      const rob::real rel =
          std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), denom_floor});
      ++rep.n_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_location =
            "param " + std::to_string(pi) + "[" + std::to_string(i) + "] analytic=" +
            std::to_string(ana) + " numeric=" + std::to_string(num);
      }
    }
  }
  return rep;
}

inline NodePtr random_param(std::vector<std::size_t> shape, rob::Rng& rng, rob::real scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return rob::make_param(std::move(t));
}

}  // namespace robtest
