// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rob/core/rng.hpp"
#include "rob/eval/features.hpp"

namespace rob {

struct LowShotSpec {
  std::size_t images_per_class = 1;
  std::size_t n_splits = 5;
  std::size_t lambda_points = 13;
  std::uint64_t seed = 0;

  /// Split-count convention: 5 splits at 1 image/class, 3 at 5, 1 otherwise.
  static LowShotSpec for_images_per_class(std::size_t n, std::uint64_t seed = 0) {
    LowShotSpec s;
    s.images_per_class = n;
    s.n_splits = n == 1 ? 5 : (n == 5 ? 3 : 1);
    s.seed = seed;
    return s;
  }

  void validate() const {
    check_config(images_per_class >= 1, "LowShotSpec: images_per_class must be positive");
    check_config(n_splits >= 1, "LowShotSpec: n_splits must be positive");
    check_config(lambda_points >= 2, "LowShotSpec: lambda grid needs at least 2 points");
  }
};

/// Regularization grid from 1e4 down to 1e-2, evenly spaced in log10.
/// Endpoints are pinned to the exact literals.
inline std::vector<real> lambda_grid(std::size_t points = 13) {
  check(points >= 2, "lambda_grid: need at least 2 points");
  std::vector<real> out(points);
  out.front() = 1e4;
  out.back() = 1e-2;
  for (std::size_t i = 1; i + 1 < points; ++i) {
    const real e = 4.0 - 6.0 * static_cast<real>(i) / static_cast<real>(points - 1);
    out[i] = std::pow(real(10), e);
  }
  return out;
}

struct LowShotResult {
  real mean_accuracy = 0;
  real stdev = 0;
  std::vector<real> per_split;
  std::vector<real> best_lambda_per_split;
  std::vector<std::string> normalization_ops;
  real max_abs_train_mean = 0;  // largest |column mean| of the centered train subsets
};

namespace detail {

/// Multinomial logistic regression, bias column included, L2 penalty
/// (λ/2)·‖W‖². Nesterov-accelerated full-batch descent to a gradient
/// max-norm below tol; everything deterministic from W = 0.
inline Tensor fit_logreg(const Tensor& x, const std::vector<int>& labels, std::size_t n_classes,
                         real lambda, real tol = 1e-6, std::size_t max_iters = 20000) {
  const std::size_t n = labels.size(), d = x.cols();
  Tensor y({n, n_classes});
  for (std::size_t i = 0; i < n; ++i) y.at2(i, labels[i]) = 1.0;

  // Lipschitz bound: 0.5·σmax²(X)/n + λ, σmax² by power iteration.
  real sigma_sq = 0;
  {
    Tensor v({d});
    for (std::size_t c = 0; c < d; ++c) v[c] = 1.0 / std::sqrt(static_cast<real>(d));
    Tensor xv({n}), xtxv({d});
    for (std::size_t it = 0; it < 50; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        real s = 0;
        for (std::size_t c = 0; c < d; ++c) s += x[i * d + c] * v[c];
        xv[i] = s;
      }
      real norm_sq = 0;
      for (std::size_t c = 0; c < d; ++c) {
        real s = 0;
        for (std::size_t i = 0; i < n; ++i) s += x[i * d + c] * xv[i];
        xtxv[c] = s;
        norm_sq += s * s;
      }
      const real norm = std::sqrt(norm_sq);
      if (norm < 1e-30) break;
      sigma_sq = norm;
      for (std::size_t c = 0; c < d; ++c) v[c] = xtxv[c] / norm;
    }
  }
  const real L = 0.5 * sigma_sq / static_cast<real>(n) + lambda;
  const real mu = lambda;
  const real step = 1.0 / L;
  const real beta = (std::sqrt(L) - std::sqrt(mu)) / (std::sqrt(L) + std::sqrt(mu) + 1e-30);

  Tensor w({d, n_classes}), w_prev({d, n_classes}), z({d, n_classes});
  Tensor p({n, n_classes}), grad({d, n_classes});
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // p = softmax(x z)
    for (std::size_t i = 0; i < n; ++i) {
      real mx = -1e300;
      for (std::size_t c = 0; c < n_classes; ++c) {
        real s = 0;
        for (std::size_t f = 0; f < d; ++f) s += x[i * d + f] * z[f * n_classes + c];
        p.at2(i, c) = s;
        mx = std::max(mx, s);
      }
      real Z = 0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        p.at2(i, c) = std::exp(p.at2(i, c) - mx);
        Z += p.at2(i, c);
      }
      for (std::size_t c = 0; c < n_classes; ++c) p.at2(i, c) /= Z;
    }
    // grad = (1/n) xᵀ(p − y) + λ z
    real gmax = 0;
    for (std::size_t f = 0; f < d; ++f)
      for (std::size_t c = 0; c < n_classes; ++c) {
        real s = 0;
        for (std::size_t i = 0; i < n; ++i)
          s += x[i * d + f] * (p.at2(i, c) - y.at2(i, c));
        const real g = s / static_cast<real>(n) + lambda * z[f * n_classes + c];
        grad[f * n_classes + c] = g;
        gmax = std::max(gmax, std::abs(g));
      }
    if (gmax < tol) {
      w = z;
      break;
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      const real w_new = z[k] - step * grad[k];
      z[k] = w_new + beta * (w_new - w_prev[k]);
      w_prev[k] = w_new;
      w[k] = w_new;
    }
  }
  return w;
}

inline real logreg_accuracy(const Tensor& w, const Tensor& x, const std::vector<int>& labels,
                            std::size_t n_classes) {
  const std::size_t n = labels.size(), d = x.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    real best_s = -1e300;
    for (std::size_t c = 0; c < n_classes; ++c) {
      real s = 0;
      for (std::size_t f = 0; f < d; ++f) s += x[i * d + f] * w[f * n_classes + c];
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<real>(correct) / static_cast<real>(n);
}

inline Tensor l2_normalize_copy(const Tensor& x) {
  Tensor out = x;
  const std::size_t d = x.cols(), n = x.size() / d;
  for (std::size_t i = 0; i < n; ++i) {
    real s = 0;
    for (std::size_t c = 0; c < d; ++c) s += x[i * d + c] * x[i * d + c];
    const real inv = 1.0 / std::max(std::sqrt(s), real(1e-12));
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] *= inv;
  }
  return out;
}

/// Appends a constant bias column.
inline Tensor with_bias(const Tensor& x) {
  const std::size_t d = x.cols(), n = x.size() / d;
  Tensor out({n, d + 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) out.at2(i, c) = x[i * d + c];
    out.at2(i, d) = 1.0;
  }
  return out;
}

}  // namespace detail

/// Low-shot protocol: per split, sample images_per_class examples of every
/// class, L2-normalize features and subtract the train-subset mean (train
/// statistics applied to both partitions), fit logistic regression per
/// lambda, take the best-lambda test accuracy; aggregate across splits.
inline LowShotResult low_shot_eval(const FeatureTable& train_pool, const FeatureTable& test,
                                   const LowShotSpec& spec) {
  spec.validate();
  check(train_pool.n() > 0 && test.n() > 0, "low_shot_eval: empty table");
  check(train_pool.dim() == test.dim(), "low_shot_eval: feature width mismatch");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train_pool.n(); ++i) by_class[train_pool.labels[i]].push_back(i);
  check(by_class.size() >= 2, "low_shot_eval: need at least 2 classes");
  for (const auto& [cls, idx] : by_class)
    check(idx.size() >= spec.images_per_class,
          "low_shot_eval: class " + std::to_string(cls) + " has " +
              std::to_string(idx.size()) + " examples, fewer than images_per_class=" +
              std::to_string(spec.images_per_class));
  const std::size_t n_classes = detail::count_classes(train_pool.labels, test.labels);

  const auto grid = lambda_grid(spec.lambda_points);
  Tensor test_norm = detail::l2_normalize_copy(test.features);

  LowShotResult result;
  result.normalization_ops = {"l2_normalize", "subtract_train_mean"};
  const std::size_t d = train_pool.dim();
  for (std::size_t split = 0; split < spec.n_splits; ++split) {
    std::vector<std::size_t> chosen;
    for (const auto& [cls, idx] : by_class) {
      Rng r = Rng::derive(spec.seed, std::uint64_t(0x105407), split,
                          static_cast<std::uint64_t>(cls));
      for (std::size_t pick : r.sample_without_replacement(idx.size(), spec.images_per_class))
        chosen.push_back(idx[pick]);
    }
    std::sort(chosen.begin(), chosen.end());

    Tensor train_x({chosen.size(), d});
    std::vector<int> train_y(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c)
        train_x.at2(i, c) = train_pool.features[chosen[i] * d + c];
      train_y[i] = train_pool.labels[chosen[i]];
    }
    train_x = detail::l2_normalize_copy(train_x);
    Tensor mean({1, d});
    for (std::size_t c = 0; c < d; ++c) {
      real s = 0;
      for (std::size_t i = 0; i < chosen.size(); ++i) s += train_x.at2(i, c);
      mean[c] = s / static_cast<real>(chosen.size());
    }
    Tensor split_test = test_norm;
    for (std::size_t i = 0; i < chosen.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) train_x.at2(i, c) -= mean[c];
    for (std::size_t i = 0; i < test.n(); ++i)
      for (std::size_t c = 0; c < d; ++c) split_test[i * d + c] -= mean[c];

    for (std::size_t c = 0; c < d; ++c) {
      real s = 0;
      for (std::size_t i = 0; i < chosen.size(); ++i) s += train_x.at2(i, c);
      result.max_abs_train_mean =
          std::max(result.max_abs_train_mean, std::abs(s / static_cast<real>(chosen.size())));
    }

    Tensor train_b = detail::with_bias(train_x);
    Tensor test_b = detail::with_bias(split_test);
    real best_acc = 0, best_lambda = grid.front();
    for (real lambda : grid) {
      Tensor w = detail::fit_logreg(train_b, train_y, n_classes, lambda);
      const real acc = detail::logreg_accuracy(w, test_b, test.labels, n_classes);
      if (acc > best_acc) {
        best_acc = acc;
        best_lambda = lambda;
      }
    }
    result.per_split.push_back(best_acc);
    result.best_lambda_per_split.push_back(best_lambda);
  }

  real sum = 0;
  for (real a : result.per_split) sum += a;
  result.mean_accuracy = sum / static_cast<real>(result.per_split.size());
  real var = 0;
  for (real a : result.per_split) var += (a - result.mean_accuracy) * (a - result.mean_accuracy);
  result.stdev = result.per_split.size() > 1
                     ? std::sqrt(var / static_cast<real>(result.per_split.size() - 1))
                     : 0.0;
  return result;
}

}  // namespace rob
