// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "rob/core/graph.hpp"
#include "rob/core/rng.hpp"
#include "rob/eval/features.hpp"
#include "rob/models/encoder.hpp"
#include "rob/objectives/objectives.hpp"
#include "rob/train/optimizer.hpp"

namespace rob {

enum class ProbeHead { linear, bn_linear, two_layer_hardswish };

inline std::string probe_head_name(ProbeHead h) {
  switch (h) {
    case ProbeHead::linear: return "linear";
    case ProbeHead::bn_linear: return "bn_linear";
    default: return "two_layer_hardswish";
  }
}

inline ProbeHead parse_probe_head(const std::string& s) {
  if (s == "linear") return ProbeHead::linear;
  if (s == "bn_linear") return ProbeHead::bn_linear;
  if (s == "two_layer_hardswish") return ProbeHead::two_layer_hardswish;
  throw ConfigError("unknown probe head: " + s);
}

struct ProbeConfig {
  ProbeHead head_variant = ProbeHead::linear;
  std::size_t epochs = 200;
  real lr = 0.05;
  std::size_t hidden_dim = 64;  // two_layer_hardswish
  real dropout = 0.2;           // two_layer_hardswish
  std::uint64_t seed = 0;

  void validate() const {
    check_config(epochs >= 1, "ProbeConfig: epochs must be positive");
    check_config(lr > 0, "ProbeConfig: lr must be positive");
    check_config(dropout >= 0 && dropout < 1, "ProbeConfig: dropout must be in [0,1)");
  }
};

namespace detail {

/// Column mean/std of train features, for the bn_linear standardization.
inline void column_stats(const Tensor& x, Tensor& mean, Tensor& stdev) {
  const std::size_t d = x.cols(), n = x.size() / d;
  mean = Tensor({1, d});
  stdev = Tensor({1, d});
  for (std::size_t c = 0; c < d; ++c) {
    real s = 0;
    for (std::size_t r = 0; r < n; ++r) s += x[r * d + c];
    mean[c] = s / static_cast<real>(n);
  }
  for (std::size_t c = 0; c < d; ++c) {
    real s = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const real v = x[r * d + c] - mean[c];
      s += v * v;
    }
    stdev[c] = std::sqrt(s / static_cast<real>(n) + 1e-8);
  }
}

inline Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& stdev) {
  Tensor out = x;
  const std::size_t d = x.cols(), n = x.size() / d;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (x[r * d + c] - mean[c]) / stdev[c];
  return out;
}

inline std::size_t argmax_row(const Tensor& m, std::size_t row) {
  const std::size_t d = m.cols();
  std::size_t best = 0;
  for (std::size_t c = 1; c < d; ++c)
    if (m[row * d + c] > m[row * d + best]) best = c;
  return best;
}

}  // namespace detail

/// Trains one probe head on frozen features and returns test top-1. The
/// encoder is never touched; only probe parameters receive gradients.
inline real linear_probe(const FeatureTable& train, const FeatureTable& test,
                         const ProbeConfig& cfg) {
  cfg.validate();
  check(train.n() >= 2, "linear_probe: train table too small");
  check(train.dim() == test.dim(), "linear_probe: feature width mismatch");
  {
    std::set<int> classes(train.labels.begin(), train.labels.end());
    check(classes.size() >= 2, "linear_probe: labels span a single class");
  }
  const std::size_t n_classes = detail::count_classes(train.labels, test.labels);
  const std::size_t d = train.dim();

  Tensor train_x = train.features;
  Tensor test_x = test.features;
  if (cfg.head_variant == ProbeHead::bn_linear) {
    Tensor mean, stdev;
    detail::column_stats(train.features, mean, stdev);
    train_x = detail::standardize(train.features, mean, stdev);
    test_x = detail::standardize(test.features, mean, stdev);
  }

  Tensor onehot({train.n(), n_classes});
  for (std::size_t i = 0; i < train.n(); ++i) onehot.at2(i, train.labels[i]) = 1.0;

  Rng rng = Rng::derive(cfg.seed, std::uint64_t(0x9606E));
  auto tn = [&rng](std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.trunc_normal(0.02);
    return t;
  };

  ParamStore params;
  NodePtr w1, b1, w2, b2;
  const bool two_layer = cfg.head_variant == ProbeHead::two_layer_hardswish;
  if (two_layer) {
    w1 = params.add("w1", tn({d, cfg.hidden_dim}));
    b1 = params.add("b1", Tensor({cfg.hidden_dim}));
    w2 = params.add("w2", tn({cfg.hidden_dim, n_classes}));
    b2 = params.add("b2", Tensor({n_classes}));
  } else {
    w1 = params.add("w", tn({d, n_classes}));
    b1 = params.add("b", Tensor({n_classes}));
  }

  auto head_logits = [&](const Tensor& x, bool training, Rng* drop_rng) {
    NodePtr h = constant(x);
    if (!two_layer) return linear(h, w1, b1);
    h = hardswish(linear(h, w1, b1));
    if (training && cfg.dropout > 0) h = dropout(h, cfg.dropout, *drop_rng, true);
    return linear(h, w2, b2);
  };

  OptimSpec ospec;
  ospec.lr_schedule = ScheduleSpec::constant_of(cfg.lr, cfg.epochs);
  ospec.wd_schedule = ScheduleSpec::constant_of(0.0, cfg.epochs);
  Optimizer opt(ospec, params.nodes());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng drop_rng = Rng::derive(cfg.seed, std::uint64_t(0xD60), epoch);
    NodePtr logits = head_logits(train_x, true, &drop_rng);
    NodePtr probs = softmax_rows(logits);
    NodePtr loss = scale(cross_entropy_rows_sum(onehot, probs),
                         1.0 / static_cast<real>(train.n()));
    params.zero_grad();
    backward(loss);
    opt.step(cfg.lr, 0.0);
  }

  NoGradGuard ng;
  Tensor logits = head_logits(test_x, false, nullptr)->value;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.n(); ++i)
    if (static_cast<int>(detail::argmax_row(logits, i)) == test.labels[i]) ++correct;
  return static_cast<real>(correct) / static_cast<real>(test.n());
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

struct ProbeCell {
  ReprChoice repr;
  ProbeHead head;
  real accuracy = 0;
};

struct ProbeSweepResult {
  real best_accuracy = 0;
  ReprChoice best_repr = ReprChoice::last_global;
  ProbeHead best_head = ProbeHead::linear;
  std::vector<ProbeCell> cells;
};

/// Evaluates every compatible (representation, head) combination and
/// reports the max alongside the full grid.
inline ProbeSweepResult probe_sweep(const Encoder& encoder, const Dataset& train_data,
                                    const Dataset& test_data, std::size_t view_size,
                                    const ProbeConfig& base) {
  ProbeSweepResult result;
  const std::vector<ProbeHead> heads{ProbeHead::linear, ProbeHead::bn_linear,
                                     ProbeHead::two_layer_hardswish};
  bool first = true;
  for (ReprChoice repr : compatible_reprs(encoder)) {
    FeatureTable train = extract_features(encoder, train_data, repr, view_size);
    FeatureTable test = extract_features(encoder, test_data, repr, view_size);
    for (ProbeHead head : heads) {
      ProbeConfig cfg = base;
      cfg.head_variant = head;
      ProbeCell cell;
      cell.repr = repr;
      cell.head = head;
      cell.accuracy = linear_probe(train, test, cfg);
      result.cells.push_back(cell);
      if (first || cell.accuracy > result.best_accuracy) {
        result.best_accuracy = cell.accuracy;
        result.best_repr = repr;
        result.best_head = head;
        first = false;
      }
    }
  }
  return result;
}

}  // namespace rob
