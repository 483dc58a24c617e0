// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/graph.hpp"
#include "rob/core/rng.hpp"

namespace rob {

struct HeadConfig {
  enum class Variant { ssl_default, mlp, partial };
  Variant variant = Variant::ssl_default;
  std::size_t input_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t bottleneck_dim = 32;  // ssl_default / partial
  std::size_t n_prototypes = 64;    // output distribution size K
  std::size_t mlp_depth = 2;        // linear layers in the trunk

  bool has_prototypes() const { return variant != Variant::mlp; }

  void validate() const {
    check_config(input_dim >= 1 && hidden_dim >= 1 && n_prototypes >= 2,
                 "HeadConfig: dims must be positive, n_prototypes >= 2");
    check_config(mlp_depth >= 1 && mlp_depth <= 3, "HeadConfig: mlp_depth must be in 1..3");
    if (has_prototypes())
      check_config(bottleneck_dim >= 1, "HeadConfig: bottleneck_dim must be positive");
  }

  std::string variant_name() const {
    switch (variant) {
      case Variant::ssl_default: return "ssl_default";
      case Variant::mlp: return "mlp";
      default: return "partial";
    }
  }

  static Variant parse_variant(const std::string& s) {
    if (s == "ssl_default") return Variant::ssl_default;
    if (s == "mlp") return Variant::mlp;
    if (s == "partial") return Variant::partial;
    throw ConfigError("unknown head variant: " + s);
  }
};

inline void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"variant", c.variant_name()},
       {"input_dim", c.input_dim},
       {"hidden_dim", c.hidden_dim},
       {"bottleneck_dim", c.bottleneck_dim},
       {"n_prototypes", c.n_prototypes},
       {"mlp_depth", c.mlp_depth}};
}

inline void from_json(const nlohmann::json& j, HeadConfig& c) {
  c.variant = HeadConfig::parse_variant(j.value("variant", "ssl_default"));
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.bottleneck_dim = j.value("bottleneck_dim", c.bottleneck_dim);
  c.n_prototypes = j.value("n_prototypes", c.n_prototypes);
  c.mlp_depth = j.value("mlp_depth", c.mlp_depth);
}

/// Projection from encoder embeddings to a distribution over K prototypes.
///
/// ssl_default / partial: MLP trunk to a bottleneck, L2-normalized, matched
/// against row-normalized prototype vectors. mlp: plain MLP producing K
/// logits directly. partial differs from ssl_default only in that the
/// prototype matrix is copied from a teacher and frozen.
class ProjectionHead {
public:
  ProjectionHead() = default;

  ProjectionHead(const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    auto tn = [&rng](std::vector<std::size_t> shape) {
      Tensor t(std::move(shape));
      for (auto& v : t.vec()) v = rng.trunc_normal(0.02);
      return t;
    };
    const std::size_t out_dim = cfg_.has_prototypes() ? cfg_.bottleneck_dim : cfg_.n_prototypes;
    std::size_t in = cfg_.input_dim;
    for (std::size_t layer = 0; layer < cfg_.mlp_depth; ++layer) {
      const bool last = layer + 1 == cfg_.mlp_depth;
      const std::size_t out = last ? out_dim : cfg_.hidden_dim;
      const std::string p = "trunk" + std::to_string(layer) + ".";
      Layer l;
      l.w = params_.add(p + "w", tn({in, out}));
      l.b = params_.add(p + "b", Tensor({out}));
      trunk_.push_back(l);
      in = out;
    }
    if (cfg_.has_prototypes())
      prototypes_ = params_.add("prototypes", tn({cfg_.n_prototypes, cfg_.bottleneck_dim}));
  }

  const HeadConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  NodePtr prototypes() const { return prototypes_; }

  /// Pre-temperature logits, [n, K].
  NodePtr logits(NodePtr features) const {
    check(features->value.cols() == cfg_.input_dim,
          "head: feature dim " + std::to_string(features->value.cols()) +
              " != input_dim " + std::to_string(cfg_.input_dim));
    NodePtr h = features;
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
      h = linear(h, trunk_[i].w, trunk_[i].b);
      if (i + 1 < trunk_.size()) h = gelu(h);
    }
    if (!cfg_.has_prototypes()) return h;
    return matmul(l2_normalize_rows(h), l2_normalize_rows(prototypes_), false, true);
  }

  /// Temperature-softmaxed distributions, rows summing to one.
  NodePtr forward(NodePtr features, real temperature) const {
    check_config(temperature > 0.0, "head_forward: temperature must be positive");
    return softmax_rows(scale(logits(features), 1.0 / temperature));
  }

  ProjectionHead clone() const {
    Rng dummy(0);
    ProjectionHead out(cfg_, dummy);
    out.params_.copy_values_from(params_);
    if (cfg_.variant == HeadConfig::Variant::partial) out.params_.freeze("prototypes");
    return out;
  }

private:
  struct Layer {
    NodePtr w, b;
  };

  HeadConfig cfg_;
  ParamStore params_;
  std::vector<Layer> trunk_;
  NodePtr prototypes_;
};

inline ProjectionHead build_head(const HeadConfig& config, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, std::uint64_t(0x4EAD));
  return ProjectionHead(config, rng);
}

inline NodePtr head_forward(const ProjectionHead& head, NodePtr features, real temperature) {
  return head.forward(features, temperature);
}

/// Builds a student head against a teacher head. ssl_default copies the
/// teacher's layout at the student's input width with fresh weights; mlp is
/// a plain MLP onto the same K outputs; partial additionally reuses the
/// teacher's prototype matrix verbatim and freezes it.
inline ProjectionHead build_student_head(const ProjectionHead& teacher,
                                         HeadConfig::Variant variant, std::size_t input_dim,
                                         std::uint64_t seed, std::size_t mlp_depth = 0) {
  HeadConfig cfg = teacher.config();
  cfg.variant = variant;
  cfg.input_dim = input_dim;
  if (mlp_depth > 0) cfg.mlp_depth = mlp_depth;
  if (variant == HeadConfig::Variant::partial) {
    check_config(teacher.config().has_prototypes(),
                 "build_student_head: partial head needs a teacher with prototypes");
    cfg.bottleneck_dim = teacher.config().bottleneck_dim;
  }
  cfg.n_prototypes = teacher.config().n_prototypes;
  ProjectionHead head = build_head(cfg, seed);
  if (variant == HeadConfig::Variant::partial) {
    head.prototypes()->value = teacher.prototypes()->value;
    head.params().freeze("prototypes");
  }
  return head;
}

}  // namespace rob
