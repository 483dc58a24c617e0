// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/graph.hpp"
#include "rob/core/serialize.hpp"
#include "rob/train/schedule.hpp"

namespace rob {

struct OptimSpec {
  enum class Algorithm { adamw, sgd_momentum };
  Algorithm algorithm = Algorithm::adamw;
  ScheduleSpec lr_schedule;
  ScheduleSpec wd_schedule;
  std::size_t batch_size = 8;
  std::optional<real> grad_clip;  // max global grad norm; off by default
  real beta1 = 0.9;
  real beta2 = 0.999;
  real adam_eps = 1e-8;
  real momentum = 0.9;  // sgd_momentum only

  std::string algorithm_name() const {
    return algorithm == Algorithm::adamw ? "adamw" : "sgd_momentum";
  }

  void validate() const {
    check_config(batch_size >= 1, "OptimSpec: batch_size must be positive");
    check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                 "OptimSpec: betas must be in [0,1)");
    if (grad_clip) check_config(*grad_clip > 0, "OptimSpec: grad_clip must be positive");
    lr_schedule.validate();
    wd_schedule.validate();
  }
};

inline void to_json(nlohmann::json& j, const OptimSpec& s) {
  j = {{"algorithm", s.algorithm_name()},
       {"lr_schedule", s.lr_schedule},
       {"wd_schedule", s.wd_schedule},
       {"batch_size", s.batch_size},
       {"beta1", s.beta1},
       {"beta2", s.beta2},
       {"adam_eps", s.adam_eps},
       {"momentum", s.momentum}};
  if (s.grad_clip) j["grad_clip"] = *s.grad_clip;
}

inline void from_json(const nlohmann::json& j, OptimSpec& s) {
  const std::string algo = j.value("algorithm", "adamw");
  if (algo == "adamw")
    s.algorithm = OptimSpec::Algorithm::adamw;
  else if (algo == "sgd_momentum")
    s.algorithm = OptimSpec::Algorithm::sgd_momentum;
  else
    throw ConfigError("unknown optimizer algorithm: " + algo);
  if (j.contains("lr_schedule")) s.lr_schedule = j.at("lr_schedule").get<ScheduleSpec>();
  if (j.contains("wd_schedule")) s.wd_schedule = j.at("wd_schedule").get<ScheduleSpec>();
  s.batch_size = j.value("batch_size", s.batch_size);
  if (j.contains("grad_clip")) s.grad_clip = j.at("grad_clip").get<real>();
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.adam_eps = j.value("adam_eps", s.adam_eps);
  s.momentum = j.value("momentum", s.momentum);
}

/// Gradient-step engine over a fixed parameter list. Weight decay is
/// decoupled (applied directly to the weights, scaled by lr) for both
/// algorithms. A parameter whose grad was never touched this step is
/// treated as having zero gradient.
class Optimizer {
public:
  Optimizer() = default;

  Optimizer(OptimSpec spec, std::vector<NodePtr> params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    slot1_.reserve(params_.size());
    slot2_.reserve(params_.size());
    for (const auto& p : params_) {
      slot1_.push_back(Tensor(p->value.shape()));
      slot2_.push_back(Tensor(p->value.shape()));
    }
  }

  const OptimSpec& spec() const { return spec_; }
  std::size_t t() const { return t_; }

  void step(real lr, real wd) {
    if (spec_.grad_clip) clip_global_norm(*spec_.grad_clip);
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Node& p = *params_[i];
      const bool has_grad = p.grad.size() == p.value.size();
      if (spec_.algorithm == OptimSpec::Algorithm::adamw) {
        Tensor& m = slot1_[i];
        Tensor& v = slot2_[i];
        const real bc1 = 1.0 - std::pow(spec_.beta1, static_cast<real>(t_));
        const real bc2 = 1.0 - std::pow(spec_.beta2, static_cast<real>(t_));
        for (std::size_t k = 0; k < p.value.size(); ++k) {
          const real g = has_grad ? p.grad[k] : 0.0;
          m[k] = spec_.beta1 * m[k] + (1.0 - spec_.beta1) * g;
          v[k] = spec_.beta2 * v[k] + (1.0 - spec_.beta2) * g * g;
          const real mhat = m[k] / bc1;
          const real vhat = v[k] / bc2;
          p.value[k] -= lr * (mhat / (std::sqrt(vhat) + spec_.adam_eps) + wd * p.value[k]);
        }
      } else {
        Tensor& vel = slot1_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
          const real g = has_grad ? p.grad[k] : 0.0;
          vel[k] = spec_.momentum * vel[k] + g;
          p.value[k] -= lr * (vel[k] + wd * p.value[k]);
        }
      }
    }
  }

  void save_state(std::ostream& os) const {
    io::write_string(os, spec_.algorithm_name());
    io::write_u64(os, t_);
    io::write_u64(os, params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      io::write_tensor(os, slot1_[i]);
      io::write_tensor(os, slot2_[i]);
    }
  }

  void load_state(std::istream& is) {
    const std::string algo = io::read_string(is);
    check(algo == spec_.algorithm_name(), "optimizer state: algorithm mismatch");
    t_ = io::read_u64(is);
    const std::uint64_t n = io::read_u64(is);
    check(n == params_.size(), "optimizer state: parameter count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      Tensor a = io::read_tensor(is);
      Tensor b = io::read_tensor(is);
      check(a.same_shape(slot1_[i]) && b.same_shape(slot2_[i]),
            "optimizer state: slot shape mismatch");
      slot1_[i] = std::move(a);
      slot2_[i] = std::move(b);
    }
  }

private:
  void clip_global_norm(real max_norm) {
    real sq = 0;
    for (const auto& p : params_) {
      if (p->grad.size() != p->value.size()) continue;
      for (std::size_t k = 0; k < p->grad.size(); ++k) sq += p->grad[k] * p->grad[k];
    }
    const real norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const real s = max_norm / norm;
    for (const auto& p : params_) {
      if (p->grad.size() != p->value.size()) continue;
      for (std::size_t k = 0; k < p->grad.size(); ++k) p->grad[k] *= s;
    }
  }

  OptimSpec spec_;
  std::vector<NodePtr> params_;
  std::vector<Tensor> slot1_;  // adamw m / sgd velocity
  std::vector<Tensor> slot2_;  // adamw v / unused
  std::size_t t_ = 0;
};

}  // namespace rob
