// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rob/data/multicrop.hpp"
#include "rob/models/bundle.hpp"
#include "rob/objectives/objectives.hpp"
#include "rob/train/metrics.hpp"
#include "rob/train/optimizer.hpp"
#include "rob/train/schedule.hpp"

namespace rob {

/// Baseline joint-embedding recipe (the teacher factory): EMA teacher,
/// logit centering, temperature sharpening, cross-view pairing.
struct BaselineSSLConfig {
  ScheduleSpec ema_momentum_schedule = ScheduleSpec::constant_of(0.99, 1);
  real center_momentum = 0.9;
  real teacher_temp = 0.04;
  real student_temp = 0.1;
  bool centering_enabled = true;

  void validate() const {
    check_config(teacher_temp > 0 && student_temp > 0,
                 "BaselineSSLConfig: temperatures must be positive");
    check_config(center_momentum >= 0 && center_momentum < 1,
                 "BaselineSSLConfig: center_momentum must be in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const BaselineSSLConfig& c) {
  j = {{"ema_momentum_schedule", c.ema_momentum_schedule},
       {"center_momentum", c.center_momentum},
       {"teacher_temp", c.teacher_temp},
       {"student_temp", c.student_temp},
       {"centering_enabled", c.centering_enabled}};
}

inline void from_json(const nlohmann::json& j, BaselineSSLConfig& c) {
  if (j.contains("ema_momentum_schedule"))
    c.ema_momentum_schedule = j.at("ema_momentum_schedule").get<ScheduleSpec>();
  c.center_momentum = j.value("center_momentum", c.center_momentum);
  c.teacher_temp = j.value("teacher_temp", c.teacher_temp);
  c.student_temp = j.value("student_temp", c.student_temp);
  c.centering_enabled = j.value("centering_enabled", c.centering_enabled);
}

/// Self-contained baseline trainer. The teacher starts as a copy of the
/// student and trails it by EMA; disabling centering demonstrates collapse.
class BaselineTrainer {
public:
  BaselineTrainer(ModelBundle student, BaselineSSLConfig cfg, OptimSpec optim)
      : cfg_(cfg), student_(std::move(student)) {
    cfg_.validate();
    teacher_ = student_.clone();
    teacher_.role = "teacher";
    teacher_.set_frozen(true);
    center_ = Tensor({1, student_.head.config().n_prototypes});
    opt_ = Optimizer(optim, student_.trainable_params());
  }

  const ModelBundle& teacher() const { return teacher_; }
  ModelBundle& student() { return student_; }
  const Tensor& center() const { return center_; }
  Optimizer& optimizer() { return opt_; }

  /// Teacher distribution for one already-augmented view (centered,
  /// sharpened). No gradient.
  Tensor teacher_dist(const Tensor& view) const {
    NoGradGuard ng;
    auto out = teacher_.encoder.forward(view, {});
    Tensor logits = teacher_.head.logits(out.global_token)->value;
    return dist_from_logits(logits);
  }

  /// One optimization step over a batch of view sets. Returns the loss.
  real step(const std::vector<ViewSet>& batch, std::size_t step_idx) {
    check(!batch.empty(), "baseline_ssl_step: empty batch");
    check_architecture_match();

    std::vector<NodePtr> terms;
    Tensor logit_sum({1, center_.cols()});
    std::size_t logit_rows = 0;

    for (const auto& vs : batch) {
      check(vs.n_views() >= 2, "baseline_ssl_step: need at least the 2 large views");
      Tensor teacher_rows({2, center_.cols()});
      {
        NoGradGuard ng;
        for (std::size_t v = 0; v < 2; ++v) {
          auto out = teacher_.encoder.forward(vs.views[v], {});
          Tensor logits = teacher_.head.logits(out.global_token)->value;
          for (std::size_t k = 0; k < logits.size(); ++k) {
            logit_sum[k] += logits[k];
            teacher_rows.at2(v, k) = logits[k];
          }
          ++logit_rows;
        }
      }
      for (std::size_t v = 0; v < 2; ++v) {
        Tensor row({1, center_.cols()});
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = teacher_rows.at2(v, k);
        Tensor d = dist_from_logits(row);
        for (std::size_t k = 0; k < row.size(); ++k) teacher_rows.at2(v, k) = d[k];
      }

      std::vector<NodePtr> student_rows;
      EncodeOptions opt;
      opt.training = true;
      for (const auto& view : vs.views) {
        auto out = student_.encoder.forward(view, opt);
        student_rows.push_back(out.global_token);
      }
      NodePtr feats = concat_rows(student_rows);
      NodePtr dists = student_.head.forward(feats, cfg_.student_temp);

      DistillTargets targets;
      targets.teacher_dists = std::move(teacher_rows);
      StudentOutputs outputs;
      outputs.dists = dists;
      ViewMatchPolicy cross{ViewMatchPolicy::Mode::cross};
      terms.push_back(rob_dino_loss(targets, outputs, cross, /*per_pair_mean=*/true));
    }

    NodePtr loss = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
    loss = scale(loss, 1.0 / static_cast<real>(terms.size()));

    student_.zero_grad();
    backward(loss);
    const real lr = schedule_value(opt_.spec().lr_schedule, step_idx);
    const real wd = schedule_value(opt_.spec().wd_schedule, step_idx);
    opt_.step(lr, wd);

    ema_update(schedule_value(cfg_.ema_momentum_schedule,
                              std::min(step_idx, cfg_.ema_momentum_schedule.total_steps - 1)));
    if (cfg_.centering_enabled) update_center(logit_sum, logit_rows);
    return loss->value[0];
  }

private:
  Tensor dist_from_logits(const Tensor& logits) const {
    Tensor d = logits;
    real mx = -1e300;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (cfg_.centering_enabled) d[k] -= center_[k];
      d[k] /= cfg_.teacher_temp;
      mx = std::max(mx, d[k]);
    }
    real Z = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      d[k] = std::exp(d[k] - mx);
      Z += d[k];
    }
    for (std::size_t k = 0; k < d.size(); ++k) d[k] /= Z;
    return d;
  }

  void check_architecture_match() const {
    const auto& sp = student_.encoder.params();
    const auto& tp = teacher_.encoder.params();
    check(sp.size() == tp.size() &&
              student_.head.params().size() == teacher_.head.params().size(),
          "baseline_ssl_step: architecture mismatch between EMA pair");
  }

  void ema_update(real m) {
    check(m >= 0 && m <= 1, "baseline_ssl_step: ema momentum out of [0,1]");
    auto blend = [m](const ParamStore& src, const ParamStore& dst) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        const Tensor& s = src.node(i)->value;
        Tensor& t = dst.node(i)->value;
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = m * t[k] + (1.0 - m) * s[k];
      }
    };
    blend(student_.encoder.params(), teacher_.encoder.params());
    blend(student_.head.params(), teacher_.head.params());
  }

  void update_center(const Tensor& logit_sum, std::size_t rows) {
    if (rows == 0) return;
    for (std::size_t k = 0; k < center_.size(); ++k)
      center_[k] = cfg_.center_momentum * center_[k] +
                   (1.0 - cfg_.center_momentum) * logit_sum[k] / static_cast<real>(rows);
  }

  BaselineSSLConfig cfg_;
  ModelBundle student_;
  ModelBundle teacher_;
  Tensor center_;
  Optimizer opt_;
};

}  // namespace rob
