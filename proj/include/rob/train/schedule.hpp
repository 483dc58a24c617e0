// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "rob/core/tensor.hpp"

namespace rob {

/// Piecewise scalar schedule: linear warmup from start_value to peak_value,
/// then a half cosine from peak_value to end_value. Covers increasing ramps
/// (weight decay) as well as decays (learning rate).
struct ScheduleSpec {
  enum class Kind { cosine_with_warmup, constant };
  Kind kind = Kind::cosine_with_warmup;
  std::size_t warmup_steps = 0;
  real start_value = 0.0;
  real peak_value = 0.0;
  real end_value = 0.0;
  std::size_t total_steps = 1;

  static ScheduleSpec constant_of(real v, std::size_t total) {
    ScheduleSpec s;
    s.kind = Kind::constant;
    s.peak_value = v;
    s.total_steps = total;
    return s;
  }

  static ScheduleSpec cosine(real peak, real end, std::size_t total, std::size_t warmup = 0,
                             real start = 0.0) {
    ScheduleSpec s;
    s.warmup_steps = warmup;
    s.start_value = start;
    s.peak_value = peak;
    s.end_value = end;
    s.total_steps = total;
    return s;
  }

  void validate() const {
    check_config(total_steps >= 1, "ScheduleSpec: total_steps must be positive");
    check_config(warmup_steps <= total_steps, "ScheduleSpec: warmup exceeds total_steps");
  }
};

inline real schedule_value(const ScheduleSpec& spec, std::size_t step) {
  spec.validate();
  check(step < spec.total_steps, "schedule_value: step " + std::to_string(step) +
                                     " out of range [0, " + std::to_string(spec.total_steps) + ")");
  if (spec.kind == ScheduleSpec::Kind::constant) return spec.peak_value;
  if (step < spec.warmup_steps) {
    const real t = static_cast<real>(step) / static_cast<real>(spec.warmup_steps);
    return spec.start_value + (spec.peak_value - spec.start_value) * t;
  }
  const std::size_t span = spec.total_steps - spec.warmup_steps;
  if (span == 0) return spec.peak_value;
  const real t = static_cast<real>(step - spec.warmup_steps) / static_cast<real>(span);
  return spec.end_value +
         0.5 * (spec.peak_value - spec.end_value) * (1.0 + std::cos(std::numbers::pi_v<real> * t));
}

inline void to_json(nlohmann::json& j, const ScheduleSpec& s) {
  j = {{"kind", s.kind == ScheduleSpec::Kind::constant ? "constant" : "cosine_with_warmup"},
       {"warmup_steps", s.warmup_steps},
       {"start_value", s.start_value},
       {"peak_value", s.peak_value},
       {"end_value", s.end_value},
       {"total_steps", s.total_steps}};
}

inline void from_json(const nlohmann::json& j, ScheduleSpec& s) {
  const std::string kind = j.value("kind", "cosine_with_warmup");
  if (kind == "constant")
    s.kind = ScheduleSpec::Kind::constant;
  else if (kind == "cosine_with_warmup")
    s.kind = ScheduleSpec::Kind::cosine_with_warmup;
  else
    throw ConfigError("unknown schedule kind: " + kind);
  s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
  s.start_value = j.value("start_value", s.start_value);
  s.peak_value = j.value("peak_value", s.peak_value);
  s.end_value = j.value("end_value", s.end_value);
  s.total_steps = j.value("total_steps", s.total_steps);
}

}  // namespace rob
