// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rob/core/graph.hpp"
#include "rob/data/patch_mask.hpp"

namespace rob {

constexpr real kLogClampEps = 1e-12;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ViewMatchPolicy {
  enum class Mode { identical, cross };
  Mode mode = Mode::identical;

  std::string name() const { return mode == Mode::identical ? "identical" : "cross"; }
  static Mode parse(const std::string& s) {
    if (s == "identical") return Mode::identical;
    if (s == "cross") return Mode::cross;
    throw ConfigError("unknown view-match policy: " + s);
  }
};

enum class DistillMethod { dino, ibot, swav, msn };

inline std::string method_name(DistillMethod m) {
  switch (m) {
    case DistillMethod::dino: return "dino";
    case DistillMethod::ibot: return "ibot";
    case DistillMethod::swav: return "swav";
    default: return "msn";
  }
}

inline DistillMethod parse_method(const std::string& s) {
  if (s == "dino") return DistillMethod::dino;
  if (s == "ibot") return DistillMethod::ibot;
  if (s == "swav") return DistillMethod::swav;
  if (s == "msn") return DistillMethod::msn;
  throw ConfigError("unknown distillation method: " + s);
}

struct DistillObjective {
  DistillMethod method = DistillMethod::dino;
  real teacher_temp = 0.07;
  real student_temp = 0.1;
  real lambda1 = 1.0;  // weight of the view-level term (ibot)
  real lambda2 = 1.0;  // weight of the patch-level term (ibot)
  ViewMatchPolicy policy;
  bool anti_collapse_enabled = false;
  bool per_pair_mean = false;  // ablation: mean over pairs instead of 1/N

  void validate() const {
    check_config(teacher_temp > 0.0 && student_temp > 0.0,
                 "DistillObjective: temperatures must be positive");
    check_config(!anti_collapse_enabled,
                 "DistillObjective: anti-collapse mechanisms are removed in RoB");
  }
};

/// Frozen-teacher targets. Plain tensors by contract: the teacher forward
/// runs without gradients, nothing here enters the tape.
struct DistillTargets {
  Tensor teacher_dists;  // [2, K]
  std::optional<std::vector<Tensor>> teacher_patch_dists;  // per large view, [P, K]
};

/// Student branch outputs, gradient-carrying.
struct StudentOutputs {
  NodePtr dists;  // [N, K], all views
  std::optional<std::vector<NodePtr>> patch_dists;  // per large view, masked rows only [N_mask, K]
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// H(target, pred) = −Σ_k target_k · log(max(pred_k, ε)).
inline real cross_entropy(const Tensor& target, const Tensor& pred) {
  check(target.size() == pred.size(), "cross_entropy: dimension mismatch");
  real s = 0;
  for (std::size_t k = 0; k < target.size(); ++k)
    s -= target[k] * std::log(std::max(pred[k], kLogClampEps));
  return s;
}

inline real entropy(const Tensor& dist) { return cross_entropy(dist, dist); }

inline real mean_row_entropy(const Tensor& dists) {
  const std::size_t K = dists.cols(), n = dists.size() / K;
  real s = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const real p = dists[r * K + k];
      s -= p * std::log(std::max(p, kLogClampEps));
    }
  }
  return s / static_cast<real>(n);
}

/// Graph-domain sum of row-wise cross entropies: Σ_r H(targets_r, preds_r).
/// Targets are constants.
inline NodePtr cross_entropy_rows_sum(Tensor targets, NodePtr preds) {
  check(targets.size() == preds->value.size() && targets.cols() == preds->value.cols(),
        "cross_entropy: dimension mismatch");
  return scale(sum_all(mul(constant(std::move(targets)), log_clamped(preds, kLogClampEps))),
               -1.0);
}

// ---------------------------------------------------------------------------
// View pairing
// ---------------------------------------------------------------------------

/// Pairs (teacher_view, student_view). Large views pair by the policy;
/// every small view targets both teacher views.
inline std::vector<std::pair<std::size_t, std::size_t>> view_pairs(std::size_t n_large,
                                                                   std::size_t n_small,
                                                                   ViewMatchPolicy policy) {
  check(n_large == 2, "view_pairs: exactly 2 large views required");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(2 + 2 * n_small);
  if (policy.mode == ViewMatchPolicy::Mode::identical) {
    pairs.emplace_back(0, 0);
    pairs.emplace_back(1, 1);
  } else {
    pairs.emplace_back(1, 0);
    pairs.emplace_back(0, 1);
  }
  for (std::size_t i = 2; i < 2 + n_small; ++i) {
    pairs.emplace_back(0, i);
    pairs.emplace_back(1, i);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// RoB losses
// ---------------------------------------------------------------------------

/// Eq.-1-style loss: (1/N) Σ over view pairs of H(teacher row, student row).
/// The 1/N normalization is literal (N = number of student views, not the
/// number of pairs); per_pair_mean switches to averaging over pairs.
inline NodePtr rob_dino_loss(const DistillTargets& targets, const StudentOutputs& student,
                             ViewMatchPolicy policy, bool per_pair_mean = false) {
  const Tensor& T = targets.teacher_dists;
  check(T.ndim() == 2 && T.dim(0) == 2, "rob_dino_loss: teacher_dists must be [2, K]");
  const std::size_t K = T.dim(1);
  const std::size_t N = student.dists->value.dim(0);
  check(N >= 2, "rob_dino_loss: student must provide at least the 2 large views");
  check(student.dists->value.cols() == K, "rob_dino_loss: K mismatch");

  const auto pairs = view_pairs(2, N - 2, policy);
  Tensor teacher_sel({pairs.size(), K});
  std::vector<std::size_t> student_rows(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (std::size_t k = 0; k < K; ++k) teacher_sel.at2(p, k) = T.at2(pairs[p].first, k);
    student_rows[p] = pairs[p].second;
  }
  NodePtr student_sel = gather_rows(student.dists, student_rows);
  NodePtr total = cross_entropy_rows_sum(std::move(teacher_sel), student_sel);
  const real denom = per_pair_mean ? static_cast<real>(pairs.size()) : static_cast<real>(N);
  return scale(total, 1.0 / denom);
}

/// Eq. 2: λ1·L_DINO + (λ2 / (2·N_mask)) Σ_{i∈{0,1}} Σ_{p masked} H(z^T_{i,p}, z^S_{i,p}).
/// Teacher patch targets are rows of the unmasked teacher forward; student
/// predictions cover exactly the masked positions, in mask index order.
inline NodePtr rob_ibot_loss(const DistillTargets& targets, const StudentOutputs& student,
                             const std::vector<PatchMask>& masks, real lambda1, real lambda2,
                             ViewMatchPolicy policy, bool per_pair_mean = false) {
  NodePtr view_term = rob_dino_loss(targets, student, policy, per_pair_mean);
  if (lambda2 == 0.0) return scale(view_term, lambda1);

  check(targets.teacher_patch_dists.has_value() && targets.teacher_patch_dists->size() == 2,
        "rob_ibot_loss: teacher patch distributions required for both large views");
  check(student.patch_dists.has_value() && student.patch_dists->size() == 2,
        "rob_ibot_loss: student patch predictions required for both large views");
  check(masks.size() == 2, "rob_ibot_loss: one mask per large view required");
  const std::size_t n_mask = masks[0].masked_count();
  check(masks[1].masked_count() == n_mask,
        "rob_ibot_loss: mask/prediction index mismatch (unequal masked counts)");
  check(n_mask > 0, "rob_ibot_loss: empty masks with lambda2 != 0");

  const std::size_t K = targets.teacher_dists.dim(1);
  std::vector<NodePtr> patch_terms;
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor& tp = (*targets.teacher_patch_dists)[i];
    NodePtr sp = (*student.patch_dists)[i];
    check(tp.ndim() == 2 && tp.dim(0) == masks[i].n_patches && tp.dim(1) == K,
          "rob_ibot_loss: teacher patch dists must be [n_patches, K]");
    const auto idx = masks[i].masked_indices;
    check(sp->value.dim(0) == idx.size() && sp->value.cols() == K,
          "rob_ibot_loss: mask/prediction index mismatch");
    Tensor tsel({idx.size(), K});
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t k = 0; k < K; ++k) tsel.at2(r, k) = tp.at2(idx[r], k);
    patch_terms.push_back(cross_entropy_rows_sum(std::move(tsel), sp));
  }
  NodePtr patch_sum = add(patch_terms[0], patch_terms[1]);
  return add(scale(view_term, lambda1),
             scale(patch_sum, lambda2 / (2.0 * static_cast<real>(n_mask))));
}

/// RoB-MSN shares the DINO formula; the masking difference lives upstream,
/// in how the student views were encoded (patch dropping).
inline NodePtr rob_msn_loss(const DistillTargets& targets,
                            const StudentOutputs& student_masked_outputs,
                            ViewMatchPolicy policy, bool per_pair_mean = false) {
  return rob_dino_loss(targets, student_masked_outputs, policy, per_pair_mean);
}

/// RoB-SwAV is the DINO loss once Sinkhorn-Knopp is removed; requesting any
/// anti-collapse processing is a configuration error.
inline NodePtr rob_swav_loss(const DistillTargets& targets, const StudentOutputs& student,
                             ViewMatchPolicy policy, bool anti_collapse_enabled = false,
                             bool per_pair_mean = false) {
  check_config(!anti_collapse_enabled,
               "rob_swav_loss: Sinkhorn-Knopp is removed; anti_collapse must stay disabled");
  return rob_dino_loss(targets, student, policy, per_pair_mean);
}

/// Dispatch on the configured method. iBOT requires masks.
inline NodePtr rob_loss(const DistillObjective& obj, const DistillTargets& targets,
                        const StudentOutputs& student,
                        const std::vector<PatchMask>* masks = nullptr) {
  obj.validate();
  switch (obj.method) {
    case DistillMethod::dino:
      return rob_dino_loss(targets, student, obj.policy, obj.per_pair_mean);
    case DistillMethod::ibot:
      check(masks != nullptr, "rob_loss: ibot requires patch masks");
      return rob_ibot_loss(targets, student, *masks, obj.lambda1, obj.lambda2, obj.policy,
                           obj.per_pair_mean);
    case DistillMethod::swav:
      return rob_swav_loss(targets, student, obj.policy, obj.anti_collapse_enabled,
                           obj.per_pair_mean);
    default:
      return rob_msn_loss(targets, student, obj.policy, obj.per_pair_mean);
  }
}

}  // namespace rob
