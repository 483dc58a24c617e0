// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rob/data/image.hpp"
#include "rob/data/multicrop.hpp"
#include "rob/models/bundle.hpp"
#include "rob/objectives/objectives.hpp"
#include "rob/train/metrics.hpp"
#include "rob/train/optimizer.hpp"

namespace rob {

namespace stream {
// Sub-stream tags for stateless rng derivation; every per-step random draw
// is a pure function of (seed, tag, step, ...), which is what makes resume
// exact.
constexpr std::uint64_t kBatch = 0xB47C8;
constexpr std::uint64_t kCrop = 0xC60F;
constexpr std::uint64_t kMask = 0x3A5C;
constexpr std::uint64_t kDropPath = 0xD60F;
}  // namespace stream

/// Distribution of one view under a frozen bundle (no gradient, no
/// centering; the RoB teacher path).
inline Tensor bundle_dist(const ModelBundle& b, const Tensor& view, real temperature) {
  NoGradGuard ng;
  auto out = b.encoder.forward(view, {});
  return b.head.forward(out.global_token, temperature)->value;
}

/// Teacher forward for one view of a ViewSet. Enforces the large-crop
/// contract: the frozen teacher only ever processes views 0 and 1.
inline Tensor teacher_view_dist(const ModelBundle& teacher, const ViewSet& vs,
                                std::size_t view_idx, real temperature) {
  check(view_idx < 2, "teacher only processes the 2 large crops");
  check(vs.n_views() >= 2, "teacher_view_dist: view set lacks large views");
  return bundle_dist(teacher, vs.views[view_idx], temperature);
}

/// Frozen-teacher targets for one view set; patch distributions (iBOT) come
/// from the unmasked teacher forward over all positions.
inline DistillTargets compute_targets(const ModelBundle& teacher, const ViewSet& vs,
                                      const DistillObjective& obj) {
  check(teacher.frozen, "compute_targets: teacher must be frozen");
  DistillTargets out;
  const std::size_t K = teacher.head.config().n_prototypes;
  out.teacher_dists = Tensor({2, K});
  NoGradGuard ng;
  for (std::size_t v = 0; v < 2; ++v) {
    Tensor d = teacher_view_dist(teacher, vs, v, obj.teacher_temp);
    for (std::size_t k = 0; k < K; ++k) out.teacher_dists.at2(v, k) = d[k];
  }
  if (obj.method == DistillMethod::ibot) {
    check(teacher.encoder.is_transformer(),
          "compute_targets: ibot patch targets require a patch_transformer teacher");
    std::vector<Tensor> patch_dists;
    for (std::size_t v = 0; v < 2; ++v) {
      auto enc = teacher.encoder.forward(vs.views[v], {});
      patch_dists.push_back(teacher.head.forward(enc.patch_tokens, obj.teacher_temp)->value);
    }
    out.teacher_patch_dists = std::move(patch_dists);
  }
  return out;
}

/// Student forward over all views. iBOT: large views are encoded with
/// replace-mode masks and patch predictions are taken at masked positions.
/// MSN: every view is encoded with a drop-mode mask. Masks are sampled by
/// the caller and arrive through `masks` (iBOT: 2 entries; MSN: one per
/// view; others: empty).
inline StudentOutputs student_forward(const ModelBundle& student, const ViewSet& vs,
                                      const DistillObjective& obj,
                                      const std::vector<PatchMask>& masks, Rng* drop_path_rng) {
  StudentOutputs out;
  std::vector<NodePtr> globals;
  std::vector<NodePtr> patch_preds;
  for (std::size_t v = 0; v < vs.n_views(); ++v) {
    EncodeOptions opt;
    opt.training = true;
    opt.rng = drop_path_rng;
    if (obj.method == DistillMethod::ibot && v < 2) {
      opt.mask = &masks.at(v);
      opt.mask_mode = MaskMode::replace;
    } else if (obj.method == DistillMethod::msn && !masks.empty()) {
      const PatchMask& m = masks.at(v);
      if (m.masked_count() > 0) {
        opt.mask = &m;
        opt.mask_mode = MaskMode::drop;
      }
    }
    auto enc = student.encoder.forward(vs.views[v], opt);
    globals.push_back(enc.global_token);
    if (obj.method == DistillMethod::ibot && v < 2) {
      const auto& idx = masks.at(v).masked_indices;
      check(!idx.empty(), "student_forward: ibot mask selected no patches");
      patch_preds.push_back(
          student.head.forward(gather_rows(enc.patch_tokens, idx), obj.student_temp));
    }
  }
  out.dists = student.head.forward(concat_rows(globals), obj.student_temp);
  if (!patch_preds.empty()) out.patch_dists = std::move(patch_preds);
  return out;
}

// ---------------------------------------------------------------------------
// Train state
// ---------------------------------------------------------------------------

struct TrainState {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  ModelBundle student;
  ModelBundle teacher;
  Optimizer optimizer;
  MetricsLog metrics;

  void init_optimizer(const OptimSpec& spec) {
    optimizer = Optimizer(spec, student.trainable_params());
  }
};

namespace detail {
constexpr char kStateMagic[] = "ROBSTAT1";
}

inline void save_train_state(const std::string& path, const TrainState& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(detail::kStateMagic, 8);
  io::write_u64(os, st.step);
  io::write_u64(os, st.seed);
  save_bundle_stream(os, st.student);
  save_bundle_stream(os, st.teacher);
  st.optimizer.save_state(os);
  if (!os) throw IoError("short write: " + path);
}

/// Loads a training state; the optimizer is rebuilt over the loaded student
/// parameters with `optim` and its slots restored bit-exactly.
inline TrainState load_train_state(const std::string& path, const OptimSpec& optim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != detail::kStateMagic)
    throw IoError("not a train-state file: " + path);
  TrainState st;
  st.step = io::read_u64(is);
  st.seed = io::read_u64(is);
  st.student = load_bundle_stream(is);
  st.teacher = load_bundle_stream(is);
  st.init_optimizer(optim);
  st.optimizer.load_state(is);
  return st;
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

struct DistillPlan {
  DistillObjective objective;
  MultiCropConfig crops;
  OptimSpec optim;
  real mask_ratio = 0.0;  // ibot: large views; msn: all student views
  std::size_t total_steps = 100;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;

  void validate() const {
    objective.validate();
    crops.validate();
    optim.validate();
    check_config(total_steps >= 1, "DistillPlan: total_steps must be positive");
    if (objective.method == DistillMethod::ibot)
      check_config(mask_ratio > 0, "DistillPlan: ibot requires mask_ratio > 0");
  }
};

/// Validates the teacher/student pairing for a plan: iBOT needs patch
/// tokens on both sides with matching patch grids at the large-crop size.
inline void validate_distill_pair(const ModelBundle& teacher, const ModelBundle& student,
                                  const DistillPlan& plan) {
  check_config(teacher.head.config().n_prototypes == student.head.config().n_prototypes,
               "distill: teacher and student heads must share K");
  if (plan.objective.method == DistillMethod::ibot) {
    check_config(student.encoder.is_transformer(),
                 "distill: ibot patch loss requires a patch_transformer student");
    check_config(teacher.encoder.is_transformer(),
                 "distill: ibot patch loss requires a patch_transformer teacher");
    check_config(teacher.encoder.n_patches(plan.crops.large_size) ==
                     student.encoder.n_patches(plan.crops.large_size),
                 "distill: teacher/student patch grids differ at the large-crop size");
  }
  if (plan.objective.method == DistillMethod::msn)
    check_config(student.encoder.is_transformer(),
                 "distill: msn masking requires a patch_transformer student");
}

/// Samples this step's masks for one view set (empty unless ibot/msn).
inline std::vector<PatchMask> sample_step_masks(const ModelBundle& student, const ViewSet& vs,
                                                const DistillObjective& obj, real mask_ratio,
                                                std::uint64_t seed, std::size_t step,
                                                std::size_t image_slot) {
  std::vector<PatchMask> masks;
  if (obj.method == DistillMethod::ibot) {
    for (std::size_t v = 0; v < 2; ++v) {
      Rng r = Rng::derive(seed, stream::kMask, step, image_slot, v);
      masks.push_back(sample_patch_mask(student.encoder.n_patches(vs.views[v].dim(0)),
                                        mask_ratio, r));
    }
  } else if (obj.method == DistillMethod::msn && mask_ratio > 0) {
    for (std::size_t v = 0; v < vs.n_views(); ++v) {
      Rng r = Rng::derive(seed, stream::kMask, step, image_slot, v);
      masks.push_back(sample_patch_mask(student.encoder.n_patches(vs.views[v].dim(0)),
                                        mask_ratio, r));
    }
  }
  return masks;
}

/// One distillation step. The teacher is frozen and sees only large crops;
/// the student sees every view (masked as the method requires) and takes
/// one scheduled optimizer step.
inline real distill_step(TrainState& st, const std::vector<ViewSet>& batch,
                         const DistillPlan& plan) {
  check(st.teacher.frozen, "distill_step: teacher must be frozen");
  plan.objective.validate();
  check(!batch.empty(), "distill_step: empty batch");

  std::vector<NodePtr> terms;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ViewSet& vs = batch[b];
    auto masks = sample_step_masks(st.student, vs, plan.objective, plan.mask_ratio, st.seed,
                                   st.step, b);
    DistillTargets targets = compute_targets(st.teacher, vs, plan.objective);
    Rng dp_rng = Rng::derive(st.seed, stream::kDropPath, st.step, b);
    StudentOutputs outputs = student_forward(st.student, vs, plan.objective, masks, &dp_rng);
    terms.push_back(rob_loss(plan.objective, targets, outputs, &masks));
  }
  NodePtr loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
  loss = scale(loss, 1.0 / static_cast<real>(terms.size()));

  st.student.zero_grad();
  backward(loss);
  const real lr = schedule_value(plan.optim.lr_schedule, st.step);
  const real wd = schedule_value(plan.optim.wd_schedule, st.step);
  st.optimizer.step(lr, wd);
  ++st.step;
  return loss->value[0];
}

/// Draws the step's batch (indices without replacement when the dataset is
/// large enough, with replacement otherwise) and builds its view sets.
inline std::vector<ViewSet> make_step_batch(const Dataset& data, const MultiCropConfig& crops,
                                            std::size_t batch_size, std::uint64_t seed,
                                            std::size_t step) {
  check(!data.empty(), "make_step_batch: empty dataset");
  Rng pick = Rng::derive(seed, stream::kBatch, step);
  std::vector<std::size_t> idx;
  if (batch_size <= data.size()) {
    idx = pick.sample_without_replacement(data.size(), batch_size);
  } else {
    idx.resize(batch_size);
    for (auto& i : idx) i = pick.uniform_index(data.size());
  }
  std::vector<ViewSet> batch;
  batch.reserve(idx.size());
  for (std::size_t slot = 0; slot < idx.size(); ++slot) {
    Rng crop_rng = Rng::derive(seed, stream::kCrop, step, slot);
    batch.push_back(multicrop(data[idx[slot]], crops, crop_rng));
  }
  return batch;
}

/// Full distillation loop with metrics, periodic checkpoints, and exact
/// resume (state already at step k continues from step k).
inline void run_distillation(TrainState& st, const Dataset& data, const DistillPlan& plan,
                             const std::string& run_dir = "") {
  plan.validate();
  validate_distill_pair(st.teacher, st.student, plan);
  namespace fs = std::filesystem;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    st.metrics = MetricsLog(run_dir + "/metrics.jsonl");
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (; st.step < plan.total_steps;) {
    const std::size_t step_before = st.step;
    auto batch = make_step_batch(data, plan.crops, plan.optim.batch_size, st.seed, st.step);
    const real lr = schedule_value(plan.optim.lr_schedule, st.step);
    const real wd = schedule_value(plan.optim.wd_schedule, st.step);
    const real loss = distill_step(st, batch, plan);
    MetricRecord rec;
    rec.step = step_before;
    rec.loss = loss;
    rec.lr = lr;
    rec.wd = wd;
    rec.wallclock =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
    st.metrics.append(rec);
    if (!run_dir.empty() && plan.checkpoint_every > 0 && st.step % plan.checkpoint_every == 0 &&
        st.step < plan.total_steps)
      save_train_state(run_dir + "/state_" + std::to_string(st.step) + ".ckpt", st);
  }
  if (!run_dir.empty()) {
    save_train_state(run_dir + "/state_final.ckpt", st);
    nlohmann::json meta = {{"step", st.step}, {"seed", st.seed}};
    save_bundle(run_dir + "/student_final.ckpt", st.student, meta);
  }
}

/// Mean KL(teacher ‖ student) over a dataset on deterministic central
/// views; the overfit progress metric.
inline real mean_teacher_student_kl(const ModelBundle& teacher, const ModelBundle& student,
                                    const Dataset& data, const DistillObjective& obj,
                                    std::size_t view_size) {
  check(!data.empty(), "mean_teacher_student_kl: empty dataset");
  real acc = 0;
  for (const auto& rec : data) {
    Tensor v = central_view(rec, view_size);
    Tensor t = bundle_dist(teacher, v, obj.teacher_temp);
    Tensor s = bundle_dist(student, v, obj.student_temp);
    acc += kl_divergence(t, s);
  }
  return acc / static_cast<real>(data.size());
}

/// Student output distributions across a dataset (rows), for the collapse
/// metric.
inline Tensor dataset_dists(const ModelBundle& b, const Dataset& data, real temperature,
                            std::size_t view_size) {
  check(!data.empty(), "dataset_dists: empty dataset");
  const std::size_t K = b.head.config().n_prototypes;
  Tensor rows({data.size(), K});
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor d = bundle_dist(b, central_view(data[i], view_size), temperature);
    for (std::size_t k = 0; k < K; ++k) rows.at2(i, k) = d[k];
  }
  return rows;
}

}  // namespace rob
