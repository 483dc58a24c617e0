// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: ten end-to-end criteria, each printed as a single
// [PASS]/[FAIL] line with its wallclock. Tolerances and budgets are pinned
// here; the binary exits nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "rob/cli/commands.hpp"

using namespace rob;
namespace fs = std::filesystem;

namespace {

constexpr real kTolOracleRel = 1e-6;   // criterion 1
constexpr real kTolFdRel = 1e-4;       // criterion 2
constexpr real kTolEquation = 1e-9;    // criterion 3
constexpr real kCollapseCos = 0.99;    // criterion 5
constexpr real kOverfitRatio = 0.10;   // criterion 6
constexpr real kTeacherGapPts = 15.0;  // criterion 7a
constexpr real kStudentGapPts = 10.0;  // criterion 7b
constexpr real kTolParity = 1e-6;      // criterion 8
constexpr real kTolFeatureMean = 1e-6; // criterion 9
constexpr real kProbeFloor = 0.99;     // criterion 9

struct Failure {
  std::string message;
};

void expect(bool ok, const std::string& msg) {
  if (!ok) throw Failure{msg};
}

int g_failed = 0;

void criterion(int id, const std::string& label, double budget_s,
               const std::function<std::string()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  std::string error;
  try {
    detail = body();
  } catch (const Failure& f) {
    error = f.message;
  } catch (const std::exception& e) {
    error = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (error.empty() && secs > budget_s) {
    std::ostringstream os;
    os << "over budget: " << secs << "s > " << budget_s << "s";
    error = os.str();
  }
  std::ostringstream line;
  line.precision(3);
  if (error.empty()) {
    line << "[PASS] criterion " << id << ": " << label << " — " << detail << " (" << secs
         << "s)";
  } else {
    line << "[FAIL] criterion " << id << ": " << label << " — " << error << " (" << secs
         << "s)";
    ++g_failed;
  }
  std::cout << line.str() << std::endl;
}

// ---------------------------------------------------------------------------
// Shared small-model builders
// ---------------------------------------------------------------------------

EncoderConfig vit(std::size_t width, std::size_t depth, std::size_t heads) {
  EncoderConfig e;
  e.family = EncoderConfig::Family::patch_transformer;
  e.width = width;
  e.depth = depth;
  e.n_heads = heads;
  e.patch_size = 8;
  e.base_image_size = 16;
  return e;
}

HeadConfig proj_head(std::size_t K, std::size_t hidden, std::size_t bneck) {
  HeadConfig h;
  h.hidden_dim = hidden;
  h.bottleneck_dim = bneck;
  h.n_prototypes = K;
  return h;
}

MultiCropConfig crops_of(std::size_t large, std::size_t small, std::size_t n_small) {
  MultiCropConfig c;
  c.n_large = 2;
  c.n_small = n_small;
  c.large_size = large;
  c.small_size = small;
  return c;
}

OptimSpec optim_const(real lr, std::size_t total, std::size_t batch, real wd = 0.0) {
  OptimSpec o;
  o.lr_schedule = ScheduleSpec::constant_of(lr, total);
  o.wd_schedule = ScheduleSpec::constant_of(wd, total);
  o.batch_size = batch;
  return o;
}

OptimSpec optim_cosine(real lr, std::size_t total, std::size_t batch) {
  OptimSpec o;
  o.lr_schedule = ScheduleSpec::cosine(lr, 1e-5, total, total / 20);
  o.wd_schedule = ScheduleSpec::constant_of(0.0, total);
  o.batch_size = batch;
  return o;
}

Dataset synthetic(std::size_t classes, std::size_t per_class, std::size_t size,
                  std::uint64_t seed) {
  DataConfig dc;
  dc.n_classes = classes;
  dc.n_per_class = per_class;
  dc.n_test_per_class = 1;
  dc.image_size = size;
  return make_datasets(dc, seed).train;
}

// ---------------------------------------------------------------------------
// Independent oracles (plain nested loops, no library math)
// ---------------------------------------------------------------------------

real oracle_ce(const std::vector<real>& t, const std::vector<real>& s) {
  real acc = 0;
  for (std::size_t k = 0; k < t.size(); ++k)
    acc -= t[k] * std::log(std::max(s[k], real(1e-12)));
  return acc;
}

std::vector<real> row_of(const Tensor& m, std::size_t r) {
  const std::size_t K = m.cols();
  std::vector<real> out(K);
  for (std::size_t k = 0; k < K; ++k) out[k] = m.at2(r, k);
  return out;
}

real oracle_dino(const Tensor& teacher, const Tensor& student, bool cross,
                 bool per_pair_mean) {
  const std::size_t N = student.dim(0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (teacher view, student view)
  pairs.emplace_back(cross ? 1 : 0, 0);
  pairs.emplace_back(cross ? 0 : 1, 1);
  for (std::size_t i = 2; i < N; ++i) {
    pairs.emplace_back(0, i);
    pairs.emplace_back(1, i);
  }
  real acc = 0;
  for (auto [tv, sv] : pairs) acc += oracle_ce(row_of(teacher, tv), row_of(student, sv));
  return acc / static_cast<real>(per_pair_mean ? pairs.size() : N);
}

real oracle_ibot(const Tensor& teacher, const Tensor& student,
                 const std::vector<Tensor>& teacher_patches,
                 const std::vector<Tensor>& student_patches,
                 const std::vector<PatchMask>& masks, real l1, real l2, bool cross,
                 bool per_pair_mean) {
  real patch = 0;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t r = 0; r < masks[v].masked_indices.size(); ++r)
      patch += oracle_ce(row_of(teacher_patches[v], masks[v].masked_indices[r]),
                         row_of(student_patches[v], r));
  const real n_mask = static_cast<real>(masks[0].masked_count());
  return l1 * oracle_dino(teacher, student, cross, per_pair_mean) +
         l2 * patch / (2.0 * n_mask);
}

Tensor random_dists(std::size_t n, std::size_t K, Rng& rng) {
  Tensor t({n, K});
  for (std::size_t r = 0; r < n; ++r) {
    real mx = -1e30;
    for (std::size_t k = 0; k < K; ++k) {
      t.at2(r, k) = rng.normal();
      mx = std::max(mx, t.at2(r, k));
    }
    real z = 0;
    for (std::size_t k = 0; k < K; ++k) {
      t.at2(r, k) = std::exp(t.at2(r, k) - mx);
      z += t.at2(r, k);
    }
    for (std::size_t k = 0; k < K; ++k) t.at2(r, k) /= z;
  }
  return t;
}

Tensor uniform_dists(std::size_t n, std::size_t K) {
  Tensor t({n, K});
  t.fill(1.0 / static_cast<real>(K));
  return t;
}

real rel_err(real got, real want) {
  return std::abs(got - want) / std::max(std::abs(want), real(1e-12));
}

// ---------------------------------------------------------------------------
// Criterion bodies
// ---------------------------------------------------------------------------

std::string c1_loss_oracles() {
  Rng rng(0xACC1);
  real worst = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t K = 2 + rng.uniform_index(15);   // <= 16
    const std::size_t N = 2 + rng.uniform_index(9);    // <= 10
    const bool cross = rng.uniform_index(2) == 1;
    const bool ppm = rng.uniform_index(2) == 1;
    ViewMatchPolicy policy;
    policy.mode = cross ? ViewMatchPolicy::Mode::cross : ViewMatchPolicy::Mode::identical;

    DistillTargets targets;
    targets.teacher_dists = random_dists(2, K, rng);
    StudentOutputs student;
    student.dists = constant(random_dists(N, K, rng));

    const real want_dino =
        oracle_dino(targets.teacher_dists, student.dists->value, cross, ppm);
    worst = std::max(worst,
                     rel_err(rob_dino_loss(targets, student, policy, ppm)->value[0], want_dino));
    worst = std::max(
        worst, rel_err(rob_msn_loss(targets, student, policy, ppm)->value[0], want_dino));
    worst = std::max(worst, rel_err(rob_swav_loss(targets, student, policy, false, ppm)->value[0],
                                    want_dino));

    const std::size_t P = 4 + rng.uniform_index(6);
    const std::size_t n_mask = 1 + rng.uniform_index(P - 1);
    std::vector<PatchMask> masks;
    std::vector<Tensor> tpatch, spatch_t;
    StudentOutputs ibot_student = student;
    ibot_student.patch_dists.emplace();
    targets.teacher_patch_dists.emplace();
    for (int v = 0; v < 2; ++v) {
      PatchMask m;
      m.n_patches = P;
      m.masked_indices = rng.sample_without_replacement(P, n_mask);
      m.kept.assign(P, true);
      for (auto i : m.masked_indices) m.kept[i] = false;
      masks.push_back(m);
      targets.teacher_patch_dists->push_back(random_dists(P, K, rng));
      Tensor sp = random_dists(n_mask, K, rng);
      ibot_student.patch_dists->push_back(constant(sp));
      spatch_t.push_back(sp);
    }
    const real l1 = 0.1 + 0.01 * static_cast<real>(rng.uniform_index(190));
    const real l2 = 0.1 + 0.01 * static_cast<real>(rng.uniform_index(190));
    const real want_ibot =
        oracle_ibot(targets.teacher_dists, student.dists->value, *targets.teacher_patch_dists,
                    spatch_t, masks, l1, l2, cross, ppm);
    const real got_ibot =
        rob_ibot_loss(targets, ibot_student, masks, l1, l2, policy, ppm)->value[0];
    worst = std::max(worst, rel_err(got_ibot, want_ibot));
  }
  expect(worst < kTolOracleRel, "worst relative error " + std::to_string(worst));
  std::ostringstream os;
  os << "4 losses x 200 instances, worst rel err " << worst;
  return os.str();
}

std::string c2_gradient_check() {
  // Width-8 features through a K=4 projection head; finite differences over
  // every head parameter for each loss.
  Rng rng(0xACC2);
  const std::size_t W = 8, K = 4, N = 4, P = 4, n_mask = 2;
  HeadConfig hc = proj_head(K, 8, 4);
  hc.input_dim = W;

  // Moderate feature scale and temperature keep the loss surface in a
  // regime where the h^2 truncation error of central differences stays
  // well under the 1e-4 comparison tolerance.
  const real temp = 0.25;
  Tensor feats({N, W}), pfeats0({n_mask, W}), pfeats1({n_mask, W});
  for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = 0.5 * rng.normal();
  for (std::size_t i = 0; i < pfeats0.size(); ++i) pfeats0[i] = 0.5 * rng.normal();
  for (std::size_t i = 0; i < pfeats1.size(); ++i) pfeats1[i] = 0.5 * rng.normal();
  DistillTargets targets;
  targets.teacher_dists = random_dists(2, K, rng);
  targets.teacher_patch_dists = {random_dists(P, K, rng), random_dists(P, K, rng)};
  std::vector<PatchMask> masks(2);
  for (int v = 0; v < 2; ++v) {
    masks[v].n_patches = P;
    masks[v].masked_indices = {std::size_t(v), std::size_t(v + 2)};
    masks[v].kept.assign(P, true);
    for (auto i : masks[v].masked_indices) masks[v].kept[i] = false;
  }

  real worst = 0;
  std::vector<std::string> variants;
  for (const std::string name : {"dino", "ibot", "msn", "swav"}) {
    ProjectionHead head = build_head(hc, 0xD00D + name.size());
    std::vector<NodePtr> params = head.params().trainable();
    expect(!params.empty(), name + ": head has no trainable parameters");
    ViewMatchPolicy policy;
    policy.mode = name == "msn" ? ViewMatchPolicy::Mode::cross
                                : ViewMatchPolicy::Mode::identical;
    auto build = [&]() -> NodePtr {
      StudentOutputs student;
      student.dists = head.forward(constant(feats), temp);
      if (name == "ibot") {
        student.patch_dists = {head.forward(constant(pfeats0), temp),
                               head.forward(constant(pfeats1), temp)};
        return rob_ibot_loss(targets, student, masks, 0.7, 1.3, policy);
      }
      if (name == "msn") return rob_msn_loss(targets, student, policy);
      if (name == "swav") return rob_swav_loss(targets, student, policy);
      return rob_dino_loss(targets, student, policy);
    };
    robtest::FdReport rep = robtest::fd_check(params, build, 1e-5);
    expect(rep.max_rel_err < kTolFdRel,
           name + ": max rel err " + std::to_string(rep.max_rel_err) + " at " +
               rep.worst_location);
    worst = std::max(worst, rep.max_rel_err);
  }
  std::ostringstream os;
  os << "4 losses, all head params, worst rel err " << worst;
  return os.str();
}

std::string c3_equation_fidelity() {
  // Uniform distributions over K=2 with N=3 views: the view loss is
  // (4/3)ln2; the patch term with lambda1=0, lambda2=1, N_mask=3 is ln2.
  DistillTargets targets;
  targets.teacher_dists = uniform_dists(2, 2);
  StudentOutputs student;
  student.dists = constant(uniform_dists(3, 2));
  ViewMatchPolicy policy;
  const real dino = rob_dino_loss(targets, student, policy)->value[0];
  const real want_dino = (4.0 / 3.0) * std::log(2.0);
  expect(std::abs(dino - want_dino) < kTolEquation,
         "dino loss " + std::to_string(dino) + " != (4/3)ln2");

  const std::size_t P = 6, n_mask = 3;
  targets.teacher_patch_dists = {uniform_dists(P, 2), uniform_dists(P, 2)};
  StudentOutputs ibot_student = student;
  ibot_student.patch_dists = {constant(uniform_dists(n_mask, 2)),
                              constant(uniform_dists(n_mask, 2))};
  std::vector<PatchMask> masks(2);
  masks[0].n_patches = P;
  masks[0].masked_indices = {0, 2, 4};
  masks[1].n_patches = P;
  masks[1].masked_indices = {1, 3, 5};
  for (auto& m : masks) {
    m.kept.assign(P, true);
    for (auto i : m.masked_indices) m.kept[i] = false;
  }
  const real ibot = rob_ibot_loss(targets, ibot_student, masks, 0.0, 1.0, policy)->value[0];
  expect(std::abs(ibot - std::log(2.0)) < kTolEquation,
         "ibot patch loss " + std::to_string(ibot) + " != ln2");
  std::ostringstream os;
  os << "|dino-(4/3)ln2| = " << std::abs(dino - want_dino) << ", |ibot-ln2| = "
     << std::abs(ibot - std::log(2.0));
  return os.str();
}

std::string c4_frozen_teacher() {
  Dataset data = synthetic(6, 8, 24, 0xC4);
  std::ostringstream os;
  for (DistillMethod m :
       {DistillMethod::dino, DistillMethod::ibot, DistillMethod::swav, DistillMethod::msn}) {
    ModelBundle teacher = build_bundle(vit(16, 1, 2), proj_head(8, 16, 8), 0xC4A, "teacher");
    teacher.set_frozen(true);
    TrainState st;
    st.seed = 0xC4B;
    st.teacher = std::move(teacher);
    st.student = build_bundle(vit(16, 1, 2), proj_head(8, 16, 8), 0xC4C);
    DistillPlan plan;
    plan.objective.method = m;
    plan.crops = crops_of(16, 8, 2);
    plan.optim = optim_const(1e-3, 500, 2);
    plan.mask_ratio = (m == DistillMethod::ibot || m == DistillMethod::msn) ? 0.3 : 0.0;
    plan.total_steps = 500;
    plan.seed = st.seed;
    st.init_optimizer(plan.optim);

    const std::uint64_t teacher_before = st.teacher.checksum();
    const std::uint64_t student_before = st.student.checksum();
    run_distillation(st, data, plan);
    expect(st.step == 500, method_name(m) + ": run stopped at step " + std::to_string(st.step));
    expect(st.teacher.checksum() == teacher_before,
           method_name(m) + ": teacher parameters changed during distillation");
    expect(st.student.checksum() != student_before,
           method_name(m) + ": student parameters never moved");
    os << method_name(m) << " ";
  }
  return os.str() + "500 steps each, teacher checksums stable";
}

std::string c5_collapse() {
  DataConfig dc;
  dc.n_classes = 10;
  dc.n_per_class = 20;
  dc.n_test_per_class = 10;
  dc.image_size = 32;
  DatasetPair data = make_datasets(dc, 5);
  Dataset probe(data.test.begin(), data.test.begin() + 12);

  const EncoderConfig enc = vit(32, 2, 4);
  const HeadConfig head = proj_head(32, 64, 16);
  const MultiCropConfig crops = crops_of(16, 8, 2);
  const real tt = 0.04;
  BaselineSSLConfig bc;
  bc.teacher_temp = tt;

  auto cos_of = [&](const ModelBundle& b, real temp) {
    return mean_pairwise_cosine(dataset_dists(b, probe, temp, 16));
  };

  // A healthy teacher first: the standard recipe (centering on) must leave
  // the constant-output regime, or the collapse contrast is vacuous.
  BaselineTrainer good(build_bundle(enc, head, 100), bc, optim_cosine(1e-3, 1600, 8));
  for (std::size_t s = 0; s < 1600; ++s)
    good.step(make_step_batch(data.train, crops, 8, 51, s), s);
  ModelBundle teacher = good.teacher().clone();
  teacher.set_frozen(true);
  const real healthy_cos = cos_of(teacher, tt);
  expect(healthy_cos <= kCollapseCos,
         "reference teacher stayed collapsed (cos " + std::to_string(healthy_cos) + ")");

  // Baseline with centering disabled must cross the collapse threshold
  // within 1000 steps.
  BaselineSSLConfig off = bc;
  off.centering_enabled = false;
  BaselineTrainer bad(build_bundle(enc, head, 101), off, optim_cosine(1e-3, 1000, 8));
  bool collapsed = false;
  real last_off = 0;
  for (std::size_t s = 0; s < 1000; ++s) {
    bad.step(make_step_batch(data.train, crops, 8, 52, s), s);
    if ((s + 1) % 50 == 0) {
      last_off = cos_of(bad.teacher(), tt);
      collapsed = collapsed || last_off > kCollapseCos;
    }
  }
  expect(collapsed, "centering-off baseline never exceeded cos 0.99");

  // RoB from the frozen healthy teacher: the teacher branch must stay put
  // (and diverse) at every probe point; the student ends diversified too.
  TrainState st;
  st.seed = 53;
  st.teacher = teacher.clone();
  st.student = build_bundle(enc, head, 102);
  DistillPlan plan;
  plan.objective.teacher_temp = tt;
  plan.objective.student_temp = 0.1;
  plan.crops = crops;
  plan.optim = optim_cosine(1e-3, 1000, 8);
  plan.total_steps = 1000;
  plan.seed = 53;
  st.init_optimizer(plan.optim);
  const std::uint64_t teacher_sum = st.teacher.checksum();
  real rob_teacher_max = 0;
  for (std::size_t s = 0; s < 1000; ++s) {
    distill_step(st, make_step_batch(data.train, plan.crops, 8, 53, s), plan);
    if ((s + 1) % 50 == 0) rob_teacher_max = std::max(rob_teacher_max, cos_of(st.teacher, tt));
  }
  expect(rob_teacher_max <= kCollapseCos,
         "RoB teacher output cosine reached " + std::to_string(rob_teacher_max));
  expect(st.teacher.checksum() == teacher_sum, "RoB teacher weights moved");
  const real rob_student_cos = cos_of(st.student, plan.objective.student_temp);
  expect(rob_student_cos <= kCollapseCos,
         "RoB student collapsed (cos " + std::to_string(rob_student_cos) + ")");
  std::ostringstream os;
  os << "centering-off cos " << last_off << " > 0.99; RoB teacher max " << rob_teacher_max
     << ", student " << rob_student_cos;
  return os.str();
}

std::string c6_overfit() {
  Dataset data = synthetic(8, 8, 24, 40);  // 64 fixed images
  ModelBundle teacher = build_bundle(vit(16, 1, 2), proj_head(16, 16, 8), 600, "teacher");
  teacher.set_frozen(true);
  TrainState st;
  st.seed = 41;
  st.teacher = std::move(teacher);
  st.student = build_bundle(vit(16, 1, 2), proj_head(16, 16, 8), 22);
  DistillPlan plan;
  plan.objective.teacher_temp = 0.07;
  plan.objective.student_temp = 0.1;
  plan.crops = crops_of(16, 8, 2);
  plan.optim = optim_const(1e-3, 2000, 4);
  plan.total_steps = 2000;
  plan.seed = 41;
  st.init_optimizer(plan.optim);

  const real kl0 = mean_teacher_student_kl(st.teacher, st.student, data, plan.objective, 16);
  expect(kl0 > 0, "initial KL not positive");
  run_distillation(st, data, plan);
  const real kl1 = mean_teacher_student_kl(st.teacher, st.student, data, plan.objective, 16);
  expect(kl1 < kOverfitRatio * kl0,
         "KL only dropped to " + std::to_string(kl1) + " from " + std::to_string(kl0));
  std::ostringstream os;
  os << "mean KL " << kl0 << " -> " << kl1 << " (ratio " << kl1 / kl0 << ")";
  return os.str();
}

std::string c7_directional() {
  DataConfig dc;
  dc.n_classes = 10;
  dc.n_per_class = 20;
  dc.n_test_per_class = 10;
  dc.image_size = 32;
  DatasetPair data = make_datasets(dc, 0);

  const EncoderConfig tenc = vit(32, 2, 4);
  EncoderConfig senc = vit(16, 2, 2);  // half the teacher width
  const HeadConfig head = proj_head(32, 64, 16);
  const MultiCropConfig crops = crops_of(24, 8, 4);
  BaselineSSLConfig bc;
  bc.teacher_temp = 0.04;

  auto knn10 = [&](const ModelBundle& b) {
    FeatureTable tr = extract_features(b.encoder, data.train, ReprChoice::last_global, 24);
    FeatureTable te = extract_features(b.encoder, data.test, ReprChoice::last_global, 24);
    return knn_eval(tr, te, 10);
  };

  // (a) baseline-trained teacher vs its own random initialization.
  ModelBundle init = build_bundle(tenc, head, 1000);
  const real acc_random = knn10(init);
  const std::size_t tsteps = 12000;
  BaselineTrainer btr(std::move(init), bc, optim_cosine(3e-3, tsteps, 8));
  for (std::size_t s = 0; s < tsteps; ++s)
    btr.step(make_step_batch(data.train, crops, 8, 17, s), s);
  ModelBundle teacher = btr.teacher().clone();
  teacher.set_frozen(true);
  const real acc_teacher = knn10(teacher);
  expect((acc_teacher - acc_random) * 100.0 >= kTeacherGapPts,
         "teacher gap " + std::to_string((acc_teacher - acc_random) * 100.0) + " pts < 15");

  // (b) RoB-distilled half-width student vs the same student trained from
  // scratch with no teacher (the baseline recipe), averaged over 3 seeds.
  const std::size_t ssteps = 2000;
  real gap_sum = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainState st;
    st.seed = seed;
    st.teacher = teacher.clone();
    st.student.encoder = build_encoder(senc, 2000 + seed);
    st.student.head =
        build_student_head(teacher.head, HeadConfig::Variant::ssl_default, 16, 3000 + seed, 0);
    DistillPlan plan;
    plan.objective.teacher_temp = 0.04;
    plan.objective.student_temp = 0.1;
    plan.crops = crops;
    plan.optim = optim_cosine(3e-3, ssteps, 8);
    plan.total_steps = ssteps;
    plan.seed = seed;
    st.init_optimizer(plan.optim);
    for (std::size_t s = 0; s < ssteps; ++s)
      distill_step(st, make_step_batch(data.train, crops, 8, seed, s), plan);
    const real acc_distilled = knn10(st.student);

    ModelBundle cinit;
    cinit.encoder = build_encoder(senc, 2000 + seed);
    cinit.head =
        build_student_head(teacher.head, HeadConfig::Variant::ssl_default, 16, 3000 + seed, 0);
    BaselineTrainer ctr(std::move(cinit), bc, optim_cosine(3e-3, ssteps, 8));
    for (std::size_t s = 0; s < ssteps; ++s)
      ctr.step(make_step_batch(data.train, crops, 8, seed, s), s);
    const real acc_control = knn10(ctr.teacher());
    gap_sum += (acc_distilled - acc_control) * 100.0;
    per_seed << " s" << seed << " " << acc_distilled << "/" << acc_control;
  }
  const real mean_gap = gap_sum / 3.0;
  expect(mean_gap >= kStudentGapPts,
         "mean distilled-vs-control gap " + std::to_string(mean_gap) + " pts < 10");
  std::ostringstream os;
  os << "teacher " << acc_teacher << " vs random " << acc_random << " (+"
     << (acc_teacher - acc_random) * 100 << " pts); student gap " << mean_gap << " pts:"
     << per_seed.str();
  return os.str();
}

RunConfig micro_run(const std::string& out, std::size_t steps) {
  RunConfig cfg;
  cfg.data.n_classes = 3;
  cfg.data.n_per_class = 6;
  cfg.data.n_test_per_class = 3;
  cfg.data.image_size = 24;
  cfg.augmentation.crops = crops_of(16, 8, 2);
  cfg.student.encoder = vit(16, 1, 2);
  cfg.student.head = proj_head(8, 16, 8);
  cfg.student.head.input_dim = 16;
  cfg.teacher.model.encoder = cfg.student.encoder;
  cfg.teacher.model.head = cfg.student.head;
  cfg.optimization.total_steps = steps;
  cfg.optimization.optim = optim_const(1e-3, steps, 4);
  cfg.baseline.ema_momentum_schedule = ScheduleSpec::constant_of(0.99, steps);
  cfg.evaluation.options.protocols = {"knn"};
  cfg.evaluation.options.knn_k = {1};
  cfg.seed = 9;
  cfg.output_dir = out;
  return cfg;
}

std::string c8_ablation_parity() {
  const std::string root = "acc_c8";
  fs::remove_all(root);
  fs::create_directories(root);

  // A teacher checkpoint for the harness to distill from.
  ModelBundle teacher = build_bundle(vit(16, 1, 2), proj_head(8, 16, 8), 0xC8A, "teacher");
  teacher.set_frozen(true);
  save_bundle(root + "/teacher.ckpt", teacher, {{"note", "acceptance"}});

  // The three comparison tables, all runs completing with finite losses.
  std::size_t total_rows = 0;
  for (const std::string axis : {"head_variant", "multicrop", "view_policy"}) {
    RunConfig cfg = micro_run(root + "/" + axis, 4);
    cfg.teacher.checkpoint = root + "/teacher.ckpt";
    nlohmann::json table = cmd_ablate(cfg, axis);
    const auto& rows = table.at("rows");
    expect(rows.size() == (axis == "head_variant" ? 3u : 2u),
           axis + ": unexpected row count " + std::to_string(rows.size()));
    for (const auto& row : rows) {
      expect(std::isfinite(row.at("final_loss").get<real>()),
             axis + ": non-finite final loss");
      expect(row.at("eval").contains("knn"), axis + ": missing eval cell");
    }
    total_rows += rows.size();
  }

  // Identical-policy parity: a student initialized as a copy of the teacher,
  // equal temperatures, no small crops, no weight decay. Gradients vanish,
  // so the final loss equals the mean teacher entropy on the final batch.
  RunConfig cfg = micro_run(root + "/parity", 40);
  cfg.teacher.checkpoint = root + "/teacher.ckpt";
  cfg.student.init = "teacher_copy";
  cfg.augmentation.crops = crops_of(16, 8, 0);
  cfg.objective.objective.teacher_temp = 0.07;
  cfg.objective.objective.student_temp = 0.07;
  DistillCommandResult res = cmd_distill(cfg);

  DatasetPair data = make_datasets(cfg.data, cfg.seed);
  auto batch = make_step_batch(data.train, cfg.augmentation.crops,
                               cfg.optimization.optim.batch_size, cfg.seed,
                               cfg.optimization.total_steps - 1);
  real want = 0;
  for (const auto& vs : batch) {
    const Tensor t0 = teacher_view_dist(teacher, vs, 0, 0.07);
    const Tensor t1 = teacher_view_dist(teacher, vs, 1, 0.07);
    want += 0.5 * (oracle_ce(row_of(t0, 0), row_of(t0, 0)) +
                   oracle_ce(row_of(t1, 0), row_of(t1, 0)));
  }
  want /= static_cast<real>(batch.size());
  expect(std::abs(res.final_loss - want) < kTolParity,
         "final loss " + std::to_string(res.final_loss) + " != mean teacher entropy " +
             std::to_string(want));
  fs::remove_all(root);
  std::ostringstream os;
  os << total_rows << " ablation rows; |final loss - teacher entropy| = "
     << std::abs(res.final_loss - want);
  return os.str();
}

std::string c9_protocols() {
  // Lambda grid: exact endpoints, even log spacing.
  const auto grid = lambda_grid(13);
  expect(grid.front() == real(1e4), "grid start is not exactly 1e4");
  expect(grid.back() == real(1e-2), "grid end is not exactly 1e-2");
  for (std::size_t i = 0; i < grid.size(); ++i)
    expect(std::abs(std::log10(grid[i]) - (4.0 - 0.5 * static_cast<real>(i))) < 1e-9,
           "uneven log spacing at index " + std::to_string(i));

  // Constructed separable features: one axis per class plus mild noise.
  Rng rng(0xC9);
  auto blobs = [&](std::size_t per_class) {
    FeatureTable t;
    const std::size_t C = 4, D = 16;
    t.features = Tensor({C * per_class, D});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < per_class; ++i) {
        t.labels.push_back(static_cast<int>(c));
        for (std::size_t d = 0; d < D; ++d)
          t.features.at2(c * per_class + i, d) = rng.normal() * 0.05 + (d == c ? 4.0 : 0.0);
      }
    return t;
  };
  FeatureTable train = blobs(30), test = blobs(10);

  // Normalized train-feature mean is zero.
  LowShotSpec spec = LowShotSpec::for_images_per_class(5, 7);
  LowShotResult ls = low_shot_eval(train, test, spec);
  expect(ls.max_abs_train_mean < kTolFeatureMean,
         "centered train mean " + std::to_string(ls.max_abs_train_mean));

  // Linear probe on separable features.
  ProbeConfig pc;
  pc.seed = 1;
  const real probe_acc = linear_probe(train, test, pc);
  expect(probe_acc >= kProbeFloor, "probe accuracy " + std::to_string(probe_acc));

  // kNN defaults: k=10 and k=20 reported.
  EvalOptions defaults;
  expect(defaults.knn_k == std::vector<std::size_t>({10, 20}),
         "default knn k list is not {10, 20}");
  DataConfig dc;
  dc.n_classes = 3;
  dc.n_per_class = 24;
  dc.n_test_per_class = 4;
  dc.image_size = 24;
  DatasetPair data = make_datasets(dc, 0xC9);
  ModelBundle b = build_bundle(vit(16, 1, 2), proj_head(8, 16, 8), 0xC9C);
  EvalOptions opts;  // default knn_k
  opts.protocols = {"knn"};
  opts.view_size = 16;
  EvalReport rep = run_evaluation(b, data.train, data.test, opts);
  expect(rep.cells.at("knn").contains("k=10") && rep.cells.at("knn").contains("k=20"),
         "knn report missing default k cells");
  std::ostringstream os;
  os << "grid exact, train mean " << ls.max_abs_train_mean << ", probe " << probe_acc
     << ", knn defaults reported";
  return os.str();
}

std::string c10_reproducibility() {
  fs::remove_all("acc_c10a");
  fs::remove_all("acc_c10b");

  // Two identical teacher runs...
  RunConfig t1 = micro_run("acc_c10a", 6);
  RunConfig t2 = micro_run("acc_c10b", 6);
  TeacherRegistryEntry e1 = cmd_train_teacher(t1);
  TeacherRegistryEntry e2 = cmd_train_teacher(t2);
  expect(e1.file_digest == e2.file_digest, "teacher checkpoint digests differ");

  // ...then two identical distillation runs against the same teacher.
  auto dcfg = [&](const std::string& out) {
    RunConfig c = micro_run(out, 8);
    c.teacher.checkpoint = "acc_c10a/teacher.ckpt";
    return c;
  };
  fs::remove_all("acc_c10c");
  fs::remove_all("acc_c10d");
  DistillCommandResult r1 = cmd_distill(dcfg("acc_c10c"));
  DistillCommandResult r2 = cmd_distill(dcfg("acc_c10d"));

  auto log1 = MetricsLog::read("acc_c10c/metrics.jsonl");
  auto log2 = MetricsLog::read("acc_c10d/metrics.jsonl");
  expect(log1.size() == log2.size(), "metrics log lengths differ");
  for (std::size_t i = 0; i < log1.size(); ++i) {
    expect(log1[i].step == log2[i].step && log1[i].loss == log2[i].loss &&
               log1[i].lr == log2[i].lr && log1[i].wd == log2[i].wd,
           "metrics diverge at record " + std::to_string(i));
  }
  for (const char* f : {"/student_final.ckpt", "/state_final.ckpt"}) {
    expect(io::file_digest_hex("acc_c10c" + std::string(f)) ==
               io::file_digest_hex("acc_c10d" + std::string(f)),
           std::string(f) + " digests differ");
  }
  expect(r1.report.cells == r2.report.cells, "evaluation reports differ");
  for (const char* d : {"acc_c10a", "acc_c10b", "acc_c10c", "acc_c10d"})
    fs::remove_all(d);
  std::ostringstream os;
  os << log1.size() << " metric records bit-equal, checkpoint digests equal";
  return os.str();
}

}  // namespace

int main() {
  std::cout << "acceptance suite (code " << kCodeVersion << ")" << std::endl;
  criterion(1, "loss-oracle equivalence", 60.0, c1_loss_oracles);
  criterion(2, "gradient check vs finite differences", 120.0, c2_gradient_check);
  criterion(3, "equation fidelity at uniform distributions", 60.0, c3_equation_fidelity);
  criterion(4, "frozen-teacher contract over 500-step runs", 600.0, c4_frozen_teacher);
  criterion(5, "collapse with centering off, none under RoB", 900.0, c5_collapse);
  criterion(6, "overfit sanity on 64 images", 600.0, c6_overfit);
  criterion(7, "directional end-to-end gains", 3600.0, c7_directional);
  criterion(8, "ablation harness and entropy parity", 600.0, c8_ablation_parity);
  criterion(9, "evaluation protocol checks", 600.0, c9_protocols);
  criterion(10, "seeded reproducibility", 600.0, c10_reproducibility);
  if (g_failed > 0) {
    std::cout << g_failed << " criterion(s) failed" << std::endl;
    return 1;
  }
  std::cout << "all 10 criteria passed" << std::endl;
  return 0;
}
