// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rob/cli/config.hpp"
#include "rob/cli/registry.hpp"
#include "rob/eval/report.hpp"
#include "rob/train/baseline.hpp"
#include "rob/train/distill.hpp"

namespace rob {

namespace detail {

/// Fail-fast artifact setup: the run directory plus the resolved config and
/// run-info records every run must carry.
inline void init_run_dir(const RunConfig& cfg, const std::string& command) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir))
    throw IoError("cannot create output directory: " + cfg.output_dir);
  {
    std::ofstream os(cfg.output_dir + "/resolved_config.json");
    if (!os) throw IoError("cannot write into output directory: " + cfg.output_dir);
    os << nlohmann::json(cfg).dump(2) << "\n";
  }
  std::ofstream info(cfg.output_dir + "/run_info.json");
  info << nlohmann::json{{"command", command},
                         {"seed", cfg.seed},
                         {"code_version", kCodeVersion}}
              .dump(2)
       << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train-teacher
// ---------------------------------------------------------------------------

/// Trains a baseline teacher and registers its checkpoint. Returns the
/// registry entry.
inline TeacherRegistryEntry cmd_train_teacher(const RunConfig& cfg) {
  cfg.validate();
  detail::init_run_dir(cfg, "train-teacher");
  DatasetPair data = make_datasets(cfg.data, cfg.seed);

  ModelBundle init = build_bundle(cfg.teacher.model.encoder, cfg.teacher.model.head,
                                  mix64(cfg.seed ^ std::uint64_t(0x7EAC4)), "student");
  BaselineTrainer trainer(std::move(init), cfg.baseline, cfg.optimization.optim);

  MetricsLog metrics(cfg.output_dir + "/metrics.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < cfg.optimization.total_steps; ++step) {
    auto batch = make_step_batch(data.train, cfg.augmentation.crops,
                                 cfg.optimization.optim.batch_size, cfg.seed, step);
    const real lr = schedule_value(cfg.optimization.optim.lr_schedule, step);
    const real wd = schedule_value(cfg.optimization.optim.wd_schedule, step);
    const real loss = trainer.step(batch, step);
    MetricRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.lr = lr;
    rec.wd = wd;
    rec.wallclock = std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
    metrics.append(rec);
  }

  const std::string ckpt_path = cfg.output_dir + "/teacher.ckpt";
  nlohmann::json meta = {{"step", cfg.optimization.total_steps},
                         {"seed", cfg.seed},
                         {"method", "baseline_dino"},
                         {"code_version", kCodeVersion}};
  ModelBundle teacher = trainer.teacher().clone();
  teacher.set_frozen(true);
  save_bundle(ckpt_path, teacher, meta);

  TeacherRegistryEntry entry;
  entry.name = cfg.teacher.name.empty() ? "teacher-" + std::to_string(cfg.seed)
                                        : cfg.teacher.name;
  entry.checkpoint = ckpt_path;
  entry.method = "baseline_dino";
  entry.encoder_digest = encoder_config_digest(teacher.encoder.config());
  entry.file_digest = io::file_digest_hex(ckpt_path);
  entry.created = {{"seed", cfg.seed},
                   {"steps", cfg.optimization.total_steps},
                   {"code_version", kCodeVersion}};
  const std::string reg_path =
      cfg.teacher.registry.empty() ? cfg.output_dir + "/registry.json" : cfg.teacher.registry;
  register_teacher(reg_path, entry);
  return entry;
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

struct DistillCommandResult {
  EvalReport report;
  real final_loss = 0;
  std::string run_dir;
  std::uint64_t teacher_checksum = 0;
  std::uint64_t student_checksum = 0;
};

inline ModelBundle resolve_teacher(const TeacherRef& ref) {
  if (!ref.checkpoint.empty()) {
    LoadedBundle loaded = load_bundle(ref.checkpoint);
    loaded.bundle.role = "teacher";
    loaded.bundle.set_frozen(true);
    return loaded.bundle;
  }
  check_config(!ref.name.empty(), "teacher: provide either a checkpoint path or a registry name");
  check_config(!ref.registry.empty(), "teacher: registry path required for lookup by name");
  return load_registered_teacher(lookup_teacher(ref.registry, ref.name));
}

inline ModelBundle build_student_for(const RunConfig& cfg, const ModelBundle& teacher) {
  if (cfg.student.init == "teacher_copy") {
    ModelBundle student = teacher.clone();
    student.role = "student";
    student.set_frozen(false);
    return student;
  }
  ModelBundle student;
  student.encoder =
      build_encoder(cfg.student.encoder, mix64(cfg.seed ^ std::uint64_t(0x57D7)));
  student.head = build_student_head(teacher.head, cfg.student.head.variant,
                                    cfg.student.encoder.width,
                                    mix64(cfg.seed ^ std::uint64_t(0x57D8)),
                                    cfg.student.head.mlp_depth);
  student.role = "student";
  return student;
}

inline DistillCommandResult cmd_distill(const RunConfig& cfg) {
  cfg.validate();
  detail::init_run_dir(cfg, "distill");
  DatasetPair data = make_datasets(cfg.data, cfg.seed);

  TrainState st;
  st.seed = cfg.seed;
  st.teacher = resolve_teacher(cfg.teacher);
  st.student = build_student_for(cfg, st.teacher);
  st.init_optimizer(cfg.optimization.optim);

  DistillPlan plan;
  plan.objective = cfg.objective.objective;
  plan.crops = cfg.augmentation.crops;
  plan.optim = cfg.optimization.optim;
  plan.mask_ratio = cfg.objective.mask_ratio;
  plan.total_steps = cfg.optimization.total_steps;
  plan.checkpoint_every = cfg.optimization.checkpoint_every;
  plan.seed = cfg.seed;

  run_distillation(st, data.train, plan, cfg.output_dir);

  EvalOptions eopts = cfg.evaluation.options;
  eopts.view_size = cfg.augmentation.crops.large_size;
  eopts.seed = cfg.seed;
  EvalReport report = run_evaluation(st.student, data.train, data.test, eopts);
  report.save(cfg.output_dir + "/eval_report.json");

  DistillCommandResult result;
  result.report = std::move(report);
  result.final_loss = st.metrics.records().empty() ? 0 : st.metrics.records().back().loss;
  result.run_dir = cfg.output_dir;
  result.teacher_checksum = st.teacher.checksum();
  result.student_checksum = st.student.checksum();
  return result;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

inline EvalReport cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_override = "") {
  cfg.validate();
  const std::string path =
      checkpoint_override.empty() ? cfg.evaluation.checkpoint : checkpoint_override;
  check_config(!path.empty(), "evaluate: no checkpoint given (evaluation.checkpoint)");
  if (!cfg.evaluation.expected_digest.empty()) {
    const std::string actual = io::file_digest_hex(path);
    check(actual == cfg.evaluation.expected_digest,
          "evaluate: checkpoint digest mismatch (expected " + cfg.evaluation.expected_digest +
              ", file is " + actual + "); refusing to evaluate");
  }
  detail::init_run_dir(cfg, "evaluate");
  DatasetPair data = make_datasets(cfg.data, cfg.seed);
  LoadedBundle loaded = load_bundle(path);
  loaded.bundle.set_frozen(true);

  EvalOptions eopts = cfg.evaluation.options;
  eopts.view_size = cfg.augmentation.crops.large_size;
  eopts.seed = cfg.seed;
  EvalReport report = run_evaluation(loaded.bundle, data.train, data.test, eopts);
  report.save(cfg.output_dir + "/eval_report.json");
  return report;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// Runs the configured axis with everything else held fixed (same teacher,
/// seed, data) and writes a side-by-side table.
inline nlohmann::json cmd_ablate(const RunConfig& cfg, const std::string& axis) {
  check_config(axis == "head_variant" || axis == "multicrop" || axis == "view_policy",
               "unknown ablation axis: " + axis);
  cfg.validate();
  detail::init_run_dir(cfg, "ablate");

  struct Variant {
    std::string label;
    RunConfig config;
  };
  std::vector<Variant> variants;
  if (axis == "head_variant") {
    for (const char* v : {"ssl_default", "mlp", "partial"}) {
      RunConfig sub = cfg;
      sub.student.head.variant = HeadConfig::parse_variant(v);
      variants.push_back({v, sub});
    }
  } else if (axis == "multicrop") {
    RunConfig with = cfg;
    variants.push_back({"n_small=" + std::to_string(with.augmentation.crops.n_small), with});
    RunConfig without = cfg;
    without.augmentation.crops.n_small = 0;
    variants.push_back({"n_small=0", without});
  } else {
    for (const char* v : {"identical", "cross"}) {
      RunConfig sub = cfg;
      sub.objective.objective.policy.mode = ViewMatchPolicy::parse(v);
      variants.push_back({v, sub});
    }
  }

  nlohmann::json table = nlohmann::json::array();
  for (auto& variant : variants) {
    variant.config.output_dir = cfg.output_dir + "/" + axis + "_" + variant.label;
    DistillCommandResult r = cmd_distill(variant.config);
    table.push_back({{"axis", axis},
                     {"value", variant.label},
                     {"final_loss", r.final_loss},
                     {"run_dir", r.run_dir},
                     {"eval", r.report.cells}});
  }
  nlohmann::json out = {{"axis", axis}, {"rows", table}};
  std::ofstream os(cfg.output_dir + "/ablation_report.json");
  if (!os) throw IoError("cannot write ablation report");
  os << out.dump(2) << "\n";
  return out;
}

}  // namespace rob
