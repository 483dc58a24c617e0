// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/eval/knn.hpp"
#include "rob/eval/linear_probe.hpp"
#include "rob/eval/low_shot.hpp"
#include "rob/models/bundle.hpp"

namespace rob {

struct EvalOptions {
  std::set<std::string> protocols{"knn", "linear_probe", "low_shot"};
  std::vector<std::size_t> knn_k{10, 20};
  std::vector<std::size_t> low_shot_images_per_class{1, 5};
  std::size_t view_size = 64;
  ProbeConfig probe;
  std::uint64_t seed = 0;

  void validate() const {
    check_config(!protocols.empty(), "EvalOptions: no protocols selected");
    for (const auto& p : protocols)
      check_config(p == "knn" || p == "linear_probe" || p == "low_shot",
                   "EvalOptions: unknown protocol " + p);
  }
};

/// Per-protocol results; every accuracy is tagged with the variant that
/// produced it.
struct EvalReport {
  nlohmann::json cells = nlohmann::json::object();
  std::string config_digest;
  real runtime_seconds = 0;

  nlohmann::json to_json() const {
    return {{"cells", cells},
            {"config_digest", config_digest},
            {"runtime_seconds", runtime_seconds}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.cells = j.at("cells");
    r.config_digest = j.value("config_digest", "");
    r.runtime_seconds = j.value("runtime_seconds", 0.0);
    return r;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report: " + path);
    os << to_json().dump(2) << "\n";
  }

  static EvalReport load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read report: " + path);
    nlohmann::json j;
    is >> j;
    return from_json(j);
  }

  std::string render_text() const {
    std::ostringstream os;
    os << "evaluation report (config digest " << config_digest << ")\n";
    for (const auto& [name, cell] : cells.items())
      os << "  " << name << ": " << cell.dump() << "\n";
    return os.str();
  }
};

/// Runs the configured protocol subset on frozen weights.
inline EvalReport run_evaluation(const ModelBundle& bundle, const Dataset& train,
                                 const Dataset& test, const EvalOptions& opts) {
  opts.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t checksum_before = bundle.checksum();

  EvalReport report;
  {
    Fnv1a digest;
    digest.update(checksum_before);
    digest.update(nlohmann::json(opts.knn_k).dump());
    report.config_digest = digest.hex();
  }

  FeatureTable train_feats, test_feats;
  bool have_default_feats = false;
  auto default_feats = [&]() {
    if (!have_default_feats) {
      train_feats =
          extract_features(bundle.encoder, train, ReprChoice::last_global, opts.view_size);
      test_feats =
          extract_features(bundle.encoder, test, ReprChoice::last_global, opts.view_size);
      have_default_feats = true;
    }
  };

  if (opts.protocols.count("knn")) {
    default_feats();
    nlohmann::json cell = nlohmann::json::object();
    for (std::size_t k : opts.knn_k) {
      cell["k=" + std::to_string(k)] = {
          {"accuracy", knn_eval(train_feats, test_feats, k)},
          {"variant", repr_name(ReprChoice::last_global)}};
    }
    report.cells["knn"] = cell;
  }

  if (opts.protocols.count("linear_probe")) {
    ProbeConfig probe = opts.probe;
    probe.seed = opts.seed;
    ProbeSweepResult sweep = probe_sweep(bundle.encoder, train, test, opts.view_size, probe);
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& cell : sweep.cells)
      grid.push_back({{"repr", repr_name(cell.repr)},
                      {"head", probe_head_name(cell.head)},
                      {"accuracy", cell.accuracy}});
    report.cells["linear_probe"] = {{"accuracy", sweep.best_accuracy},
                                    {"variant", repr_name(sweep.best_repr) + "+" +
                                                    probe_head_name(sweep.best_head)},
                                    {"grid", grid}};
  }

  if (opts.protocols.count("low_shot")) {
    default_feats();
    nlohmann::json cell = nlohmann::json::object();
    for (std::size_t ipc : opts.low_shot_images_per_class) {
      LowShotSpec spec = LowShotSpec::for_images_per_class(ipc, opts.seed);
      LowShotResult r = low_shot_eval(train_feats, test_feats, spec);
      cell[std::to_string(ipc) + "_per_class"] = {
          {"mean_accuracy", r.mean_accuracy},
          {"stdev", r.stdev},
          {"n_splits", r.per_split.size()},
          {"per_split", r.per_split},
          {"variant", repr_name(train_feats.repr_choice)},
          {"normalization", r.normalization_ops}};
    }
    report.cells["low_shot"] = cell;
  }

  check(bundle.checksum() == checksum_before,
        "run_evaluation: encoder parameters changed during evaluation");
  report.runtime_seconds =
      std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace rob
