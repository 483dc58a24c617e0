// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/tensor.hpp"

namespace rob {

/// One line of the append-only metrics log.
struct MetricRecord {
  std::size_t step = 0;
  real loss = 0;
  real lr = 0;
  real wd = 0;
  real wallclock = 0;  // seconds since run start
};

inline void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = {{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wd", r.wd}, {"wallclock", r.wallclock}};
}

inline void from_json(const nlohmann::json& j, MetricRecord& r) {
  r.step = j.at("step").get<std::size_t>();
  r.loss = j.at("loss").get<real>();
  r.lr = j.at("lr").get<real>();
  r.wd = j.at("wd").get<real>();
  r.wallclock = j.value("wallclock", 0.0);
}

class MetricsLog {
public:
  MetricsLog() = default;
  explicit MetricsLog(std::string path) : path_(std::move(path)) {}

  void append(const MetricRecord& r) {
    records_.push_back(r);
    if (path_.empty()) return;
    std::ofstream os(path_, std::ios::app);
    if (!os) throw IoError("cannot append metrics: " + path_);
    os << nlohmann::json(r).dump() << "\n";
  }

  const std::vector<MetricRecord>& records() const { return records_; }

  static std::vector<MetricRecord> read(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read metrics: " + path);
    std::vector<MetricRecord> out;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      out.push_back(nlohmann::json::parse(line).get<MetricRecord>());
    }
    return out;
  }

private:
  std::string path_;
  std::vector<MetricRecord> records_;
};

/// Collapse metric: mean cosine similarity over all distinct row pairs.
/// Rows are per-image branch outputs; a value near 1 means the branch has
/// stopped distinguishing inputs.
inline real mean_pairwise_cosine(const Tensor& rows) {
  const std::size_t d = rows.cols(), n = rows.size() / d;
  check(n >= 2, "mean_pairwise_cosine: need at least 2 rows");
  std::vector<real> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    real s = 0;
    for (std::size_t k = 0; k < d; ++k) s += rows[i * d + k] * rows[i * d + k];
    norms[i] = std::sqrt(s);
  }
  real acc = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      real dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += rows[i * d + k] * rows[j * d + k];
      const real den = std::max(norms[i] * norms[j], real(1e-12));
      acc += dot / den;
      ++count;
    }
  return acc / static_cast<real>(count);
}

/// KL(p ‖ q) between two distribution rows.
inline real kl_divergence(const Tensor& p, const Tensor& q) {
  check(p.size() == q.size(), "kl_divergence: dimension mismatch");
  real s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0) continue;
    s += p[k] * (std::log(p[k]) - std::log(std::max(q[k], real(1e-12))));
  }
  return s;
}

}  // namespace rob
