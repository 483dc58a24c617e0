// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "rob/eval/features.hpp"

namespace rob {

/// Weighted k-nearest-neighbor classification on cosine similarity.
/// Votes are weighted exp(similarity / temperature); ties in the vote break
/// toward the lowest class index, and neighbor ties in similarity break
/// toward the lowest training index, keeping the result deterministic.
inline real knn_eval(const FeatureTable& train, const FeatureTable& test, std::size_t k,
                     real temperature = 0.07, bool weighted = true) {
  check(train.n() > 0, "knn_eval: empty train set");
  check(test.n() > 0, "knn_eval: empty test set");
  check(k >= 1 && k <= train.n(), "knn_eval: k must be in [1, n_train]");
  check(train.dim() == test.dim(), "knn_eval: feature width mismatch");
  const std::size_t d = train.dim();

  auto norms = [d](const Tensor& m, std::size_t n) {
    std::vector<real> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      real s = 0;
      for (std::size_t c = 0; c < d; ++c) s += m[i * d + c] * m[i * d + c];
      out[i] = std::max(std::sqrt(s), real(1e-12));
    }
    return out;
  };
  const auto train_norms = norms(train.features, train.n());
  const auto test_norms = norms(test.features, test.n());

  std::size_t correct = 0;
  std::vector<std::pair<real, std::size_t>> sims(train.n());
  for (std::size_t i = 0; i < test.n(); ++i) {
    for (std::size_t j = 0; j < train.n(); ++j) {
      real dot = 0;
      for (std::size_t c = 0; c < d; ++c)
        dot += test.features[i * d + c] * train.features[j * d + c];
      sims[j] = {dot / (test_norms[i] * train_norms[j]), j};
    }
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::map<int, real> votes;
    for (std::size_t j = 0; j < k; ++j) {
      const int cls = train.labels[sims[j].second];
      votes[cls] += weighted ? std::exp(sims[j].first / temperature) : 1.0;
    }
    int best_cls = votes.begin()->first;
    real best_vote = votes.begin()->second;
    for (const auto& [cls, vote] : votes)
      if (vote > best_vote) {
        best_vote = vote;
        best_cls = cls;
      }
    if (best_cls == test.labels[i]) ++correct;
  }
  return static_cast<real>(correct) / static_cast<real>(test.n());
}

}  // namespace rob
