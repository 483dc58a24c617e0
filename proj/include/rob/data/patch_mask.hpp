// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rob/core/rng.hpp"
#include "rob/core/tensor.hpp"

namespace rob {

/// Which patches of a tokenized view are kept vs masked.
struct PatchMask {
  std::size_t n_patches = 0;
  std::vector<bool> kept;
  std::vector<std::size_t> masked_indices;  // sorted

  std::size_t masked_count() const { return masked_indices.size(); }

  std::vector<std::size_t> kept_indices() const {
    std::vector<std::size_t> out;
    out.reserve(n_patches - masked_indices.size());
    for (std::size_t i = 0; i < n_patches; ++i)
      if (kept[i]) out.push_back(i);
    return out;
  }

  static PatchMask all_kept(std::size_t n_patches) {
    PatchMask m;
    m.n_patches = n_patches;
    m.kept.assign(n_patches, true);
    return m;
  }
};

/// Uniform mask of exactly floor(ratio * n_patches) patches, without
/// replacement, deterministic under the stream's seed.
inline PatchMask sample_patch_mask(std::size_t n_patches, real ratio, Rng& rng) {
  check_config(ratio >= 0.0 && ratio < 1.0, "sample_patch_mask: ratio must be in [0,1)");
  const auto n_masked = static_cast<std::size_t>(std::floor(ratio * static_cast<real>(n_patches)));
  PatchMask m;
  m.n_patches = n_patches;
  m.kept.assign(n_patches, true);
  m.masked_indices = rng.sample_without_replacement(n_patches, n_masked);
  for (auto i : m.masked_indices) m.kept[i] = false;
  return m;
}

}  // namespace rob
