// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "rob/data/container.hpp"
#include "rob/data/image.hpp"
#include "rob/data/multicrop.hpp"
#include "rob/models/bundle.hpp"

namespace rob {

enum class ReprChoice { last_global, concat_last4_global, pooled_featuremap_concat };

inline std::string repr_name(ReprChoice r) {
  switch (r) {
    case ReprChoice::last_global: return "last_global";
    case ReprChoice::concat_last4_global: return "concat_last4_global";
    default: return "pooled_featuremap_concat";
  }
}

inline ReprChoice parse_repr(const std::string& s) {
  if (s == "last_global") return ReprChoice::last_global;
  if (s == "concat_last4_global") return ReprChoice::concat_last4_global;
  if (s == "pooled_featuremap_concat") return ReprChoice::pooled_featuremap_concat;
  throw ConfigError("unknown representation choice: " + s);
}

struct FeatureTable {
  Tensor features;  // [n, d]
  std::vector<int> labels;
  ReprChoice repr_choice = ReprChoice::last_global;
  std::vector<std::string> normalization_ops;  // transforms applied, in order

  std::size_t n() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
};

namespace detail {
inline std::size_t count_classes(const std::vector<int>& a, const std::vector<int>& b) {
  int mx = -1;
  for (int v : a) mx = std::max(mx, v);
  for (int v : b) mx = std::max(mx, v);
  check(mx >= 0, "eval: unlabeled data");
  return static_cast<std::size_t>(mx) + 1;
}
}  // namespace detail

/// Representation choices available for an encoder family. Layer
/// concatenation needs transformer layer outputs; feature-map pooling needs
/// a conv feature map.
inline std::vector<ReprChoice> compatible_reprs(const Encoder& enc) {
  std::vector<ReprChoice> out{ReprChoice::last_global};
  if (enc.is_transformer()) {
    if (enc.config().depth >= 4) out.push_back(ReprChoice::concat_last4_global);
  } else {
    out.push_back(ReprChoice::pooled_featuremap_concat);
  }
  return out;
}

/// Frozen-encoder features over deterministic central views, row order
/// matching the dataset.
inline FeatureTable extract_features(const Encoder& encoder, const Dataset& data,
                                     ReprChoice repr, std::size_t view_size) {
  check(!data.empty(), "extract_features: empty dataset");
  if (repr == ReprChoice::concat_last4_global) {
    check(encoder.is_transformer(),
          "extract_features: concat_last4_global requires the patch_transformer family");
    check(encoder.config().depth >= 4,
          "extract_features: concat_last4_global needs depth >= 4");
  }
  if (repr == ReprChoice::pooled_featuremap_concat)
    check(!encoder.is_transformer(),
          "extract_features: pooled_featuremap_concat requires the conv_residual family");

  NoGradGuard ng;
  FeatureTable out;
  out.repr_choice = repr;
  out.labels.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor view = central_view(data[i], view_size);
    EncodeOptions opt;
    opt.collect_layerwise = repr == ReprChoice::concat_last4_global;
    auto enc = encoder.forward(view, opt);
    Tensor row;
    if (repr == ReprChoice::last_global) {
      row = enc.global_token->value;
    } else if (repr == ReprChoice::concat_last4_global) {
      const auto& lw = enc.layerwise_global_tokens;
      const std::size_t width = encoder.config().width;
      row = Tensor({1, 4 * width});
      for (std::size_t l = 0; l < 4; ++l) {
        const Tensor& tok = lw[lw.size() - 4 + l]->value;
        for (std::size_t k = 0; k < width; ++k) row[l * width + k] = tok[k];
      }
    } else {
      row = adaptive_avg_pool(encoder.last_feature_map(), 2, 1)->value;
    }
    if (i == 0) out.features = Tensor({data.size(), row.size()});
    check(row.size() == out.features.cols(), "extract_features: inconsistent feature width");
    for (std::size_t k = 0; k < row.size(); ++k) out.features.at2(i, k) = row[k];
    out.labels.push_back(data[i].label.value_or(-1));
  }
  return out;
}

inline void save_feature_table(const std::string& path, const FeatureTable& t) {
  container::save_matrix(t.features, t.labels, path);
}

inline FeatureTable load_feature_table(const std::string& path, ReprChoice repr) {
  FeatureTable t;
  t.features = container::load_matrix(path, &t.labels);
  t.repr_choice = repr;
  return t;
}

}  // namespace rob
