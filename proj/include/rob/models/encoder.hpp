// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/graph.hpp"
#include "rob/core/rng.hpp"
#include "rob/core/serialize.hpp"
#include "rob/data/patch_mask.hpp"

namespace rob {

/// Named parameter list with a deterministic order; the unit shared by
/// optimizers, EMA updates, checkpoints, and checksums.
class ParamStore {
public:
  NodePtr add(const std::string& name, Tensor init, bool trainable = true) {
    auto n = trainable ? make_param(std::move(init)) : constant(std::move(init));
    names_.push_back(name);
    nodes_.push_back(n);
    return n;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<NodePtr>& nodes() const { return nodes_; }
  NodePtr node(std::size_t i) const { return nodes_[i]; }

  NodePtr find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return nodes_[i];
    throw Error("ParamStore: unknown parameter " + name);
  }

  std::vector<NodePtr> trainable() const {
    std::vector<NodePtr> out;
    for (const auto& n : nodes_)
      if (n->requires_grad) out.push_back(n);
    return out;
  }

  void zero_grad() {
    for (auto& n : nodes_) n->grad = Tensor();
  }

  void set_trainable(bool trainable) {
    for (auto& n : nodes_) n->requires_grad = trainable;
  }

  /// Marks a single parameter frozen (the partial-head prototype matrix).
  void freeze(const std::string& name) { find(name)->requires_grad = false; }

  std::size_t n_scalars() const {
    std::size_t n = 0;
    for (const auto& p : nodes_) n += p->value.size();
    return n;
  }

  /// Order-sensitive checksum over names, shapes, and raw values.
  std::uint64_t checksum() const {
    Fnv1a h;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      h.update(names_[i]);
      h.update(nodes_[i]->value);
    }
    return h.digest();
  }

  void copy_values_from(const ParamStore& other) {
    check(other.size() == size(), "ParamStore: architecture mismatch in copy");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      check(other.nodes_[i]->value.same_shape(nodes_[i]->value),
            "ParamStore: shape mismatch in copy at " + names_[i]);
      nodes_[i]->value = other.nodes_[i]->value;
    }
  }

private:
  std::vector<std::string> names_;
  std::vector<NodePtr> nodes_;
};

// ---------------------------------------------------------------------------

struct EncoderConfig {
  enum class Family { patch_transformer, conv_residual };
  Family family = Family::patch_transformer;
  std::size_t depth = 4;        // transformer blocks
  std::size_t width = 64;       // output embedding dim
  std::size_t n_heads = 4;      // transformer only
  std::size_t patch_size = 8;   // transformer only
  real drop_path_rate = 0.0;
  std::size_t mlp_ratio = 4;              // transformer MLP expansion
  std::size_t base_image_size = 64;       // position-embedding reference grid
  std::vector<std::size_t> stage_depths = {2, 2};  // conv blocks per stage

  void validate() const {
    check_config(width >= 8, "EncoderConfig: width too small");
    if (family == Family::patch_transformer) {
      check_config(width % n_heads == 0, "EncoderConfig: width must be divisible by n_heads");
      check_config(patch_size >= 1 && base_image_size % patch_size == 0,
                   "EncoderConfig: patch_size must divide base_image_size");
      check_config(depth >= 1, "EncoderConfig: depth must be >= 1");
    } else {
      check_config(!stage_depths.empty(), "EncoderConfig: conv family needs stage_depths");
      check_config(width % (std::size_t(1) << (stage_depths.size() - 1)) == 0,
                   "EncoderConfig: width must be divisible by 2^(n_stages-1)");
    }
    check_config(drop_path_rate >= 0.0 && drop_path_rate < 1.0,
                 "EncoderConfig: drop_path_rate must be in [0,1)");
  }

  std::string family_name() const {
    return family == Family::patch_transformer ? "patch_transformer" : "conv_residual";
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"family", c.family_name()},
       {"depth", c.depth},
       {"width", c.width},
       {"n_heads", c.n_heads},
       {"patch_size", c.patch_size},
       {"drop_path_rate", c.drop_path_rate},
       {"mlp_ratio", c.mlp_ratio},
       {"base_image_size", c.base_image_size},
       {"stage_depths", c.stage_depths}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const std::string fam = j.value("family", "patch_transformer");
  if (fam == "patch_transformer")
    c.family = EncoderConfig::Family::patch_transformer;
  else if (fam == "conv_residual")
    c.family = EncoderConfig::Family::conv_residual;
  else
    throw ConfigError("unknown encoder family: " + fam);
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.drop_path_rate = j.value("drop_path_rate", c.drop_path_rate);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.base_image_size = j.value("base_image_size", c.base_image_size);
  c.stage_depths = j.value("stage_depths", c.stage_depths);
}

/// How masked patches are handled inside the encoder: dropped from the token
/// sequence, or substituted with a learned mask token (positions retained).
enum class MaskMode { drop, replace };

struct EncodeOptions {
  const PatchMask* mask = nullptr;
  MaskMode mask_mode = MaskMode::replace;
  bool training = false;
  bool collect_layerwise = false;
  Rng* rng = nullptr;  // drop-path randomness (training only)
};

struct EncoderOutput {
  NodePtr global_token;                  // [1, width]
  NodePtr patch_tokens;                  // [P, width] or null (conv family)
  std::vector<NodePtr> layerwise_global_tokens;
};

namespace detail {

/// Residual branch with stochastic depth. The branch is only built when kept.
template <typename BranchFn>
NodePtr drop_path_residual(NodePtr x, BranchFn&& branch, real rate, const EncodeOptions& opt) {
  if (opt.training && rate > 0.0) {
    check(opt.rng != nullptr, "drop_path: training forward needs an rng");
    if (opt.rng->bernoulli(rate)) return x;
    return add(x, scale(branch(x), 1.0 / (1.0 - rate)));
  }
  return add(x, branch(x));
}

/// Bilinear interpolation matrix from a g0 x g0 token grid to g x g.
inline Tensor pos_interp_matrix(std::size_t g0, std::size_t g) {
  Tensor m({g * g, g0 * g0});
  for (std::size_t y = 0; y < g; ++y)
    for (std::size_t x = 0; x < g; ++x) {
      real fy = (static_cast<real>(y) + 0.5) * static_cast<real>(g0) / static_cast<real>(g) - 0.5;
      real fx = (static_cast<real>(x) + 0.5) * static_cast<real>(g0) / static_cast<real>(g) - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<real>(g0 - 1));
      fx = std::clamp(fx, 0.0, static_cast<real>(g0 - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(y0 + 1, g0 - 1), x1 = std::min(x0 + 1, g0 - 1);
      const real wy = fy - y0, wx = fx - x0;
      const std::size_t row = y * g + x;
      m.at2(row, y0 * g0 + x0) += (1 - wy) * (1 - wx);
      m.at2(row, y0 * g0 + x1) += (1 - wy) * wx;
      m.at2(row, y1 * g0 + x0) += wy * (1 - wx);
      m.at2(row, y1 * g0 + x1) += wy * wx;
    }
  return m;
}

/// [H,W,C] image to [C,H,W] planes.
inline Tensor hwc_to_chw(const Tensor& img) {
  const std::size_t h = img.dim(0), w = img.dim(1), C = img.dim(2);
  Tensor out({C, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < C; ++c) out.at3(c, y, x) = img[(y * w + x) * C + c];
  return out;
}

}  // namespace detail

/// Pre-norm vision transformer over square patches with a class token.
/// Position embeddings live on the base grid and are bilinearly interpolated
/// for other input resolutions (multi-crop small views).
class PatchTransformer {
public:
  PatchTransformer() = default;

  PatchTransformer(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.width;
    const std::size_t g0 = cfg_.base_image_size / cfg_.patch_size;
    auto tn = [&rng](std::vector<std::size_t> shape) {
      Tensor t(std::move(shape));
      for (auto& v : t.vec()) v = rng.trunc_normal(0.02);
      return t;
    };
    patch_w_ = params_.add("patch_embed.w", tn({3 * cfg_.patch_size * cfg_.patch_size, d}));
    patch_b_ = params_.add("patch_embed.b", Tensor({d}));
    cls_token_ = params_.add("cls_token", tn({1, d}));
    mask_token_ = params_.add("mask_token", tn({1, d}));
    pos_embed_ = params_.add("pos_embed", tn({g0 * g0 + 1, d}));
    blocks_.resize(cfg_.depth);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
      auto& blk = blocks_[i];
      const std::string p = "block" + std::to_string(i) + ".";
      blk.ln1_g = params_.add(p + "ln1.gamma", Tensor::full({d}, 1.0));
      blk.ln1_b = params_.add(p + "ln1.beta", Tensor({d}));
      blk.wq = params_.add(p + "attn.wq", tn({d, d}));
      blk.bq = params_.add(p + "attn.bq", Tensor({d}));
      blk.wk = params_.add(p + "attn.wk", tn({d, d}));
      blk.bk = params_.add(p + "attn.bk", Tensor({d}));
      blk.wv = params_.add(p + "attn.wv", tn({d, d}));
      blk.bv = params_.add(p + "attn.bv", Tensor({d}));
      blk.wo = params_.add(p + "attn.wo", tn({d, d}));
      blk.bo = params_.add(p + "attn.bo", Tensor({d}));
      blk.ln2_g = params_.add(p + "ln2.gamma", Tensor::full({d}, 1.0));
      blk.ln2_b = params_.add(p + "ln2.beta", Tensor({d}));
      blk.w1 = params_.add(p + "mlp.w1", tn({d, d * cfg_.mlp_ratio}));
      blk.b1 = params_.add(p + "mlp.b1", Tensor({d * cfg_.mlp_ratio}));
      blk.w2 = params_.add(p + "mlp.w2", tn({d * cfg_.mlp_ratio, d}));
      blk.b2 = params_.add(p + "mlp.b2", Tensor({d}));
    }
    ln_f_g_ = params_.add("ln_final.gamma", Tensor::full({d}, 1.0));
    ln_f_b_ = params_.add("ln_final.beta", Tensor({d}));
  }

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t n_patches(std::size_t image_size) const {
    check(image_size % cfg_.patch_size == 0,
          "encode: patch_size must divide the view size");
    const std::size_t g = image_size / cfg_.patch_size;
    return g * g;
  }

  EncoderOutput forward(const Tensor& view_hwc, const EncodeOptions& opt) const {
    check(view_hwc.ndim() == 3 && view_hwc.dim(2) == 3, "encode: view must be [H,W,3]");
    check(view_hwc.dim(0) == view_hwc.dim(1), "encode: view must be square");
    const std::size_t size = view_hwc.dim(0);
    const std::size_t g = size / cfg_.patch_size;
    const std::size_t P = n_patches(size);

    // Patchify: im2col with stride = kernel = patch, then project.
    Tensor chw = detail::hwc_to_chw(view_hwc);
    detail::ConvDims dims;
    dims.ic = 3;
    dims.ih = dims.iw = size;
    dims.oc = cfg_.width;
    dims.kh = dims.kw = cfg_.patch_size;
    dims.oh = dims.ow = g;
    dims.stride = cfg_.patch_size;
    dims.pad = 0;
    Tensor cols({3 * cfg_.patch_size * cfg_.patch_size, P});
    detail::im2col(chw, dims, cols);
    NodePtr tokens = add_rowvec(matmul(constant(std::move(cols)), patch_w_, true), patch_b_);

    if (opt.mask) {
      check(opt.mask->n_patches == P, "encode: mask patch count mismatch");
      if (opt.mask_mode == MaskMode::replace) {
        // Substitute masked rows with the learned mask token.
        Tensor keep({P, 1}), fill({P, 1});
        for (std::size_t i = 0; i < P; ++i) {
          keep[i] = opt.mask->kept[i] ? 1.0 : 0.0;
          fill[i] = 1.0 - keep[i];
        }
        tokens = add(scale_rows(tokens, std::move(keep)),
                     matmul(constant(std::move(fill)), mask_token_));
      }
    }

    // Position embeddings (interpolated off the base grid when needed).
    const std::size_t g0 = cfg_.base_image_size / cfg_.patch_size;
    std::vector<std::size_t> patch_pos_rows(g0 * g0);
    for (std::size_t i = 0; i < g0 * g0; ++i) patch_pos_rows[i] = i + 1;
    NodePtr pos_patches = gather_rows(pos_embed_, patch_pos_rows);
    if (g != g0)
      pos_patches = matmul(constant(detail::pos_interp_matrix(g0, g)), pos_patches);
    tokens = add(tokens, pos_patches);

    if (opt.mask && opt.mask_mode == MaskMode::drop)
      tokens = gather_rows(tokens, opt.mask->kept_indices());

    NodePtr cls = add(cls_token_, gather_rows(pos_embed_, {0}));
    NodePtr x = concat_rows({cls, tokens});

    std::vector<NodePtr> layerwise;
    for (const auto& blk : blocks_) {
      x = detail::drop_path_residual(
          x, [&](NodePtr in) { return attention(blk, in); }, cfg_.drop_path_rate, opt);
      x = detail::drop_path_residual(
          x,
          [&](NodePtr in) {
            auto h = layer_norm_rows(in, blk.ln2_g, blk.ln2_b);
            return linear(gelu(linear(h, blk.w1, blk.b1)), blk.w2, blk.b2);
          },
          cfg_.drop_path_rate, opt);
      if (opt.collect_layerwise)
        layerwise.push_back(layer_norm_rows(gather_rows(x, {0}), ln_f_g_, ln_f_b_));
    }
    NodePtr normed = layer_norm_rows(x, ln_f_g_, ln_f_b_);

    EncoderOutput out;
    out.global_token = gather_rows(normed, {0});
    const std::size_t n_tok = normed->value.dim(0);
    std::vector<std::size_t> rest(n_tok - 1);
    for (std::size_t i = 0; i + 1 < n_tok; ++i) rest[i] = i + 1;
    out.patch_tokens = gather_rows(normed, rest);
    out.layerwise_global_tokens = std::move(layerwise);
    return out;
  }

private:
  struct Block {
    NodePtr ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  NodePtr attention(const Block& blk, NodePtr x) const {
    auto h = layer_norm_rows(x, blk.ln1_g, blk.ln1_b);
    auto q = linear(h, blk.wq, blk.bq);
    auto k = linear(h, blk.wk, blk.bk);
    auto v = linear(h, blk.wv, blk.bv);
    const std::size_t dh = cfg_.width / cfg_.n_heads;
    std::vector<NodePtr> heads;
    heads.reserve(cfg_.n_heads);
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      auto qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      auto kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      auto vh = slice_cols(v, hd * dh, (hd + 1) * dh);
      auto attn = softmax_rows(scale(matmul(qh, kh, false, true), 1.0 / std::sqrt(real(dh))));
      heads.push_back(matmul(attn, vh));
    }
    return linear(concat_cols(heads), blk.wo, blk.bo);
  }

  EncoderConfig cfg_;
  ParamStore params_;
  NodePtr patch_w_, patch_b_, cls_token_, mask_token_, pos_embed_, ln_f_g_, ln_f_b_;
  std::vector<Block> blocks_;
};

/// Small pre-activation residual convnet: 3x3 stem, stages of residual
/// blocks joined by 2x2 average-pool + 1x1 channel expansion, global average
/// pooled output.
class ConvResidual {
public:
  ConvResidual() = default;

  ConvResidual(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t stages = cfg_.stage_depths.size();
    auto he = [&rng](std::size_t oc, std::size_t fan_in) {
      Tensor t({oc, fan_in});
      const real s = std::sqrt(2.0 / static_cast<real>(fan_in));
      for (auto& v : t.vec()) v = rng.normal(0.0, s);
      return t;
    };
    std::size_t c = cfg_.width >> (stages - 1);
    stem_w_ = params_.add("stem.w", he(c, 3 * 9));
    stem_b_ = params_.add("stem.b", Tensor({c}));
    for (std::size_t s = 0; s < stages; ++s) {
      for (std::size_t b = 0; b < cfg_.stage_depths[s]; ++b) {
        Block blk;
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
        blk.w1 = params_.add(p + "conv1.w", he(c, c * 9));
        blk.b1 = params_.add(p + "conv1.b", Tensor({c}));
        blk.w2 = params_.add(p + "conv2.w", he(c, c * 9));
        blk.b2 = params_.add(p + "conv2.b", Tensor({c}));
        blk.stage = s;
        blocks_.push_back(blk);
      }
      if (s + 1 < stages) {
        Transition t;
        t.w = params_.add("transition" + std::to_string(s) + ".w", he(c * 2, c));
        t.b = params_.add("transition" + std::to_string(s) + ".b", Tensor({c * 2}));
        transitions_.push_back(t);
        c *= 2;
      }
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  EncoderOutput forward(const Tensor& view_hwc, const EncodeOptions& opt) const {
    check(view_hwc.ndim() == 3 && view_hwc.dim(2) == 3, "encode: view must be [H,W,3]");
    check(opt.mask == nullptr, "encode: patch masks require the patch_transformer family");
    NodePtr x = constant(detail::hwc_to_chw(view_hwc));
    x = gelu(conv2d(x, stem_w_, stem_b_, 3, 3, 1, 1));
    std::size_t stage = 0;
    std::size_t ti = 0;
    for (const auto& blk : blocks_) {
      if (blk.stage != stage) {
        x = avg_pool2d(x, 2);
        x = conv2d(x, transitions_[ti].w, transitions_[ti].b, 1, 1, 1, 0);
        ++ti;
        stage = blk.stage;
      }
      x = detail::drop_path_residual(
          x,
          [&](NodePtr in) {
            auto h = conv2d(gelu(in), blk.w1, blk.b1, 3, 3, 1, 1);
            return conv2d(gelu(h), blk.w2, blk.b2, 3, 3, 1, 1);
          },
          cfg_.drop_path_rate, opt);
    }
    last_feature_map_ = x;
    EncoderOutput out;
    out.global_token = adaptive_avg_pool(x, 1, 1);
    return out;
  }

  /// Feature map of the most recent forward ([C,H,W] node); the conv-family
  /// probe representation pools it.
  NodePtr last_feature_map() const { return last_feature_map_; }

private:
  struct Block {
    NodePtr w1, b1, w2, b2;
    std::size_t stage = 0;
  };
  struct Transition {
    NodePtr w, b;
  };

  EncoderConfig cfg_;
  ParamStore params_;
  NodePtr stem_w_, stem_b_;
  std::vector<Block> blocks_;
  std::vector<Transition> transitions_;
  mutable NodePtr last_feature_map_;
};

/// Family-erased encoder.
class Encoder {
public:
  Encoder() = default;

  Encoder(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.family == EncoderConfig::Family::patch_transformer)
      vit_ = std::make_shared<PatchTransformer>(cfg, rng);
    else
      conv_ = std::make_shared<ConvResidual>(cfg, rng);
  }

  static Encoder build(const EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, std::uint64_t(0xE2C0DE));
    return Encoder(cfg, rng);
  }

  bool is_transformer() const { return vit_ != nullptr; }
  const EncoderConfig& config() const { return vit_ ? vit_->config() : conv_->config(); }
  ParamStore& params() { return vit_ ? vit_->params() : conv_->params(); }
  const ParamStore& params() const { return vit_ ? vit_->params() : conv_->params(); }

  EncoderOutput forward(const Tensor& view_hwc, const EncodeOptions& opt = {}) const {
    return vit_ ? vit_->forward(view_hwc, opt) : conv_->forward(view_hwc, opt);
  }

  NodePtr last_feature_map() const {
    check(conv_ != nullptr, "last_feature_map: conv family only");
    return conv_->last_feature_map();
  }

  std::size_t n_patches(std::size_t image_size) const {
    check(vit_ != nullptr, "n_patches: transformer family only");
    return vit_->n_patches(image_size);
  }

  std::size_t n_params() const { return params().n_scalars(); }

  /// Deep copy (fresh parameter nodes holding equal values).
  Encoder clone() const {
    Rng dummy(0);
    Encoder out(config(), dummy);
    out.params().copy_values_from(params());
    return out;
  }

private:
  std::shared_ptr<PatchTransformer> vit_;
  std::shared_ptr<ConvResidual> conv_;
};

/// build_encoder: parameters are a deterministic function of (config, seed).
inline Encoder build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  return Encoder::build(config, seed);
}

}  // namespace rob
