// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rob/data/image.hpp"
#include "rob/data/patch_mask.hpp"

namespace rob {

/// Photometric augmentation descriptor. Application probability may differ
/// between the first large crop, the second large crop, and small crops
/// (blur/solarize asymmetry of the standard recipe).
struct PhotometricOp {
  enum class Kind { HFlip, ColorJitter, Grayscale, GaussianBlur, Solarize };
  Kind kind;
  real p_large0, p_large1, p_small;
  // ColorJitter strengths (unused by the other kinds).
  real brightness = 0.4, contrast = 0.4, saturation = 0.2, hue = 0.1;
  real solarize_threshold = 0.5;

  real prob_for(std::size_t view_index) const {
    if (view_index == 0) return p_large0;
    if (view_index == 1) return p_large1;
    return p_small;
  }
};

inline std::vector<PhotometricOp> default_photometric_ops() {
  using K = PhotometricOp::Kind;
  return {
      {K::HFlip, 0.5, 0.5, 0.5},
      {K::ColorJitter, 0.8, 0.8, 0.8},
      {K::Grayscale, 0.2, 0.2, 0.2},
      {K::GaussianBlur, 1.0, 0.1, 0.5},
      {K::Solarize, 0.0, 0.2, 0.0},
  };
}

struct MultiCropConfig {
  std::size_t n_large = 2;
  std::size_t n_small = 8;
  std::size_t large_size = 64;
  std::size_t small_size = 32;
  std::pair<real, real> large_scale_range{0.4, 1.0};
  std::pair<real, real> small_scale_range{0.05, 0.4};
  std::vector<PhotometricOp> photometric_ops = default_photometric_ops();

  std::size_t n_views() const { return n_large + n_small; }

  void validate() const {
    check_config(n_large == 2, "MultiCropConfig: n_large must be 2");
    check_config(small_size >= 8, "MultiCropConfig: small_size must be at least 8 px");
    check_config(large_size > small_size, "MultiCropConfig: large_size must exceed small_size");
    auto ok = [](std::pair<real, real> r) {
      return r.first > 0 && r.first <= r.second && r.second <= 1.0;
    };
    check_config(ok(large_scale_range) && ok(small_scale_range),
                 "MultiCropConfig: scale ranges must lie within (0,1]");
  }
};

/// Multi-crop views of one image: views 0..1 large, the rest small.
struct ViewSet {
  std::vector<Tensor> views;  // [size,size,3] each
  std::string source_id;
  std::vector<PatchMask> masks;  // empty, or one per view

  std::size_t n_views() const { return views.size(); }
};

namespace detail {

inline Tensor crop_and_resize(const Tensor& img, std::size_t y0, std::size_t x0,
                              std::size_t ch, std::size_t cw, std::size_t out_size) {
  const std::size_t C = img.dim(2), w = img.dim(1);
  Tensor crop({ch, cw, C});
  for (std::size_t y = 0; y < ch; ++y)
    std::copy_n(img.data() + ((y0 + y) * w + x0) * C, cw * C, crop.data() + y * cw * C);
  if (ch == out_size && cw == out_size) return crop;
  return bilinear_resize(crop, out_size, out_size);
}

/// Random resized crop: random area fraction and log-uniform aspect ratio,
/// ten proposals then a center fallback.
inline Tensor random_resized_crop(const Tensor& img, std::pair<real, real> scale,
                                  std::size_t out_size, Rng& rng) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  const real area = static_cast<real>(h * w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const real target_area = area * rng.uniform(scale.first, scale.second);
    const real log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const real aspect = std::exp(log_ratio);
    const auto cw = static_cast<std::size_t>(std::lround(std::sqrt(target_area * aspect)));
    const auto ch = static_cast<std::size_t>(std::lround(std::sqrt(target_area / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      const std::size_t x0 = static_cast<std::size_t>(rng.uniform_index(w - cw + 1));
      const std::size_t y0 = static_cast<std::size_t>(rng.uniform_index(h - ch + 1));
      return crop_and_resize(img, y0, x0, ch, cw, out_size);
    }
  }
  const std::size_t s = std::min(h, w);
  return crop_and_resize(img, (h - s) / 2, (w - s) / 2, s, s, out_size);
}

inline void horizontal_flip(Tensor& img) {
  const std::size_t h = img.dim(0), w = img.dim(1), C = img.dim(2);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t c = 0; c < C; ++c)
        std::swap(img[(y * w + x) * C + c], img[(y * w + (w - 1 - x)) * C + c]);
}

inline void color_jitter(Tensor& img, const PhotometricOp& op, Rng& rng) {
  const real fb = 1.0 + rng.uniform(-op.brightness, op.brightness);
  const real fc = 1.0 + rng.uniform(-op.contrast, op.contrast);
  const real fs = 1.0 + rng.uniform(-op.saturation, op.saturation);
  const real dh = rng.uniform(-op.hue, op.hue);
  real mean = 0;
  for (std::size_t i = 0; i < img.size(); ++i) mean += img[i];
  mean /= static_cast<real>(img.size());
  for (std::size_t i = 0; i < img.size(); i += 3) {
    real r = img[i], g = img[i + 1], b = img[i + 2];
    r = (r * fb - mean) * fc + mean;
    g = (g * fb - mean) * fc + mean;
    b = (b * fb - mean) * fc + mean;
    real h, s, v;
    rgb_to_hsv(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0), h, s, v);
    s = std::clamp(s * fs, 0.0, 1.0);
    h += dh;
    hsv_to_rgb(h, s, v, r, g, b);
    img[i] = std::clamp(r, 0.0, 1.0);
    img[i + 1] = std::clamp(g, 0.0, 1.0);
    img[i + 2] = std::clamp(b, 0.0, 1.0);
  }
}

inline void grayscale(Tensor& img) {
  for (std::size_t i = 0; i < img.size(); i += 3) {
    const real y = 0.299 * img[i] + 0.587 * img[i + 1] + 0.114 * img[i + 2];
    img[i] = img[i + 1] = img[i + 2] = y;
  }
}

inline void gaussian_blur(Tensor& img, Rng& rng) {
  const real sigma = rng.uniform(0.1, 2.0);
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<real> kernel(2 * radius + 1);
  real ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;
  const int h = static_cast<int>(img.dim(0)), w = static_cast<int>(img.dim(1));
  Tensor tmp = img;
  // horizontal then vertical pass, clamped borders
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        real s = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, w - 1);
          s += kernel[k + radius] * img[(y * w + xx) * 3 + c];
        }
        tmp[(y * w + x) * 3 + c] = s;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        real s = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, h - 1);
          s += kernel[k + radius] * tmp[(yy * w + x) * 3 + c];
        }
        img[(y * w + x) * 3 + c] = s;
      }
}

inline void solarize(Tensor& img, real threshold) {
  for (auto& v : img.vec())
    if (v >= threshold) v = 1.0 - v;
}

}  // namespace detail

/// Multi-crop view construction. Photometric ops are applied independently
/// per view in config order; the whole ViewSet is a pure function of
/// (record, config, stream seed).
inline ViewSet multicrop(const ImageRecord& record, const MultiCropConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = record.height(), w = record.width();
  check(config.large_size <= std::min(h, w) && config.small_size <= std::min(h, w),
        "multicrop: crop size exceeds image size for record " + record.id);

  ViewSet vs;
  vs.source_id = record.id;
  vs.views.reserve(config.n_views());
  for (std::size_t i = 0; i < config.n_views(); ++i) {
    const bool large = i < config.n_large;
    Tensor view = detail::random_resized_crop(
        record.pixels, large ? config.large_scale_range : config.small_scale_range,
        large ? config.large_size : config.small_size, rng);
    for (const auto& op : config.photometric_ops) {
      const real p = op.prob_for(i);
      if (p <= 0.0) continue;
      const bool fire = rng.bernoulli(p);
      // ops that consume extra randomness draw it regardless, so toggling an
      // op's probability never shifts the stream consumed by later views
      switch (op.kind) {
        case PhotometricOp::Kind::HFlip:
          if (fire) detail::horizontal_flip(view);
          break;
        case PhotometricOp::Kind::ColorJitter: {
          Tensor* target = fire ? &view : nullptr;
          Tensor dummy;
          if (!target) {
            dummy = Tensor({1, 1, 3});
            target = &dummy;
          }
          detail::color_jitter(*target, op, rng);
          break;
        }
        case PhotometricOp::Kind::Grayscale:
          if (fire) detail::grayscale(view);
          break;
        case PhotometricOp::Kind::GaussianBlur: {
          Tensor* target = fire ? &view : nullptr;
          Tensor dummy;
          if (!target) {
            dummy = Tensor({1, 1, 3});
            target = &dummy;
          }
          detail::gaussian_blur(*target, rng);
          break;
        }
        case PhotometricOp::Kind::Solarize:
          if (fire) detail::solarize(view, op.solarize_threshold);
          break;
      }
    }
    vs.views.push_back(std::move(view));
  }
  return vs;
}

/// Deterministic evaluation view: center crop to a square then resize.
inline Tensor central_view(const ImageRecord& record, std::size_t out_size) {
  const std::size_t h = record.height(), w = record.width();
  const std::size_t s = std::min(h, w);
  return detail::crop_and_resize(record.pixels, (h - s) / 2, (w - s) / 2, s, s, out_size);
}

}  // namespace rob
