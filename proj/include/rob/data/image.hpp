// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rob/core/rng.hpp"
#include "rob/core/tensor.hpp"

namespace rob {

/// One image with pixels in [0,1], shape [H,W,C], C = 3.
struct ImageRecord {
  Tensor pixels;
  std::optional<int> label;
  std::string id;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
};

using Dataset = std::vector<ImageRecord>;

inline std::size_t num_classes(const Dataset& ds) {
  int mx = -1;
  for (const auto& r : ds)
    if (r.label) mx = std::max(mx, *r.label);
  return static_cast<std::size_t>(mx + 1);
}

/// Bilinear resize of an [H,W,C] image (align_corners=false convention).
inline Tensor bilinear_resize(const Tensor& img, std::size_t oh, std::size_t ow) {
  const std::size_t h = img.dim(0), w = img.dim(1), C = img.dim(2);
  Tensor out({oh, ow, C});
  const real sy = static_cast<real>(h) / static_cast<real>(oh);
  const real sx = static_cast<real>(w) / static_cast<real>(ow);
  for (std::size_t y = 0; y < oh; ++y) {
    real fy = (static_cast<real>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<real>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const real wy = fy - static_cast<real>(y0);
    for (std::size_t x = 0; x < ow; ++x) {
      real fx = (static_cast<real>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<real>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const real wx = fx - static_cast<real>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const real v00 = img[(y0 * w + x0) * C + c];
        const real v01 = img[(y0 * w + x1) * C + c];
        const real v10 = img[(y1 * w + x0) * C + c];
        const real v11 = img[(y1 * w + x1) * C + c];
        out[(y * ow + x) * C + c] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                    wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

namespace detail {

inline void hsv_to_rgb(real h, real s, real v, real& r, real& g, real& b) {
  h = h - std::floor(h);
  const real i = std::floor(h * 6.0);
  const real f = h * 6.0 - i;
  const real p = v * (1.0 - s);
  const real q = v * (1.0 - f * s);
  const real t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

inline void rgb_to_hsv(real r, real g, real b, real& h, real& s, real& v) {
  const real mx = std::max({r, g, b});
  const real mn = std::min({r, g, b});
  v = mx;
  const real d = mx - mn;
  s = mx <= 0 ? 0 : d / mx;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0 : 0.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
}

// Class -> shape membership test on unit coordinates centered at origin.
// Ten shape families; classes past ten cycle.
inline bool synth_shape_hit(int shape, real u, real v) {
  const real au = std::abs(u), av = std::abs(v);
  switch (shape % 10) {
    case 0: return u * u + v * v < 0.25;                               // disk
    case 1: return au < 0.42 && av < 0.42;                             // square
    case 2: {                                                          // ring
      const real r2 = u * u + v * v;
      return r2 < 0.30 && r2 > 0.10;
    }
    case 3: return (au < 0.14 && av < 0.48) || (av < 0.14 && au < 0.48);  // cross
    case 4: return std::fmod(std::abs(v + 10.0), 0.28) < 0.14 && au < 0.48 && av < 0.48;  // hstripes
    case 5: return std::fmod(std::abs(u + 10.0), 0.28) < 0.14 && au < 0.48 && av < 0.48;  // vstripes
    case 6: {                                                          // checker
      const int cu = static_cast<int>(std::floor((u + 10.0) / 0.24));
      const int cv = static_cast<int>(std::floor((v + 10.0) / 0.24));
      return ((cu + cv) & 1) == 0 && au < 0.48 && av < 0.48;
    }
    case 7: return au + av < 0.48;                                     // diamond
    case 8: {                                                          // dot grid
      const real du = std::fmod(std::abs(u + 10.0), 0.3) - 0.15;
      const real dv = std::fmod(std::abs(v + 10.0), 0.3) - 0.15;
      return du * du + dv * dv < 0.004 && au < 0.46 && av < 0.46;
    }
    default: return v > -0.4 && av < 0.45 && au < 0.45 - (v + 0.4) * 0.5;  // triangle
  }
}

}  // namespace detail

/// Class-conditional textured shapes on jittered backgrounds. Classes share
/// hues in groups of five, so shape (not color alone) separates ten classes;
/// for two classes both hue and shape differ.
inline Dataset generate_synthetic_dataset(std::size_t n_classes, std::size_t n_per_class,
                                          std::size_t size, std::uint64_t seed) {
  check_config(n_classes >= 2, "generate_synthetic_dataset: n_classes must be >= 2");
  check_config(n_per_class >= 1 && size >= 8, "generate_synthetic_dataset: bad arguments");
  Dataset ds;
  ds.reserve(n_classes * n_per_class);
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    const real class_hue = static_cast<real>(cls % 5) / 5.0;
    const int shape = static_cast<int>(cls);
    for (std::size_t k = 0; k < n_per_class; ++k) {
      Rng rng = Rng::derive(seed, std::uint64_t(0x5157u), cls, k);
      const real hue = class_hue + rng.uniform(-0.04, 0.04);
      const real sat = 0.75 + rng.uniform(-0.15, 0.15);
      const real val = 0.85 + rng.uniform(-0.1, 0.1);
      real fr, fg, fb;
      detail::hsv_to_rgb(hue, sat, val, fr, fg, fb);
      const real bg_hue = rng.uniform();   // background hue is not class-tied
      real br, bg, bb;
      detail::hsv_to_rgb(bg_hue, 0.25 + rng.uniform(0.0, 0.2), 0.25 + rng.uniform(0.0, 0.15),
                         br, bg, bb);
      const real cx = rng.uniform(-0.15, 0.15);
      const real cy = rng.uniform(-0.15, 0.15);
      const real sc = 1.0 / (0.85 + rng.uniform(-0.2, 0.25));
      const real rot = rng.uniform(-0.35, 0.35);
      const real cr = std::cos(rot), sr = std::sin(rot);

      ImageRecord rec;
      rec.pixels = Tensor({size, size, 3});
      rec.label = static_cast<int>(cls);
      rec.id = "synth_" + std::to_string(cls) + "_" + std::to_string(k);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          real u = (static_cast<real>(x) + 0.5) / size - 0.5 - cx;
          real v = (static_cast<real>(y) + 0.5) / size - 0.5 - cy;
          const real ru = (u * cr - v * sr) * sc;
          const real rv = (u * sr + v * cr) * sc;
          const bool hit = detail::synth_shape_hit(shape, ru, rv);
          real r = hit ? fr : br, g = hit ? fg : bg, b = hit ? fb : bb;
          r += rng.normal(0.0, 0.03);
          g += rng.normal(0.0, 0.03);
          b += rng.normal(0.0, 0.03);
          real* px = rec.pixels.data() + (y * size + x) * 3;
          px[0] = std::clamp(r, 0.0, 1.0);
          px[1] = std::clamp(g, 0.0, 1.0);
          px[2] = std::clamp(b, 0.0, 1.0);
        }
      ds.push_back(std::move(rec));
    }
  }
  return ds;
}

namespace detail {

/// Minimal binary PPM (P6) / PGM (P5) reader; 8-bit max value only.
inline std::optional<Tensor> load_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  std::string magic;
  f >> magic;
  if (magic != "P6" && magic != "P5") return std::nullopt;
  auto skip_ws_comments = [&f]() {
    while (true) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
  };
  std::size_t w = 0, h = 0, maxv = 0;
  skip_ws_comments();
  f >> w;
  skip_ws_comments();
  f >> h;
  skip_ws_comments();
  f >> maxv;
  f.get();  // single whitespace before raster
  if (!f || w == 0 || h == 0 || maxv == 0 || maxv > 255) return std::nullopt;
  const std::size_t ch = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(w * h * ch);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) return std::nullopt;
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img[i * 3 + c] = static_cast<real>(raw[i * ch + (ch == 3 ? c : 0)]) / maxv;
  return img;
}

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace detail

/// Loads a class-per-subdirectory tree (labels are sorted-class-name indices)
/// or a flat unlabeled folder. Images are PPM/PGM and are resized square.
inline Dataset load_image_folder(const std::string& path, std::size_t resize) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw IoError("image folder not readable: " + path);

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());

  Dataset ds;
  auto load_dir = [&](const fs::path& dir, std::optional<int> label, const std::string& prefix) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && detail::is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto img = detail::load_pnm(f);
      if (!img) throw IoError("unreadable image file: " + f.string());
      ImageRecord rec;
      rec.pixels = (img->dim(0) == resize && img->dim(1) == resize)
                       ? std::move(*img)
                       : bilinear_resize(*img, resize, resize);
      rec.label = label;
      rec.id = prefix + f.filename().string();
      ds.push_back(std::move(rec));
    }
  };

  if (!class_dirs.empty()) {
    for (std::size_t c = 0; c < class_dirs.size(); ++c)
      load_dir(fs::path(path) / class_dirs[c], static_cast<int>(c), class_dirs[c] + "/");
  } else {
    load_dir(path, std::nullopt, "");
  }
  if (ds.empty()) throw IoError("no images found under: " + path);
  return ds;
}

}  // namespace rob
