// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/serialize.hpp"
#include "rob/models/encoder.hpp"
#include "rob/models/heads.hpp"

namespace rob {

/// Encoder plus projection head, the unit that is trained, frozen,
/// checkpointed, and evaluated.
struct ModelBundle {
  Encoder encoder;
  ProjectionHead head;
  std::string role = "student";  // "teacher" | "student"
  bool frozen = false;

  std::vector<NodePtr> trainable_params() const {
    if (frozen) return {};
    std::vector<NodePtr> out = encoder.params().trainable();
    for (const auto& p : head.params().trainable()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    encoder.params().zero_grad();
    head.params().zero_grad();
  }

  void set_frozen(bool f) {
    frozen = f;
    encoder.params().set_trainable(!f);
    head.params().set_trainable(!f);
    if (!f && head.config().variant == HeadConfig::Variant::partial)
      head.params().freeze("prototypes");
  }

  std::size_t n_params() const { return encoder.n_params() + head.params().n_scalars(); }

  /// Order-sensitive digest over every parameter (encoder first, then head).
  std::uint64_t checksum() const {
    Fnv1a h;
    h.update(encoder.params().checksum());
    h.update(head.params().checksum());
    return h.digest();
  }

  ModelBundle clone() const {
    ModelBundle out;
    out.encoder = encoder.clone();
    out.head = head.clone();
    out.role = role;
    out.set_frozen(frozen);
    return out;
  }
};

inline ModelBundle build_bundle(const EncoderConfig& enc_cfg, HeadConfig head_cfg,
                                std::uint64_t seed, const std::string& role = "student") {
  head_cfg.input_dim = enc_cfg.width;
  ModelBundle b;
  b.encoder = build_encoder(enc_cfg, seed);
  b.head = build_head(head_cfg, mix64(seed ^ std::uint64_t(0x9E4D)));
  b.role = role;
  return b;
}

inline EncoderOutput encode(const ModelBundle& bundle, const Tensor& view_hwc,
                            const EncodeOptions& opt = {}) {
  return bundle.encoder.forward(view_hwc, opt);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCkptMagic[] = "ROBCKPT1";

inline void write_params(std::ostream& os, const ParamStore& ps) {
  io::write_u64(os, ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    io::write_string(os, ps.names()[i]);
    io::write_tensor(os, ps.node(i)->value);
  }
}

inline void read_params(std::istream& is, ParamStore& ps, const std::string& what) {
  const std::uint64_t n = io::read_u64(is);
  check(n == ps.size(), "checkpoint: " + what + " parameter count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = io::read_string(is);
    check(name == ps.names()[i], "checkpoint: " + what + " parameter order mismatch at " + name);
    Tensor t = io::read_tensor(is);
    check(t.same_shape(ps.node(i)->value),
          "checkpoint: " + what + " shape mismatch at " + name);
    ps.node(i)->value = std::move(t);
  }
}
}  // namespace detail

/// Streams one bundle: JSON header (configs, role, frozen flag) followed by
/// raw little-endian doubles, closed by the parameter checksum.
inline void save_bundle_stream(std::ostream& os, const ModelBundle& b) {
  nlohmann::json header = {{"encoder", b.encoder.config()},
                           {"head", b.head.config()},
                           {"role", b.role},
                           {"frozen", b.frozen}};
  io::write_string(os, header.dump());
  detail::write_params(os, b.encoder.params());
  detail::write_params(os, b.head.params());
  io::write_u64(os, b.checksum());
}

inline ModelBundle load_bundle_stream(std::istream& is) {
  nlohmann::json header = nlohmann::json::parse(io::read_string(is));
  EncoderConfig enc_cfg = header.at("encoder").get<EncoderConfig>();
  HeadConfig head_cfg = header.at("head").get<HeadConfig>();
  ModelBundle b = build_bundle(enc_cfg, head_cfg, 0, header.value("role", "student"));
  detail::read_params(is, b.encoder.params(), "encoder");
  detail::read_params(is, b.head.params(), "head");
  const std::uint64_t stored = io::read_u64(is);
  check(stored == b.checksum(), "checkpoint: parameter checksum mismatch (corrupt file?)");
  b.set_frozen(header.value("frozen", false));
  return b;
}

/// Model-only checkpoint file with a free-form JSON meta block (step, seed,
/// provenance). Round-trips bit-exactly.
inline void save_bundle(const std::string& path, const ModelBundle& b,
                        const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(detail::kCkptMagic, 8);
  io::write_string(os, meta.dump());
  save_bundle_stream(os, b);
  if (!os) throw IoError("short write: " + path);
}

struct LoadedBundle {
  ModelBundle bundle;
  nlohmann::json meta;
};

inline LoadedBundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != detail::kCkptMagic)
    throw IoError("not a checkpoint file: " + path);
  LoadedBundle out;
  out.meta = nlohmann::json::parse(io::read_string(is));
  out.bundle = load_bundle_stream(is);
  return out;
}

}  // namespace rob
