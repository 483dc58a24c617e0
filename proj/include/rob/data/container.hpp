// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <optional>
#include <string>

#include "rob/core/serialize.hpp"
#include "rob/data/image.hpp"

namespace rob {

/// Simple binary container for datasets: fixed magic, counts/sizes/seed
/// header, then raw per-record arrays. Round-trips bit-exact.
namespace container {

constexpr char kDatasetMagic[8] = {'R', 'O', 'B', 'D', 'S', 'E', 'T', '1'};

inline void save_dataset(const Dataset& ds, const std::string& path,
                         std::uint64_t seed = 0) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write dataset container: " + path);
  f.write(kDatasetMagic, sizeof kDatasetMagic);
  io::write_u64(f, ds.size());
  io::write_u64(f, seed);
  for (const auto& rec : ds) {
    io::write_string(f, rec.id);
    io::write_u32(f, rec.label ? 1 : 0);
    io::write_u32(f, rec.label ? static_cast<std::uint32_t>(*rec.label) : 0);
    io::write_tensor(f, rec.pixels);
  }
  if (!f) throw IoError("failed writing dataset container: " + path);
}

inline Dataset load_dataset(const std::string& path, std::uint64_t* seed_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset container: " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kDatasetMagic, sizeof magic) != 0)
    throw IoError("not a dataset container: " + path);
  const auto n = io::read_u64(f);
  const auto seed = io::read_u64(f);
  if (seed_out) *seed_out = seed;
  Dataset ds;
  ds.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ImageRecord rec;
    rec.id = io::read_string(f);
    const bool has_label = io::read_u32(f) != 0;
    const auto label = io::read_u32(f);
    if (has_label) rec.label = static_cast<int>(label);
    rec.pixels = io::read_tensor(f);
    ds.push_back(std::move(rec));
  }
  return ds;
}

constexpr char kMatrixMagic[8] = {'R', 'O', 'B', 'M', 'A', 'T', 'R', '1'};

/// Generic labeled-matrix container (cached feature tables).
inline void save_matrix(const Tensor& m, const std::vector<int>& labels,
                        const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write matrix container: " + path);
  f.write(kMatrixMagic, sizeof kMatrixMagic);
  io::write_u64(f, labels.size());
  for (int l : labels) io::write_u32(f, static_cast<std::uint32_t>(l));
  io::write_tensor(f, m);
  if (!f) throw IoError("failed writing matrix container: " + path);
}

inline Tensor load_matrix(const std::string& path, std::vector<int>* labels_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open matrix container: " + path);
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0)
    throw IoError("not a matrix container: " + path);
  const auto n = io::read_u64(f);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(io::read_u32(f));
  if (labels_out) *labels_out = std::move(labels);
  return io::read_tensor(f);
}

}  // namespace container
}  // namespace rob
