// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rob/core/tensor.hpp"

namespace rob {

/// FNV-1a 64-bit over raw bytes; used for checkpoint digests and the
/// frozen-parameter checksums.
class Fnv1a {
public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(std::uint64_t v) { update(&v, sizeof v); }
  void update(const Tensor& t) {
    for (auto d : t.shape()) {
      std::uint64_t v = d;
      update(&v, sizeof v);
    }
    update(t.data(), t.size() * sizeof(real));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << state_;
    return os.str();
  }

private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(real)));
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check(bool(is), "read_u32: truncated stream");
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check(bool(is), "read_u64: truncated stream");
  return v;
}
inline std::string read_string(std::istream& is) {
  auto n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  check(bool(is), "read_string: truncated stream");
  return s;
}
inline Tensor read_tensor(std::istream& is) {
  auto nd = read_u32(is);
  std::vector<std::size_t> shape(nd);
  for (auto& d : shape) d = read_u64(is);
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(real)));
  check(bool(is), "read_tensor: truncated stream");
  return t;
}

inline std::string file_digest_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file for digest: " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(f.gcount()));
  }
  return h.hex();
}

}  // namespace io
}  // namespace rob
