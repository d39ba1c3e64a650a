#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "proprio/crc.hpp"
#include "proprio/tensor.hpp"

namespace proprio::tensor {

// Checkpoint container: magic "PRPC", u32 version, u32 architecture id,
// u32 parameter count, per parameter {u32 ndim, u64 dims...}, then all
// parameter data as little-endian 64-bit floats in declaration order,
// trailing CRC-32 over everything before it.

constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const std::uint8_t* b) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t get_u64(const std::uint8_t* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_params(std::uint32_t arch_id,
                                                  const std::vector<Var>& params) {
  std::vector<std::uint8_t> out = {'P', 'R', 'P', 'C'};
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, arch_id);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.shape.size()));
    for (auto d : p->value.shape) detail::put_u64(out, d);
  }
  for (const auto& p : params)
    for (double v : p->value.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      detail::put_u64(out, bits);
    }
  std::uint32_t crc = crc32_ieee(out.data(), out.size());
  detail::put_u32(out, crc);
  return out;
}

/// Loads parameter values in place; shapes must match the receiving
/// parameter list (which encodes the architecture).
inline void deserialize_params(const std::vector<std::uint8_t>& bytes, std::uint32_t expect_arch,
                               const std::vector<Var>& params) {
  if (bytes.size() < 20) throw CheckpointError("checkpoint: truncated");
  if (bytes[0] != 'P' || bytes[1] != 'R' || bytes[2] != 'P' || bytes[3] != 'C')
    throw CheckpointError("checkpoint: bad magic");
  std::uint32_t stored_crc = detail::get_u32(bytes.data() + bytes.size() - 4);
  if (crc32_ieee(bytes.data(), bytes.size() - 4) != stored_crc)
    throw CheckpointError("checkpoint: CRC mismatch");
  std::size_t at = 4;
  auto read_u32 = [&]() {
    if (at + 4 > bytes.size()) throw CheckpointError("checkpoint: truncated");
    std::uint32_t v = detail::get_u32(bytes.data() + at);
    at += 4;
    return v;
  };
  auto read_u64 = [&]() {
    if (at + 8 > bytes.size()) throw CheckpointError("checkpoint: truncated");
    std::uint64_t v = detail::get_u64(bytes.data() + at);
    at += 8;
    return v;
  };
  if (read_u32() != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
  if (read_u32() != expect_arch) throw CheckpointError("checkpoint: architecture id mismatch");
  if (read_u32() != params.size()) throw CheckpointError("checkpoint: parameter count mismatch");
  for (const auto& p : params) {
    std::uint32_t ndim = read_u32();
    if (ndim != p->value.shape.size()) throw CheckpointError("checkpoint: rank mismatch");
    for (auto d : p->value.shape)
      if (read_u64() != d) throw CheckpointError("checkpoint: shape mismatch");
  }
  for (const auto& p : params)
    for (auto& v : p->value.data) {
      std::uint64_t bits = read_u64();
      std::memcpy(&v, &bits, sizeof(v));
    }
  if (at + 4 != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
}

inline void save_checkpoint(const std::string& path, std::uint32_t arch_id,
                            const std::vector<Var>& params) {
  auto bytes = serialize_params(arch_id, params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void load_checkpoint(const std::string& path, std::uint32_t expect_arch,
                            const std::vector<Var>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  deserialize_params(bytes, expect_arch, params);
}

}  // namespace proprio::tensor
