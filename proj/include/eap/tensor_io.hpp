#pragma once

// TNSR binary tensor format:
//   "TNSR" | u8 version (0x01) | u8 rank | rank x u32 LE dims | f32 LE payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "eap/tensor.hpp"

namespace eap {

class TensorIoError : public ConfigError {
 public:
  enum class Kind { kOpen, kBadMagic, kBadVersion, kTruncatedHeader, kTruncatedPayload, kDimOverflow, kWrite };

  TensorIoError(Kind kind, const std::string& what) : ConfigError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline constexpr std::array<char, 4> kTensorMagic = {'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kTensorVersion = 0x01;

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
inline void write_atomically(const std::filesystem::path& path, const void* bytes, std::size_t n) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw TensorIoError(TensorIoError::Kind::kWrite, "cannot open " + tmp.string() + " for writing");
    os.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
    if (!os) throw TensorIoError(TensorIoError::Kind::kWrite, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
  static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
  if (t.rank() > 255) throw TensorIoError(TensorIoError::Kind::kDimOverflow, "tensor rank exceeds 255");
  std::vector<unsigned char> out(detail::kTensorMagic.begin(), detail::kTensorMagic.end());
  out.push_back(detail::kTensorVersion);
  out.push_back(static_cast<unsigned char>(t.rank()));
  for (std::size_t d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw TensorIoError(TensorIoError::Kind::kDimOverflow, "tensor dim exceeds u32");
    }
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Tensor decode_tensor(std::span<const unsigned char> bytes, const std::string& origin = "<memory>") {
  using Kind = TensorIoError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), detail::kTensorMagic.data(), 4) != 0) {
    throw TensorIoError(Kind::kBadMagic, origin + ": bad magic (expected TNSR)");
  }
  if (bytes.size() < 6) throw TensorIoError(Kind::kTruncatedHeader, origin + ": truncated header");
  if (bytes[4] != detail::kTensorVersion) {
    throw TensorIoError(Kind::kBadVersion, origin + ": unsupported version " + std::to_string(bytes[4]));
  }
  const std::size_t rank = bytes[5];
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() < header) throw TensorIoError(Kind::kTruncatedHeader, origin + ": truncated header");

  std::vector<std::size_t> dims(rank);
  std::uint64_t elems = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    dims[i] = detail::get_u32(bytes.data() + 6 + 4 * i);
    // Element count must stay addressable in bytes.
    if (dims[i] != 0 && elems > (std::numeric_limits<std::uint64_t>::max() / 8) / dims[i]) {
      throw TensorIoError(Kind::kDimOverflow, origin + ": declared element count overflows");
    }
    elems *= dims[i];
  }
  if (elems > (bytes.size() - header) / 4) {
    throw TensorIoError(Kind::kTruncatedPayload, origin + ": header declares " + std::to_string(elems) +
                                                     " elements, payload holds " +
                                                     std::to_string((bytes.size() - header) / 4));
  }
  std::vector<float> data(static_cast<std::size_t>(elems));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + header + 4 * i));
  }
  return Tensor(std::move(dims), std::move(data));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto bytes = encode_tensor(t);
  detail::write_atomically(path, bytes.data(), bytes.size());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorIoError(TensorIoError::Kind::kOpen, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

}  // namespace eap
