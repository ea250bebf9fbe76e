#pragma once

// ".tns" tensor files: "TNS1", u32 LE rank, rank × u32 LE dims, then the
// float64 LE payload in row-major order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

static_assert(std::endian::native == std::endian::little, ".tns I/O assumes a little-endian host");

inline std::vector<char> encode_tns(const Shape& shape, std::span<const double> values) {
  require(shape_numel(shape) == values.size(), "encode_tns: payload does not match shape " + shape_str(shape));
  std::vector<char> buf;
  buf.reserve(8 + 4 * shape.size() + 8 * values.size());
  auto put_u32 = [&buf](std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.insert(buf.end(), b, b + 4);
  };
  buf.insert(buf.end(), {'T', 'N', 'S', '1'});
  put_u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(static_cast<std::uint32_t>(d));
  const auto* raw = reinterpret_cast<const char*>(values.data());
  buf.insert(buf.end(), raw, raw + values.size() * sizeof(double));
  return buf;
}

inline Tensor decode_tns(const std::vector<char>& buf) {
  auto fail = [](const std::string& why) { throw std::runtime_error("malformed .tns data: " + why); };
  if (buf.size() < 8 || std::memcmp(buf.data(), "TNS1", 4) != 0) fail("bad magic");
  auto get_u32 = [&buf](std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    return v;
  };
  const std::uint32_t rank = get_u32(4);
  if (rank == 0 || buf.size() < 8 + 4ull * rank) fail("truncated header");
  Shape shape(rank);
  for (std::uint32_t a = 0; a < rank; ++a) {
    shape[a] = get_u32(8 + 4 * a);
    if (shape[a] == 0) fail("zero dimension");
  }
  const std::size_t off = 8 + 4ull * rank;
  const std::size_t n = shape_numel(shape);
  if (buf.size() != off + n * sizeof(double)) fail("payload length does not match dims");
  std::vector<double> values(n);
  std::memcpy(values.data(), buf.data() + off, n * sizeof(double));
  return Tensor(std::move(shape), std::move(values));
}

inline void write_tns(const std::filesystem::path& path, const Shape& shape, std::span<const double> values) {
  const auto buf = encode_tns(shape, values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_tns(const std::filesystem::path& path, const Tensor& t) { write_tns(path, t.shape(), t.values()); }

inline Tensor read_tns(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tns(buf);
}

}  // namespace bcd
