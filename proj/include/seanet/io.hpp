#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seanet/tensor.hpp"

// SGT1 binary tensor files, used for model weights and the preprocessed
// image cache. Layout: magic "SGT1", u8 dtype (0 = f32, 1 = f64), u8 ndim,
// ndim x u32 little-endian dims, then the row-major little-endian payload.

namespace seanet {

static_assert(std::endian::native == std::endian::little,
              "SGT1 I/O assumes a little-endian host");

namespace detail {

template <typename S>
constexpr std::uint8_t sgt_dtype();
template <>
constexpr std::uint8_t sgt_dtype<float>() {
  return 0;
}
template <>
constexpr std::uint8_t sgt_dtype<double>() {
  return 1;
}

}  // namespace detail

template <typename S>
void write_tensor(const std::filesystem::path& path, const Tensor<S>& t) {
  if (t.empty()) throw IoError("cannot write empty tensor to " + path.string());
  if (t.rank() > 255) throw IoError("tensor rank exceeds SGT1 limit");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write("SGT1", 4);
  const std::uint8_t dtype = detail::sgt_dtype<S>();
  const std::uint8_t ndim = static_cast<std::uint8_t>(t.rank());
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(ndim));
  for (std::int64_t i = 0; i < t.rank(); ++i) {
    const std::uint32_t d = static_cast<std::uint32_t>(t.dim(i));
    out.write(reinterpret_cast<const char*>(&d), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(S))));
  if (!out) throw IoError("failed writing tensor to " + path.string());
}

/// Reads an SGT1 file, converting the stored precision to S when they differ.
template <typename S>
Tensor<S> read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SGT1", 4) != 0) {
    throw IoError(path.string() + " is not an SGT1 tensor file");
  }
  const int dtype = in.get();
  const int ndim = in.get();
  if (dtype < 0 || dtype > 1 || ndim < 1) {
    throw IoError(path.string() + " has an invalid SGT1 header");
  }
  std::vector<std::int64_t> dims(static_cast<std::size_t>(ndim));
  for (auto& d : dims) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    d = v;
  }
  if (!in) throw IoError(path.string() + " is truncated");
  Shape shape(dims);
  Tensor<S> t(shape);
  const std::int64_t n = shape.numel();
  if (dtype == detail::sgt_dtype<S>()) {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(n * static_cast<std::int64_t>(sizeof(S))));
  } else if (dtype == 0) {
    std::vector<float> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    for (std::int64_t i = 0; i < n; ++i) t.data()[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
  } else {
    std::vector<double> buf(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 8));
    for (std::int64_t i = 0; i < n; ++i) t.data()[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
  }
  if (!in) throw IoError(path.string() + " is truncated");
  return t;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace seanet
