#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "avfusion/tensor.hpp"

// TNSR container: "TNSR", u8 dtype (0 = f32, 1 = f64), u32 rank, u32 dims,
// then the row-major payload. All integers and values are little-endian.
namespace avf::tnsr {

static_assert(std::endian::native == std::endian::little,
              "the TNSR reader and writer assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct Header {
  DType dtype = DType::f32;
  Shape shape;
};

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::string& where) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw FormatError(where + ": truncated TNSR header");
  return v;
}

}  // namespace detail

template <class T>
void write(std::ostream& os, const Tensor<T>& t) {
  os.write("TNSR", 4);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("TNSR write failed");
}

inline Header read_header(std::istream& is, const std::string& where = "TNSR") {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "TNSR", 4) != 0)
    throw FormatError(where + ": missing TNSR magic");
  const auto code = detail::get<std::uint8_t>(is, where);
  if (code > 1) throw FormatError(where + ": unknown dtype code " + std::to_string(code));
  Header h;
  h.dtype = static_cast<DType>(code);
  const auto rank = detail::get<std::uint32_t>(is, where);
  if (rank == 0 || rank > 16) throw FormatError(where + ": unsupported rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = detail::get<std::uint32_t>(is, where);
    if (d == 0) throw FormatError(where + ": zero-sized dimension");
    h.shape.push_back(d);
  }
  return h;
}

/// Reads a tensor of either stored dtype, converting to T.
template <class T>
Tensor<T> read(std::istream& is, const std::string& where = "TNSR") {
  const Header h = read_header(is, where);
  const std::size_t n = numel(h.shape);
  auto load = [&]<class U>(U*) {
    std::vector<U> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(U))))
      throw FormatError(where + ": truncated TNSR payload");
    if constexpr (std::is_same_v<U, T>) {
      return Tensor<T>(h.shape, std::move(raw));
    } else {
      return Tensor<U>(h.shape, std::move(raw)).template cast<T>();
    }
  };
  if (h.dtype == DType::f32) return load(static_cast<float*>(nullptr));
  return load(static_cast<double*>(nullptr));
}

template <class T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write(os, t);
}

template <class T>
Tensor<T> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read<T>(is, path.string());
}

inline Header peek(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_header(is, path.string());
}

}  // namespace avf::tnsr
