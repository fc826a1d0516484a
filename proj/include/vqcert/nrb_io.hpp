#pragma once

// NRB1 tensor files: "NRB1", uint32 LE rank, rank x uint32 LE dims, then the
// row-major payload as little-endian IEEE-754 binary64.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vqcert/errors.hpp"
#include "vqcert/tensor.hpp"

namespace vqcert::nrb {

inline constexpr std::array<char, 4> kMagic = {'N', 'R', 'B', '1'};
inline constexpr const char* kExtension = ".nrb";

struct Array {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("NRB1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw io_error("NRB1: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write(std::ostream& os, const Array& a) {
  require(a.data.size() == a.element_count(), "NRB1: payload size does not match dims");
  os.write(kMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) detail::put_u32(os, d);
  for (double v : a.data) detail::put_f64(os, v);
  if (!os) throw io_error("NRB1: write failed");
}

inline Array read(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw io_error("NRB1: bad magic");
  Array a;
  const std::uint32_t rank = detail::get_u32(is);
  if (rank == 0 || rank > 8) throw io_error("NRB1: unsupported rank " + std::to_string(rank));
  a.dims.resize(rank);
  for (auto& d : a.dims) {
    d = detail::get_u32(is);
    if (d == 0) throw io_error("NRB1: zero dimension");
  }
  const std::size_t n = a.element_count();
  if (n > (std::size_t{1} << 31)) throw io_error("NRB1: payload too large");
  a.data.resize(n);
  for (auto& v : a.data) v = detail::get_f64(is);
  return a;
}

inline void write_file(const std::filesystem::path& path, const Array& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path.string());
  write(os, a);
}

inline Array read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path.string());
  return read(is);
}

inline Array from_tensor(const Tensor& t) {
  return {{static_cast<std::uint32_t>(t.channels()), static_cast<std::uint32_t>(t.height()),
           static_cast<std::uint32_t>(t.width())},
          {t.values().begin(), t.values().end()}};
}

inline Tensor to_tensor(const Array& a) {
  if (a.dims.size() != 3) throw io_error("NRB1: expected a rank-3 tensor, got rank " + std::to_string(a.dims.size()));
  if (!all_finite(a.data)) throw io_error("NRB1: non-finite values");
  return Tensor({a.dims[0], a.dims[1], a.dims[2]}, a.data);
}

inline Array from_kernel(const Kernel4& k) {
  return {{static_cast<std::uint32_t>(k.out_channels()), static_cast<std::uint32_t>(k.in_channels()),
           static_cast<std::uint32_t>(k.kh()), static_cast<std::uint32_t>(k.kw())},
          {k.values().begin(), k.values().end()}};
}

inline Kernel4 to_kernel(const Array& a) {
  if (a.dims.size() != 4) throw io_error("NRB1: expected a rank-4 kernel, got rank " + std::to_string(a.dims.size()));
  if (!all_finite(a.data)) throw io_error("NRB1: non-finite values");
  return Kernel4(a.dims[0], a.dims[1], a.dims[2], a.dims[3], a.data);
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, from_tensor(t)); }
inline Tensor load_tensor(const std::filesystem::path& path) { return to_tensor(read_file(path)); }

// Frame directories hold NRB1 files whose zero-padded numeric names define
// their order.
inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw io_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == kExtension) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<Tensor> load_frames(const std::filesystem::path& dir) {
  std::vector<Tensor> frames;
  for (const auto& p : list_frames(dir)) frames.push_back(load_tensor(p));
  return frames;
}

inline std::string frame_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index << kExtension;
  return os.str();
}

inline void save_frames(const std::filesystem::path& dir, const std::vector<Tensor>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) save_tensor(dir / frame_name(i), frames[i]);
}

}  // namespace vqcert::nrb
