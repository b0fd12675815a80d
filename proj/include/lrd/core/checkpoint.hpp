#pragma once

// Little-endian binary container shared by model and optimizer checkpoints.
// Layout (see docs/checkpoint-format.md):
//
//   char[8]  magic "LRDCKPT1"
//   u32      format version (1)
//   u32      payload kind
//   u32      H, then H x u64 header words
//   u32      S, then S x f64 scalars
//   u32      T, then T x { u32 rank, rank x u64 extents, prod(extents) x f64 }

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"
#include "lrd/core/tensor.hpp"

namespace lrd {

enum class PayloadKind : std::uint32_t { mlp = 1, optimizer_state = 2 };

struct Container {
  PayloadKind kind = PayloadKind::mlp;
  std::vector<std::uint64_t> header;
  std::vector<double> scalars;
  std::vector<Tensor> tensors;
};

inline constexpr std::string_view checkpoint_magic = "LRDCKPT1";
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { bytes_.append(s); }
  std::string take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  /// Reads an element count and rejects it if the rest of the input cannot
  /// hold that many elements of `width` bytes.
  std::size_t count(std::size_t width, const char* what) {
    const std::size_t at = pos_;
    const std::size_t n = u32(what);
    if (n > remaining() / width)
      throw FormatError(std::string(what) + " " + std::to_string(n) + " exceeds the remaining input", at);
    return n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("truncated input reading ") + what + ": need " +
                            std::to_string(n) + " bytes, have " + std::to_string(bytes_.size() - pos_),
                        pos_);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Container& c) {
  detail::ByteWriter w;
  w.raw(checkpoint_magic);
  w.u32(checkpoint_version);
  w.u32(static_cast<std::uint32_t>(c.kind));
  w.u32(static_cast<std::uint32_t>(c.header.size()));
  for (auto h : c.header) w.u64(h);
  w.u32(static_cast<std::uint32_t>(c.scalars.size()));
  for (double s : c.scalars) w.f64(s);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

inline Container decode_container(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(checkpoint_magic.size(), "magic") != checkpoint_magic)
    throw FormatError("bad checkpoint magic, expected \"LRDCKPT1\"", 0);
  const std::size_t version_at = r.offset();
  if (auto v = r.u32("version"); v != checkpoint_version)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  Container c;
  const std::size_t kind_at = r.offset();
  const auto kind = r.u32("payload kind");
  if (kind != 1 && kind != 2) throw FormatError("unknown payload kind " + std::to_string(kind), kind_at);
  c.kind = static_cast<PayloadKind>(kind);
  c.header.resize(r.count(8, "header count"));
  for (auto& h : c.header) h = r.u64("header word");
  c.scalars.resize(r.count(8, "scalar count"));
  for (auto& s : c.scalars) s = r.f64("scalar");
  const auto n_tensors = r.count(4, "tensor count");
  c.tensors.reserve(n_tensors);
  for (std::size_t k = 0; k < n_tensors; ++k) {
    const std::size_t tensor_at = r.offset();
    Shape shape(r.count(8, "tensor rank"));
    std::size_t count = 1;
    for (auto& e : shape) {
      e = r.u64("tensor extent");
      if (e == 0) throw FormatError("zero tensor extent", tensor_at);
      if (e > r.remaining() / 8 / count + 1) throw FormatError("tensor extent exceeds the remaining input", tensor_at);
      count *= e;
    }
    if (count > r.remaining() / 8)
      throw FormatError("truncated tensor data: need " + std::to_string(count) + " doubles", r.offset());
    std::vector<double> data(count);
    for (auto& v : data) v = r.f64("tensor data");
    c.tensors.emplace_back(std::move(shape), std::move(data));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, encode_container(c));
}

inline Container load_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

}  // namespace lrd
