#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nsbg/ad/nn.hpp"
#include "nsbg/error.hpp"

namespace nsbg::ad {

// Flat tensor container:
//   "NSBGCKPT" | u32 version | u32 count
//   per tensor: u32 name_len | name | u32 rank | u32 dims[rank] | f32 values[]
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[8] = {'N', 'S', 'B', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& data) : d_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(d_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& d_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const std::vector<std::pair<std::string, NamedArray>>& tensors) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& [name, arr] : tensors) {
    if (numel(arr.shape) != arr.values.size()) throw ShapeError("checkpoint tensor " + name + " has inconsistent shape");
    detail::put_u32(out, std::uint32_t(name.size()));
    out += name;
    detail::put_u32(out, std::uint32_t(arr.shape.size()));
    for (auto d : arr.shape) detail::put_u32(out, std::uint32_t(d));
    for (float f : arr.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<std::pair<std::string, NamedArray>> parse_checkpoint(const std::string& data) {
  if (data.size() < 8 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0) throw FormatError("not an NSBG checkpoint");
  detail::ByteReader r(data);
  r.bytes(8);
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<std::pair<std::string, NamedArray>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    std::string name = r.bytes(len);
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint tensor " + name + " has implausible rank");
    NamedArray a;
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.u32());
    const std::size_t n = numel(a.shape);
    if (n > (std::size_t(1) << 31)) throw FormatError("checkpoint tensor " + name + " too large");
    a.values.resize(n);
    for (auto& v : a.values) v = std::bit_cast<float>(r.u32());
    out.emplace_back(std::move(name), std::move(a));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return out;
}

template <class T>
std::vector<std::pair<std::string, NamedArray>> snapshot(const ParameterSet<T>& params) {
  std::vector<std::pair<std::string, NamedArray>> out;
  for (const auto& [name, t] : params) out.push_back({name, {t.shape(), std::vector<float>(t.values().begin(), t.values().end())}});
  return out;
}

// Copies stored values into `params`; every parameter must be present with the same shape.
template <class T>
void restore(ParameterSet<T>& params, const std::vector<std::pair<std::string, NamedArray>>& stored) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& [n, a] : stored) by_name[n] = &a;
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second->shape != t.shape())
      throw FormatError("checkpoint tensor " + name + " has shape " + to_string(it->second->shape) + ", model expects " +
                        to_string(t.shape()));
    std::copy(it->second->values.begin(), it->second->values.end(), t.values().begin());
  }
}

template <class T>
void save_checkpoint(const ParameterSet<T>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path);
  const auto bytes = serialize_checkpoint(snapshot(params));
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw FormatError("write failed: " + path);
}

template <class T>
void load_checkpoint(ParameterSet<T>& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  restore(params, parse_checkpoint(data));
}

}  // namespace nsbg::ad
