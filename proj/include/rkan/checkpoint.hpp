#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rkan/module.hpp"

namespace rkan {

// Flat container of named arrays, repeated until end of file:
//   u32 name_length | name bytes | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
// All integers and floats little-endian.

namespace detail {
template <typename U>
void put_le(std::vector<char>& out, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::vector<char>& in, std::size_t& pos, std::size_t bytes) {
  if (pos + bytes > in.size())
    throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += bytes;
  return v;
}
}  // namespace detail

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline std::vector<char> encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::vector<char> out;
  for (const auto& a : arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : a.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedArray> decode_checkpoint(const std::vector<char>& bytes) {
  std::vector<NamedArray> arrays;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    NamedArray a;
    const auto name_len = detail::get_le(bytes, pos, 4);
    if (pos + name_len > bytes.size())
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos));
    a.name.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + name_len));
    pos += name_len;
    const auto rank = detail::get_le(bytes, pos, 4);
    for (std::uint64_t r = 0; r < rank; ++r) a.shape.push_back(detail::get_le(bytes, pos, 8));
    const std::size_t n = shape_size(a.shape);
    a.data.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      a.data[i] = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

template <typename T>
std::vector<NamedArray> snapshot(const ParameterList<T>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto* p : params) {
    NamedArray a{p->name, p->value.shape(), {}};
    a.data.assign(p->value.data().begin(), p->value.data().end());
    out.push_back(std::move(a));
  }
  return out;
}

/// Copies arrays into params by name; shapes must match and every parameter
/// must be present.
template <typename T>
void restore(const ParameterList<T>& params, const std::vector<NamedArray>& arrays) {
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter " + p->name);
    if (it->second->shape != p->value.shape())
      throw FormatError("checkpoint shape " + to_string(it->second->shape) + " for " + p->name +
                        " does not match " + to_string(p->value.shape()));
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value[i] = static_cast<T>(it->second->data[i]);
  }
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path);
}

template <typename T>
void save_checkpoint(const std::string& path, const ParameterList<T>& params) {
  write_file_bytes(path, encode_checkpoint(snapshot(params)));
}

template <typename T>
void load_checkpoint(const std::string& path, const ParameterList<T>& params) {
  restore(params, decode_checkpoint(read_file_bytes(path)));
}

}  // namespace rkan
