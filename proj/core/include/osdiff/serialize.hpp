// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdiff/params.hpp"
#include "osdiff/tensor.hpp"

namespace osdiff {

class ModelFileError : public std::runtime_error {
 public:
  explicit ModelFileError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void le_put16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xFF));
  out.push_back(uint8_t(v >> 8));
}
inline void le_put32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
inline void le_put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  le_put32(out, u);
}

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return uint16_t(p[0]) | uint16_t(p[1]) << 8;
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(size_t n) {
    const uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == size_; }
  size_t remaining() const { return size_ - pos_; }

 private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > size_) throw ModelFileError("model file: truncated");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

inline uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

constexpr uint16_t kModelFormatVersion = 1;

/// Serializes a ParamStore to the versioned little-endian "OSDM" layout:
/// magic, format version u16, tensor count u32, then per tensor (in name
/// order): name length u16 + UTF-8 name, rank u8, dims as u32, raw f32
/// values. Values are stored single-precision regardless of the in-memory
/// scalar type.
template <class S>
std::vector<uint8_t> serialize_store(const ParamStoreT<S>& store) {
  std::vector<uint8_t> out;
  out.push_back('O');
  out.push_back('S');
  out.push_back('D');
  out.push_back('M');
  detail::le_put16(out, kModelFormatVersion);
  detail::le_put32(out, static_cast<uint32_t>(store.size()));
  store.for_each([&](const std::string& name, const ParamEntry<S>& e) {
    if (name.size() > 0xFFFF) throw ModelFileError("model file: name too long");
    detail::le_put16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<uint8_t>(e.value.rank()));
    for (int d : e.value.shape()) detail::le_put32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < e.value.numel(); ++i) detail::le_put_f32(out, static_cast<float>(e.value[i]));
  });
  return out;
}

/// Content hash of a serialized model; stored in every bitstream header so
/// the decoder can verify it holds the matching model.
inline uint64_t model_bytes_hash(const std::vector<uint8_t>& bytes) {
  return detail::fnv1a64(bytes.data(), bytes.size());
}

struct LoadedTensor {
  Shape shape;
  std::vector<float> data;
};

/// Parses OSDM bytes into named tensors. Group/trainable assignment is the
/// caller's job (the model knows its own layout).
inline std::map<std::string, LoadedTensor> parse_model_bytes(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  if (r.remaining() < 4 || r.str(4) != "OSDM") throw ModelFileError("model file: bad magic");
  uint16_t ver = r.u16();
  if (ver != kModelFormatVersion)
    throw ModelFileError("model file: unsupported format version " + std::to_string(ver));
  uint32_t count = r.u32();
  std::map<std::string, LoadedTensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t nlen = r.u16();
    std::string name = r.str(nlen);
    uint8_t rank = r.u8();
    Shape shape(rank);
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<size_t>(d)] = static_cast<int>(r.u32());
      numel *= shape[static_cast<size_t>(d)];
    }
    if (numel < 0 || static_cast<size_t>(numel) * 4 > r.remaining())
      throw ModelFileError("model file: tensor '" + name + "' overruns file");
    LoadedTensor t;
    t.shape = std::move(shape);
    t.data.resize(static_cast<size_t>(numel));
    for (int64_t k = 0; k < numel; ++k) t.data[static_cast<size_t>(k)] = r.f32();
    if (out.count(name)) throw ModelFileError("model file: duplicate tensor '" + name + "'");
    out.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw ModelFileError("model file: trailing bytes");
  return out;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed: " + path);
  return bytes;
}

}  // namespace osdiff
