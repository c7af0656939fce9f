// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "osdiff/bitstream.hpp"

namespace osdiff {

namespace {

void be_put16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v & 0xFF));
}
void be_put32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
void be_put64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 7; i >= 0; --i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return uint16_t(uint16_t(p[0]) << 8 | p[1]);
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
  }
  uint64_t u64() {
    uint64_t v = 0;
    const uint8_t* p = take(8);
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > size_) throw BitstreamError("bitstream: truncated (need " + std::to_string(n) +
                                               " bytes at offset " + std::to_string(pos_) + ")");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  size_t remaining() const { return size_ - pos_; }

 private:
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> pack_bitstream(const OsdfHeader& header,
                                    const std::vector<std::vector<uint8_t>>& payloads) {
  if (payloads.size() != header.code_channels)
    throw BitstreamError("bitstream: payload count does not match code channels");
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(header.header_bytes()));
  out.push_back('O');
  out.push_back('S');
  out.push_back('D');
  out.push_back('F');
  out.push_back(kBitstreamVersion);
  be_put16(out, header.width);
  be_put16(out, header.height);
  out.push_back(header.code_channels);
  out.push_back(header.alphabet_bound);
  be_put16(out, header.t_star);
  be_put64(out, header.decode_seed);
  out.push_back(header.lambda_config_id);
  be_put64(out, header.model_hash);
  for (const auto& p : payloads) {
    if (p.size() > 0xFFFFFFFFull) throw BitstreamError("bitstream: payload too large");
    be_put32(out, static_cast<uint32_t>(p.size()));
  }
  for (const auto& p : payloads) out.insert(out.end(), p.begin(), p.end());
  return out;
}

OsdfFile unpack_bitstream(const uint8_t* data, size_t size) {
  Reader r(data, size);
  const uint8_t* magic = r.take(4);
  if (!(magic[0] == 'O' && magic[1] == 'S' && magic[2] == 'D' && magic[3] == 'F'))
    throw BitstreamError("bitstream: bad magic");
  uint8_t version = r.u8();
  if (version != kBitstreamVersion)
    throw BitstreamError("bitstream: unsupported version " + std::to_string(version));
  OsdfFile f;
  f.header.width = r.u16();
  f.header.height = r.u16();
  f.header.code_channels = r.u8();
  f.header.alphabet_bound = r.u8();
  f.header.t_star = r.u16();
  f.header.decode_seed = r.u64();
  f.header.lambda_config_id = r.u8();
  f.header.model_hash = r.u64();
  if (f.header.code_channels == 0) throw BitstreamError("bitstream: zero code channels");
  f.header.payload_lengths.resize(f.header.code_channels);
  uint64_t total = 0;
  for (int c = 0; c < f.header.code_channels; ++c) {
    f.header.payload_lengths[static_cast<size_t>(c)] = r.u32();
    total += f.header.payload_lengths[static_cast<size_t>(c)];
  }
  if (total != r.remaining())
    throw BitstreamError("bitstream: declared payload length " + std::to_string(total) +
                         " does not match remaining " + std::to_string(r.remaining()) + " bytes");
  f.payloads.resize(f.header.code_channels);
  for (int c = 0; c < f.header.code_channels; ++c) {
    uint32_t len = f.header.payload_lengths[static_cast<size_t>(c)];
    const uint8_t* p = r.take(len);
    f.payloads[static_cast<size_t>(c)].assign(p, p + len);
  }
  return f;
}

}  // namespace osdiff
