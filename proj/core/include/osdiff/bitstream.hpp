// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osdiff {

class BitstreamError : public std::runtime_error {
 public:
  explicit BitstreamError(const std::string& what) : std::runtime_error(what) {}
};

constexpr uint8_t kBitstreamVersion = 1;

/// .osdf container header. All integers are big-endian on the wire. The
/// fixed part is 30 bytes (magic through model hash), followed by one u32
/// payload length per code channel.
struct OsdfHeader {
  uint16_t width = 0;
  uint16_t height = 0;
  uint8_t code_channels = 0;
  uint8_t alphabet_bound = 0;  // L; symbols live in [-L, L]
  uint16_t t_star = 0;
  uint64_t decode_seed = 0;
  uint8_t lambda_config_id = 0;
  uint64_t model_hash = 0;
  std::vector<uint32_t> payload_lengths;  // code_channels entries

  static constexpr int kFixedBytes = 30;
  int header_bytes() const { return kFixedBytes + 4 * int(code_channels); }
};

struct OsdfFile {
  OsdfHeader header;
  std::vector<std::vector<uint8_t>> payloads;  // one per channel
};

/// Serializes header + per-channel payloads into the byte-aligned container.
std::vector<uint8_t> pack_bitstream(const OsdfHeader& header,
                                    const std::vector<std::vector<uint8_t>>& payloads);

/// Exact inverse of pack_bitstream. Unknown magic or version, declared
/// lengths overrunning the buffer, or trailing bytes raise BitstreamError.
OsdfFile unpack_bitstream(const uint8_t* data, size_t size);

inline OsdfFile unpack_bitstream(const std::vector<uint8_t>& bytes) {
  return unpack_bitstream(bytes.data(), bytes.size());
}

}  // namespace osdiff
