// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osdiff {

constexpr int kProbBits = 16;
constexpr uint32_t kProbScale = 1u << kProbBits;  // total CDF mass per table

class CodingError : public std::runtime_error {
 public:
  explicit CodingError(const std::string& what) : std::runtime_error(what) {}
};

/// Frozen integer CDF over an alphabet: cum[0] = 0, cum[n] = 65536, strictly
/// increasing (every symbol carries nonzero mass).
struct CdfTable {
  std::vector<uint32_t> cum;

  int alphabet_size() const { return static_cast<int>(cum.size()) - 1; }
  uint32_t freq(int symbol) const {
    return cum[static_cast<size_t>(symbol) + 1] - cum[static_cast<size_t>(symbol)];
  }
  void validate() const;

  static CdfTable uniform(int alphabet_size);
  static CdfTable from_counts(const std::vector<uint64_t>& counts);

  /// -sum log2 p(s) of a symbol stream under this table.
  double cross_entropy_bits(const std::vector<int>& symbols) const;
};

/// 32-bit arithmetic encoder with 16-bit probability precision. Carries are
/// resolved by pending-bit counting before emission, so output bytes are
/// never patched retroactively. Single-use: encode symbols, then finish().
class RangeEncoder {
 public:
  explicit RangeEncoder(const CdfTable& table);
  void encode(int symbol);
  std::vector<uint8_t> finish();

 private:
  void emit_bit(uint32_t bit);
  const CdfTable& table_;
  uint32_t lo_ = 0;
  uint32_t hi_ = 0xFFFFFFFFu;
  uint64_t pending_ = 0;
  std::vector<uint8_t> bytes_;
  uint8_t bit_buf_ = 0;
  int bit_count_ = 0;
  bool finished_ = false;
};

/// Mirror of RangeEncoder; reads virtual zero bits past the payload end and
/// never touches bytes beyond the declared slice.
class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* payload, size_t size, const CdfTable& table);
  int decode();

 private:
  uint32_t next_bit();
  const CdfTable& table_;
  const uint8_t* payload_;
  size_t size_;
  size_t byte_pos_ = 0;
  int bit_pos_ = 0;
  uint32_t lo_ = 0;
  uint32_t hi_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

std::vector<uint8_t> range_encode(const std::vector<int>& symbols, const CdfTable& table);
std::vector<int> range_decode(const uint8_t* payload, size_t size, size_t count, const CdfTable& table);

inline std::vector<int> range_decode(const std::vector<uint8_t>& payload, size_t count,
                                     const CdfTable& table) {
  return range_decode(payload.data(), payload.size(), count, table);
}

}  // namespace osdiff
