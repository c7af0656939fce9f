// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "osdiff/range_coder.hpp"

#include <algorithm>
#include <cmath>

namespace osdiff {

namespace {
constexpr uint32_t kHalf = 0x80000000u;
constexpr uint32_t kQuarter = 0x40000000u;
constexpr uint32_t kThreeQuarter = 0xC0000000u;
}  // namespace

void CdfTable::validate() const {
  if (cum.size() < 2) throw CodingError("cdf table: empty alphabet");
  if (cum.front() != 0) throw CodingError("cdf table: cum[0] != 0");
  if (cum.back() != kProbScale) throw CodingError("cdf table: total mass != 65536");
  for (size_t i = 1; i < cum.size(); ++i)
    if (cum[i] <= cum[i - 1]) throw CodingError("cdf table: not strictly increasing");
}

CdfTable CdfTable::uniform(int alphabet_size) {
  if (alphabet_size < 1 || alphabet_size > int(kProbScale))
    throw CodingError("cdf table: bad alphabet size");
  CdfTable t;
  t.cum.resize(static_cast<size_t>(alphabet_size) + 1);
  for (int i = 0; i <= alphabet_size; ++i)
    t.cum[static_cast<size_t>(i)] =
        static_cast<uint32_t>((uint64_t(kProbScale) * uint64_t(i)) / uint64_t(alphabet_size));
  t.validate();
  return t;
}

// Largest-remainder apportionment of 65536 with a floor of one count per
// symbol, so the coder never sees a zero-mass symbol.
CdfTable CdfTable::from_counts(const std::vector<uint64_t>& counts) {
  size_t n = counts.size();
  if (n < 1 || n > kProbScale) throw CodingError("cdf table: bad alphabet size");
  uint64_t total = 0;
  for (uint64_t c : counts) total += c;
  if (total == 0) throw CodingError("cdf table: all-zero counts");

  std::vector<uint64_t> scaled(n);
  std::vector<double> remainder(n);
  uint64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    double exact = double(counts[i]) * double(kProbScale) / double(total);
    scaled[i] = static_cast<uint64_t>(exact);
    remainder[i] = exact - double(scaled[i]);
    if (scaled[i] == 0) {
      scaled[i] = 1;
      remainder[i] = -1.0;  // already promoted, lowest priority for extras
    }
    assigned += scaled[i];
  }
  if (assigned < kProbScale) {
    // Hand out the deficit by largest remainder (ties by index for determinism).
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
    uint64_t deficit = kProbScale - assigned;
    for (size_t i = 0; deficit > 0; i = (i + 1) % n) {
      scaled[order[i]] += 1;
      --deficit;
    }
  } else if (assigned > kProbScale) {
    // Reclaim the surplus one count at a time from the largest bucket,
    // never shaving a symbol below one.
    uint64_t surplus = assigned - kProbScale;
    while (surplus > 0) {
      size_t best = 0;
      for (size_t i = 1; i < n; ++i)
        if (scaled[i] > scaled[best]) best = i;
      if (scaled[best] <= 1) throw CodingError("cdf table: alphabet too large for 16-bit mass");
      scaled[best] -= 1;
      --surplus;
    }
  }

  CdfTable t;
  t.cum.resize(n + 1);
  t.cum[0] = 0;
  for (size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + static_cast<uint32_t>(scaled[i]);
  t.validate();
  return t;
}

double CdfTable::cross_entropy_bits(const std::vector<int>& symbols) const {
  double bits = 0;
  for (int s : symbols) {
    if (s < 0 || s >= alphabet_size()) throw CodingError("cross_entropy: symbol out of alphabet");
    bits -= std::log2(double(freq(s)) / double(kProbScale));
  }
  return bits;
}

RangeEncoder::RangeEncoder(const CdfTable& table) : table_(table) { table_.validate(); }

void RangeEncoder::emit_bit(uint32_t bit) {
  auto push = [this](uint32_t b) {
    bit_buf_ = static_cast<uint8_t>((bit_buf_ << 1) | (b & 1u));
    if (++bit_count_ == 8) {
      bytes_.push_back(bit_buf_);
      bit_buf_ = 0;
      bit_count_ = 0;
    }
  };
  push(bit);
  uint32_t inverse = bit ^ 1u;
  while (pending_ > 0) {
    push(inverse);
    --pending_;
  }
}

void RangeEncoder::encode(int symbol) {
  if (finished_) throw CodingError("range encoder: encode after finish");
  if (symbol < 0 || symbol >= table_.alphabet_size())
    throw CodingError("range encoder: symbol " + std::to_string(symbol) + " out of alphabet");
  uint64_t span = uint64_t(hi_) - uint64_t(lo_) + 1;
  uint32_t cum_lo = table_.cum[static_cast<size_t>(symbol)];
  uint32_t cum_hi = table_.cum[static_cast<size_t>(symbol) + 1];
  hi_ = lo_ + static_cast<uint32_t>((span * cum_hi) >> kProbBits) - 1;
  lo_ = lo_ + static_cast<uint32_t>((span * cum_lo) >> kProbBits);
  for (;;) {
    if (hi_ < kHalf) {
      emit_bit(0);
    } else if (lo_ >= kHalf) {
      emit_bit(1);
      lo_ -= kHalf;
      hi_ -= kHalf;
    } else if (lo_ >= kQuarter && hi_ < kThreeQuarter) {
      ++pending_;
      lo_ -= kQuarter;
      hi_ -= kQuarter;
    } else {
      break;
    }
    lo_ <<= 1;
    hi_ = (hi_ << 1) | 1u;
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  if (finished_) throw CodingError("range encoder: double finish");
  finished_ = true;
  ++pending_;
  emit_bit(lo_ >= kQuarter ? 1u : 0u);
  if (bit_count_ > 0) {
    bit_buf_ = static_cast<uint8_t>(bit_buf_ << (8 - bit_count_));
    bytes_.push_back(bit_buf_);
    bit_buf_ = 0;
    bit_count_ = 0;
  }
  return std::move(bytes_);
}

RangeDecoder::RangeDecoder(const uint8_t* payload, size_t size, const CdfTable& table)
    : table_(table), payload_(payload), size_(size) {
  table_.validate();
  for (int i = 0; i < 32; ++i) code_ = (code_ << 1) | next_bit();
}

uint32_t RangeDecoder::next_bit() {
  if (byte_pos_ >= size_) return 0;  // virtual zeros past the declared payload
  uint32_t bit = (payload_[byte_pos_] >> (7 - bit_pos_)) & 1u;
  if (++bit_pos_ == 8) {
    bit_pos_ = 0;
    ++byte_pos_;
  }
  return bit;
}

int RangeDecoder::decode() {
  uint64_t span = uint64_t(hi_) - uint64_t(lo_) + 1;
  uint32_t scaled =
      static_cast<uint32_t>(((uint64_t(code_ - lo_) + 1) * kProbScale - 1) / span);
  // Largest symbol with cum[symbol] <= scaled.
  int lo_s = 0, hi_s = table_.alphabet_size() - 1;
  while (lo_s < hi_s) {
    int mid = (lo_s + hi_s + 1) / 2;
    if (table_.cum[static_cast<size_t>(mid)] <= scaled)
      lo_s = mid;
    else
      hi_s = mid - 1;
  }
  int symbol = lo_s;
  uint32_t cum_lo = table_.cum[static_cast<size_t>(symbol)];
  uint32_t cum_hi = table_.cum[static_cast<size_t>(symbol) + 1];
  hi_ = lo_ + static_cast<uint32_t>((span * cum_hi) >> kProbBits) - 1;
  lo_ = lo_ + static_cast<uint32_t>((span * cum_lo) >> kProbBits);
  for (;;) {
    if (hi_ < kHalf) {
      // nothing
    } else if (lo_ >= kHalf) {
      code_ -= kHalf;
      lo_ -= kHalf;
      hi_ -= kHalf;
    } else if (lo_ >= kQuarter && hi_ < kThreeQuarter) {
      code_ -= kQuarter;
      lo_ -= kQuarter;
      hi_ -= kQuarter;
    } else {
      break;
    }
    lo_ <<= 1;
    hi_ = (hi_ << 1) | 1u;
    code_ = (code_ << 1) | next_bit();
  }
  return symbol;
}

std::vector<uint8_t> range_encode(const std::vector<int>& symbols, const CdfTable& table) {
  RangeEncoder enc(table);
  for (int s : symbols) enc.encode(s);
  return enc.finish();
}

std::vector<int> range_decode(const uint8_t* payload, size_t size, size_t count,
                              const CdfTable& table) {
  RangeDecoder dec(payload, size, table);
  std::vector<int> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = dec.decode();
  return out;
}

}  // namespace osdiff
