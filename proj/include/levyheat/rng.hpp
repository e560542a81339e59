#pragma once
// Counter-based random numbers for reproducible parallel sampling.
//
// Generator: Philox4x64 with 10 rounds (Salmon, Moraes, Dror & Shaw,
// "Parallel random numbers: as easy as 1, 2, 3", SC'11).  The frozen
// output blocks in tests/test_rng.cpp were produced with an independent
// implementation of the same algorithm (numpy.random.Philox).
//
// Stream identity: a stream is addressed by (master_seed, stream_index, lane).
// Seed and index form the Philox key, the lane sits in the high counter word,
// and draws advance the low counter words.  A stream's output is a pure
// function of its address, so results cannot depend on thread scheduling or
// on how samples are divided among workers.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace levyheat {

namespace detail {

inline void philox_mulhilo(std::uint64_t a, std::uint64_t b,
                           std::uint64_t& hi, std::uint64_t& lo) {
  unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

} // namespace detail

using philox_ctr = std::array<std::uint64_t, 4>;
using philox_key = std::array<std::uint64_t, 2>;

// One Philox4x64-10 block: 256 bits of output per counter value.
inline philox_ctr philox4x64_10(philox_ctr ctr, philox_key key) {
  constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ull;
  constexpr std::uint64_t M1 = 0xCA5A826395121157ull;
  constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ull; // golden ratio
  constexpr std::uint64_t W1 = 0xBB67AE8584CAA73Bull; // sqrt(3) - 1
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += W0;
      key[1] += W1;
    }
    std::uint64_t hi0, lo0, hi1, lo1;
    detail::philox_mulhilo(M0, ctr[0], hi0, lo0);
    detail::philox_mulhilo(M1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// Buffered stream over consecutive Philox blocks.
class RngStream {
public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_index,
            std::uint64_t lane = 0)
      : key_{master_seed, stream_index}, ctr_{0, 0, 0, lane}, pos_(4) {}

  std::uint64_t next_u64() {
    if (pos_ == 4) {
      buf_ = philox4x64_10(ctr_, key_);
      if (++ctr_[0] == 0) ++ctr_[1]; // carry; lane word is never touched
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  // Uniform on [0,1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0,1); rejects the single zero mantissa.
  double next_double_pos() {
    for (;;) {
      std::uint64_t bits = next_u64() >> 11;
      if (bits != 0) return static_cast<double>(bits) * 0x1.0p-53;
    }
  }

  // Exact Poisson count via unit-rate exponential spacings.  Runs in
  // O(mean) draws; exact for any mean because the spacing sum is kept in
  // log space (no exp(-mean) underflow).
  std::uint64_t next_poisson(double mean) {
    if (!(mean >= 0.0) || !std::isfinite(mean))
      throw std::invalid_argument("next_poisson: mean must be finite and >= 0");
    double acc = 0.0;
    std::uint64_t n = 0;
    for (;;) {
      acc += -std::log(next_double_pos());
      if (acc > mean) return n;
      ++n;
    }
  }

  // Index into a cumulative weight table (cum.back() == 1 up to rounding).
  std::size_t next_category(const std::vector<double>& cum) {
    double u = next_double();
    std::size_t lo = 0, hi = cum.size();
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (u < cum[mid])
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo < cum.size() ? lo : cum.size() - 1;
  }

  double next_rademacher() { return next_double() < 0.5 ? 1.0 : -1.0; }

private:
  philox_key key_;
  philox_ctr ctr_;
  philox_ctr buf_{};
  int pos_;
};

} // namespace levyheat
