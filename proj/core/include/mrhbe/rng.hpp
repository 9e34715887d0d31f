#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>

namespace mrhbe {

// Philox4x32-10 block function. Counter-based: any (key, counter) pair can be
// evaluated independently, which is what lets Gaussian bank rows and gate
// coins be regenerated from a seed instead of stored.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter block(Counter ctr, Key key) noexcept;
};

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Deterministic child seed for a tagged sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) noexcept;

// Uniform in the open interval (0,1) from 64 random bits.
inline double bits_to_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Random-access uniform for (seed, index); used for per-point gate coins.
double uniform_at(std::uint64_t seed, std::uint64_t index) noexcept;

// Fills out[0..d) with i.i.d. standard normals for row `row` of the bank
// identified by `seed`. Two normals per Philox block via Box-Muller.
void gaussian_row(std::uint64_t seed, std::uint64_t row, std::size_t d, double* out) noexcept;

// Sequential stream over Philox; satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  double uniform() noexcept { return bits_to_unit((*this)()); }
  double normal() noexcept;
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  // Fresh 64-bit seed drawn from this stream.
  std::uint64_t next_seed() noexcept { return (*this)(); }
  // Independent child stream; does not advance this stream.
  Rng split(std::uint64_t tag) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int avail_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mrhbe
