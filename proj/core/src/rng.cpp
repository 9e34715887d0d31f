#include "mrhbe/rng.hpp"

#include <cmath>
#include <numbers>

namespace mrhbe {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

// Counter word reserved for bank rows so they never alias gate coins.
constexpr std::uint32_t kBankDomain = 0x6A09E667u;
constexpr std::uint32_t kGateDomain = 0x3C6EF372u;

inline Philox4x32::Key key_of(std::uint64_t seed) noexcept {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

inline std::uint64_t join(std::uint32_t hi, std::uint32_t lo) noexcept {
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

inline void box_muller(std::uint64_t a, std::uint64_t b, double& z0, double& z1) noexcept {
  const double r = std::sqrt(-2.0 * std::log(bits_to_unit(a)));
  const double theta = 2.0 * std::numbers::pi * bits_to_unit(b);
  z0 = r * std::cos(theta);
  z1 = r * std::sin(theta);
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter c, Key k) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kW0;
      k[1] += kW1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
  }
  return c;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ mix64(a + 0x632BE59BD9B4E019ull));
  h = mix64(h ^ mix64(b + 0x8CB92BA72F3D8DD7ull));
  h = mix64(h ^ mix64(c + 0x4F1BBCDCBFA53E0Bull));
  return h;
}

double uniform_at(std::uint64_t seed, std::uint64_t index) noexcept {
  const auto out = Philox4x32::block(
      {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), kGateDomain, 0u},
      key_of(seed));
  return bits_to_unit(join(out[0], out[1]));
}

void gaussian_row(std::uint64_t seed, std::uint64_t row, std::size_t d, double* out) noexcept {
  const auto key = key_of(seed);
  const auto row_lo = static_cast<std::uint32_t>(row);
  const auto row_hi = static_cast<std::uint32_t>(row >> 32);
  std::size_t j = 0;
  for (std::uint32_t blk = 0; j < d; ++blk) {
    const auto r = Philox4x32::block({blk, row_lo, row_hi, kBankDomain}, key);
    double z0, z1;
    box_muller(join(r[0], r[1]), join(r[2], r[3]), z0, z1);
    out[j++] = z0;
    if (j < d) out[j++] = z1;
  }
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

void Rng::refill() noexcept {
  const auto r = Philox4x32::block(
      {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
       static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
      key_of(seed_));
  ++counter_;
  buf_ = {join(r[0], r[1]), join(r[2], r[3])};
  avail_ = 2;
}

Rng::result_type Rng::operator()() noexcept {
  if (avail_ == 0) refill();
  return buf_[2 - avail_--];
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double z0, z1;
  const std::uint64_t a = (*this)();
  const std::uint64_t b = (*this)();
  box_muller(a, b, z0, z1);
  spare_ = z1;
  has_spare_ = true;
  return z0;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire's multiply-shift with rejection.
  std::uint64_t x = (*this)();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = (*this)();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::split(std::uint64_t tag) const noexcept {
  return Rng(derive_seed(seed_, stream_, tag, counter_), 0);
}

}  // namespace mrhbe
