#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "oti/error.hpp"
#include "oti/tensor.hpp"

namespace oti {

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic random stream keyed by (seed, label). Single owner; parallel
// work takes distinct labels.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label)
      : seed_(seed), label_(std::move(label)),
        engine_(detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(label_)))) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  // Child stream whose label extends this one's.
  RngStream substream(std::string_view suffix) const {
    return RngStream(seed_, label_ + "/" + std::string(suffix));
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return normal_(engine_); }

  // Integer drawn uniformly from [lo, hi).
  std::size_t integer(std::size_t lo, std::size_t hi) {
    if (hi <= lo) throw ParameterError("integer draw needs a non-empty range");
    if (hi - lo == 1) return lo;
    return std::uniform_int_distribution<std::size_t>(lo, hi - 1)(engine_);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * normal();
    return t;
  }

  template <class It>
  void shuffle(It first, It last) {
    // Fisher-Yates driven by integer(); std::shuffle's draw pattern is
    // implementation-defined.
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = integer(0, i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline RngStream seeded_stream(std::uint64_t seed, std::string label) {
  return RngStream(seed, std::move(label));
}

}  // namespace oti
