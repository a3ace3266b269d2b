#pragma once

// Counter-based stream splitting: stream k of master seed s is an mt19937_64
// seeded with a splitmix64 mix of (s, k). Results never depend on which worker
// draws which stream, or in which order.
//
// Distributions come from Boost.Random, whose algorithms are fixed, so draws
// are reproducible across standard libraries.

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstdint>
#include <random>

namespace swct {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

// Two-level streams, e.g. (replicate, permutation).
inline Rng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Rng(mix_seed(mix_seed(seed, a), b));
}

inline double draw_normal(Rng& rng, double mean, double sd) {
  if (sd <= 0.0) return mean;
  return boost::random::normal_distribution<double>(mean, sd)(rng);
}

inline int draw_binomial(Rng& rng, int trials, double p) {
  if (p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  return boost::random::binomial_distribution<int, double>(trials, p)(rng);
}

inline bool draw_bernoulli(Rng& rng, double p) { return boost::random::uniform_01<double>()(rng) < p; }

inline int draw_index(Rng& rng, int below) {
  return boost::random::uniform_int_distribution<int>(0, below - 1)(rng);
}

}  // namespace swct
