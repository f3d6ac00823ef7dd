#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

#include <boost/random/normal_distribution.hpp>

namespace hermite_flow {

// Stream tags keep the initialization draws and the per-step input draws of a
// run on unrelated engines.
enum class Stream : std::uint32_t {
  kInit = 1,
  kSamples = 2,
  kMonteCarlo = 3,
  kGapTrials = 4,
  kInstances = 5,
};

// Ziggurat sampler; every Gaussian draw in the library goes through it so the
// parallel and reference Monte Carlo kernels consume identical streams.
using StandardNormal = boost::random::normal_distribution<double>;

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  // splitmix64 finalizer folded over the keys
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t k : keys) h = mix(h ^ mix(k));
  return h;
}

inline std::uint64_t hash_tag(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t seed, Stream stream,
                                   std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  std::uint64_t h = mix_seed(seed, {static_cast<std::uint64_t>(stream)});
  for (std::uint64_t k : keys) h = mix_seed(h, {k});
  words.push_back(static_cast<std::uint32_t>(h));
  words.push_back(static_cast<std::uint32_t>(h >> 32));
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// Small counter-seeded generator for streams that are re-keyed very often
// (one per SGD step), where constructing an mt19937_64 would dominate.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

inline SplitMix64 make_step_engine(std::uint64_t seed, Stream stream, std::uint64_t step) {
  return SplitMix64(mix_seed(seed, {static_cast<std::uint64_t>(stream), step}));
}

}  // namespace hermite_flow
