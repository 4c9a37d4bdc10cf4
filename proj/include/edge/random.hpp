#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace edge::random {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// 64-bit FNV-1a.
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform in [0, 1) from a stateless counter-based generator.
inline double counter_uniform(std::uint64_t seed, std::uint64_t key, std::uint64_t counter) {
  const std::uint64_t bits = splitmix64(splitmix64(seed ^ splitmix64(key)) + counter);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Seed for an independent stream derived from a parent seed and a label.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ hash_string(label));
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

// First `k` entries of a random permutation of `items` (partial Fisher-Yates).
// Consumes `items`.
template <typename T>
std::vector<T> sample_without_replacement(Rng& rng, std::vector<T> items, std::size_t k) {
  if (k > items.size()) k = items.size();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

inline std::string save_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void load_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

}  // namespace edge::random
