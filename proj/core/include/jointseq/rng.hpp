#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace jointseq {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent child seed for stream `b` of parent seed `a`.
inline std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

// Modulo reduction keeps draws identical across standard libraries; the bias
// is below 2^-58 for the tiny ranges used here.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

// 53-bit uniform in [0, 1) straight from the engine output.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Fisher-Yates with draw_index, so permutations do not depend on the
// standard library's shuffle.
template <typename Vec>
void shuffle_in_place(Vec& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = draw_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace jointseq
