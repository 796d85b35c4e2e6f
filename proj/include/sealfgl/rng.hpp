#ifndef SEALFGL_RNG_HPP
#define SEALFGL_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace sealfgl {

using Rng = std::mt19937_64;

// Named substreams derived from the root seed. Every random draw in the
// library goes through one of these so that, for example, changing the batch
// order never changes the partition.
namespace stream {
inline constexpr std::string_view partition = "partition";
inline constexpr std::string_view split = "split";
inline constexpr std::string_view init = "init";
inline constexpr std::string_view batch = "batch";
inline constexpr std::string_view directions = "perturb-directions";
inline constexpr std::string_view synthetic = "synthetic";
}  // namespace stream

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for substream `name`, optionally keyed by up to three integers (client, round, epoch).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(root ^ fnv1a(name));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c * 0x8cb92ba72f3d8dd7ULL));
  return h;
}

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
  return Rng(derive_seed(root, name, a, b, c));
}

}  // namespace sealfgl

#endif  // SEALFGL_RNG_HPP
