#include "textbcs/rng.hpp"

#include <sstream>

#include "textbcs/errors.hpp"
#include "textbcs/hash.hpp"

namespace textbcs {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::derive(std::string_view stream) const { return Rng(splitmix64(seed_ ^ fnv1a(stream))); }

std::string Rng::state_digest() const {
  std::ostringstream os;
  os << engine_;
  return sha256_hex(os.str()).substr(0, 16);
}

Rng seed_all(std::int64_t seed) {
  if (seed < 0) throw ConfigError("seed must be >= 0, got " + std::to_string(seed));
  return Rng(static_cast<std::uint64_t>(seed));
}

}  // namespace textbcs
