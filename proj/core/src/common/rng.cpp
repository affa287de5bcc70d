#include "hamil/common/rng.hpp"

#include "hamil/common/sha256.hpp"

#include <sstream>

namespace hamil {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master + 0x9E3779B97F4A7C15ULL * (stream + 1));
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(master, a), b);
}

std::string rng_digest(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return sha256_hex(os.str());
}

}  // namespace hamil
