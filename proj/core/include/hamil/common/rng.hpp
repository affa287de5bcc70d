#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace hamil {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent child seed: splitmix64(master + golden * (stream + 1)).
// Used for per-volume generator seeds and per-(epoch, volume) sampling seeds.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b);

// SHA-256 hex digest of the engine's serialized state.
std::string rng_digest(const Rng& rng);

}  // namespace hamil
