#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sua {

/// All stochastic components draw from 64-bit Mersenne Twister streams.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
/// Spelled out (rather than std::uniform_real_distribution) so the
/// draw sequence is identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n). Rejection sampling over one 64-bit draw.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return static_cast<std::size_t>(x % bound);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x51ed270b2f1f7a2bULL)));
}

// Error taxonomy shared by all modules.

/// Shapes or architectures that do not fit together.
struct StructuralError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input values (non-finite features, out-of-range actions).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A training step produced a non-finite loss.
struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what), batch_index(batch_index) {}
  std::size_t batch_index;
};

/// Operation invoked in a state that does not permit it.
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A gated operation was called before its gate opened
/// (sampling an underfull replay, querying an untrained model).
struct GateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sua
