#ifndef NNMR_RANDOM_HPP_
#define NNMR_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace nnmr {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to turn (seed, index) pairs into well-separated
/// sub-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
	x += 0x9E3779B97F4A7C15ULL;
	x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
	x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
	return x ^ (x >> 31);
}

/// Seed of the sub-stream identified by `path` under `master`. The result
/// depends only on the arguments, never on call order.
constexpr std::uint64_t derive_seed(std::uint64_t master,
		std::initializer_list<std::uint64_t> path) noexcept {
	std::uint64_t s = mix_seed(master);
	for (std::uint64_t p : path)
		s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ULL));
	return s;
}

inline Rng make_rng(std::uint64_t seed) {
	std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
	return Rng(seq);
}

}

#endif /* NNMR_RANDOM_HPP_ */
