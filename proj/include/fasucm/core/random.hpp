#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace fasucm {

/// Seeded generator with distribution helpers whose output does not depend on
/// the standard library implementation (std:: distributions are
/// implementation-defined, which would break cross-platform reproducibility).
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }

	/// Uniform double in [0, 1).
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [0, n), rejection sampled.
	std::uint64_t below(std::uint64_t n) {
		if (n <= 1) return 0;
		const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
		                            std::numeric_limits<std::uint64_t>::max() % n;
		std::uint64_t v;
		do {
			v = engine_();
		} while (v >= limit);
		return v % n;
	}

	double normal() {
		if (has_spare_) {
			has_spare_ = false;
			return spare_;
		}
		double u1;
		do {
			u1 = uniform();
		} while (u1 <= 0.0);
		const double u2 = uniform();
		const double r = std::sqrt(-2.0 * std::log(u1));
		spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
		has_spare_ = true;
		return r * std::cos(2.0 * std::numbers::pi * u2);
	}

	template <class T>
	void shuffle(std::span<T> items) {
		for (std::size_t i = items.size(); i > 1; --i) {
			const auto j = static_cast<std::size_t>(below(i));
			std::swap(items[i - 1], items[j]);
		}
	}

	template <class Container>
	void shuffle(Container& c) {
		shuffle(std::span(c.data(), c.size()));
	}

private:
	std::mt19937_64 engine_;
	double spare_ = 0.0;
	bool has_spare_ = false;
};

/// Derive an independent seed for a named sub-stream (e.g. one per subject).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
	std::uint64_t h = 1469598103934665603ull ^ seed;
	for (unsigned char c : tag) {
		h ^= c;
		h *= 1099511628211ull;
	}
	// splitmix64 finaliser
	h += 0x9e3779b97f4a7c15ull;
	h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
	h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
	return h ^ (h >> 31);
}

} // namespace fasucm
