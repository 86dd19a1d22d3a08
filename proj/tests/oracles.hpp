#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fasucm/core/random.hpp"
#include "fasucm/core/tensor.hpp"

namespace fasucm::oracle {

inline double rel_error(double analytic, double numeric, double floor) {
	return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of `f` at coordinate `i` of `x` (restored afterwards).
inline double central_difference(const std::function<double(const Tensor<double>&)>& f, Tensor<double>& x,
                                 std::size_t i, double h) {
	const double saved = x[i];
	x[i] = saved + h;
	const double up = f(x);
	x[i] = saved - h;
	const double down = f(x);
	x[i] = saved;
	return (up - down) / (2 * h);
}

struct GradCheck {
	double max_rel_error = 0;
	std::size_t worst = 0;
	std::size_t checked = 0;
};

/// Compares `analytic` against central differences on `coords` (all
/// coordinates when empty). Relative error uses `floor` as the smallest
/// denominator.
inline GradCheck check_gradient(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                const Tensor<double>& analytic, std::vector<std::size_t> coords = {},
                                double h = 1e-6, double floor = 1e-10) {
	if (coords.empty())
		for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(i);
	GradCheck r;
	for (std::size_t i : coords) {
		const double numeric = central_difference(f, x, i, h);
		const double e = rel_error(analytic[i], numeric, floor);
		if (e > r.max_rel_error || r.checked == 0) {
			r.max_rel_error = std::max(r.max_rel_error, e);
			r.worst = i;
		}
		++r.checked;
	}
	return r;
}

inline Tensor<double> uniform_tensor(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
	Tensor<double> t(s);
	for (auto& v : t.values()) v = rng.uniform(lo, hi);
	return t;
}

/// Gram matrix by the defining double sum, in plain loops.
inline std::vector<double> gram_by_definition(const Tensor<double>& f, std::size_t n = 0) {
	const Shape s = f.shape();
	std::vector<double> g(s.c * s.c, 0.0);
	for (std::size_t i = 0; i < s.c; ++i)
		for (std::size_t j = 0; j < s.c; ++j) {
			double acc = 0;
			for (std::size_t y = 0; y < s.h; ++y)
				for (std::size_t x = 0; x < s.w; ++x) acc += f.at(n, i, y, x) * f.at(n, j, y, x);
			g[i * s.c + j] = acc / static_cast<double>(s.c * s.h * s.w);
		}
	return g;
}

/// Total variation by its definition: every horizontal and vertical
/// neighbour pair, squared, summed over channels, divided by H * W.
inline double tv_by_definition(const Tensor<double>& x) {
	const Shape s = x.shape();
	double total = 0;
	for (std::size_t n = 0; n < s.n; ++n) {
		double acc = 0;
		for (std::size_t c = 0; c < s.c; ++c)
			for (std::size_t y = 0; y < s.h; ++y)
				for (std::size_t xx = 0; xx < s.w; ++xx) {
					if (xx + 1 < s.w) acc += std::pow(x.at(n, c, y, xx + 1) - x.at(n, c, y, xx), 2);
					if (y + 1 < s.h) acc += std::pow(x.at(n, c, y + 1, xx) - x.at(n, c, y, xx), 2);
				}
		total += acc / static_cast<double>(s.h * s.w);
	}
	return total / static_cast<double>(s.n);
}

} // namespace fasucm::oracle
