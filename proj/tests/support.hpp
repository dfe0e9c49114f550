// Test-side oracles. Everything here is written with plain loops and long
// double accumulation so it shares no code path with the library kernels.
#ifndef NNMR_TESTS_SUPPORT_HPP_
#define NNMR_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nnmr/net.hpp"

namespace nnmr::testing {

using Real = long double;

inline NetworkConfig make_config(std::size_t d, std::size_t depth, std::size_t width) {
	NetworkConfig c;
	c.input_dim = d;
	c.depth = depth;
	c.width = width;
	return c;
}

/// Every entry drawn uniformly from [-scale, scale]; gates from [-2, 2].
inline NetworkParams random_params(const NetworkConfig& config, std::mt19937_64& rng, double scale = 1.0) {
	std::uniform_real_distribution<double> u(-scale, scale);
	std::uniform_real_distribution<double> g(-2.0, 2.0);
	NetworkParams p = NetworkParams::zeros(config);
	for (Index j = 0; j < p.gate.size(); ++j)
		p.gate[j] = g(rng);
	for (auto& layer : p.layers) {
		for (Index r = 0; r < layer.weight.rows(); ++r)
			for (Index c = 0; c < layer.weight.cols(); ++c)
				layer.weight(r, c) = u(rng);
		for (Index r = 0; r < layer.bias.size(); ++r)
			layer.bias[r] = u(rng);
	}
	return p;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
	std::normal_distribution<double> n(0.0, 1.0);
	Matrix m(rows, cols);
	for (Index r = 0; r < rows; ++r)
		for (Index c = 0; c < cols; ++c)
			m(r, c) = n(rng);
	return m;
}

inline Vector random_vector(Index size, std::mt19937_64& rng) {
	std::normal_distribution<double> n(0.0, 1.0);
	Vector v(size);
	for (Index i = 0; i < size; ++i)
		v[i] = n(rng);
	return v;
}

/// Direct evaluation of the layer recursion for one input. Optionally records
/// every pre-activation so callers can tell how close a point is to a ReLU kink.
inline Real oracle_forward(const NetworkParams& p, const std::vector<double>& x, std::vector<Real>* pre = nullptr) {
	const std::size_t depth = p.layers.size() - 1;
	std::vector<Real> h(x.size());
	for (std::size_t j = 0; j < x.size(); ++j)
		h[j] = static_cast<Real>(p.gate[static_cast<Index>(j)]) * static_cast<Real>(x[j]);
	for (std::size_t l = 0; l <= depth; ++l) {
		const Matrix& w = p.layers[l].weight;
		std::vector<Real> z(static_cast<std::size_t>(w.rows()));
		for (Index r = 0; r < w.rows(); ++r) {
			Real s = p.layers[l].bias[r];
			for (Index c = 0; c < w.cols(); ++c)
				s += static_cast<Real>(w(r, c)) * h[static_cast<std::size_t>(c)];
			z[static_cast<std::size_t>(r)] = s;
			if (pre && l < depth)
				pre->push_back(s);
		}
		if (l < depth)
			for (auto& v : z)
				v = v > 0 ? v : 0;
		h = std::move(z);
	}
	return h[0];
}

inline std::vector<double> row_of(const Matrix& X, Index i) {
	std::vector<double> x(static_cast<std::size_t>(X.cols()));
	for (Index c = 0; c < X.cols(); ++c)
		x[static_cast<std::size_t>(c)] = X(i, c);
	return x;
}

/// Mean squared error + lambda1 * sum|gate| + lambda2 * sum over square hidden
/// maps of (sum|W - I| + sum|c|).
inline Real oracle_objective(const NetworkParams& p, const Matrix& X, const Vector& y, double lambda1, double lambda2) {
	Real sse = 0;
	for (Index i = 0; i < X.rows(); ++i) {
		const Real r = static_cast<Real>(y[i]) - oracle_forward(p, row_of(X, i));
		sse += r * r;
	}
	Real l1 = 0;
	for (Index j = 0; j < p.gate.size(); ++j)
		l1 += std::fabs(static_cast<Real>(p.gate[j]));
	Real dp = 0;
	for (std::size_t l = 1; l + 1 < p.layers.size(); ++l) {
		const Matrix& w = p.layers[l].weight;
		for (Index r = 0; r < w.rows(); ++r) {
			for (Index c = 0; c < w.cols(); ++c)
				dp += std::fabs(static_cast<Real>(w(r, c)) - (r == c ? 1 : 0));
			dp += std::fabs(static_cast<Real>(p.layers[l].bias[r]));
		}
	}
	return sse / static_cast<Real>(X.rows()) + static_cast<Real>(lambda1) * l1 + static_cast<Real>(lambda2) * dp;
}

/// Smallest |pre-activation| over all samples and hidden units.
inline Real min_kink_distance(const NetworkParams& p, const Matrix& X) {
	Real m = std::numeric_limits<Real>::infinity();
	for (Index i = 0; i < X.rows(); ++i) {
		std::vector<Real> pre;
		oracle_forward(p, row_of(X, i), &pre);
		for (Real v : pre)
			m = std::min(m, std::fabs(v));
	}
	return m;
}

inline Real oracle_ts(const Vector& u, const Vector& v) {
	Real s = 0;
	for (Index i = 0; i < u.size(); ++i)
		s += static_cast<Real>(u[i]) * u[i] - static_cast<Real>(v[i]) * v[i];
	return s / static_cast<Real>(u.size());
}

inline double relative_error(Real a, Real b) {
	const Real scale = std::max(std::fabs(a), std::fabs(b));
	if (scale == 0)
		return 0.0;
	return static_cast<double>(std::fabs(a - b) / scale);
}

/// Visits every scalar parameter as (block kind, value reference, L1 argument).
/// The kind is 0 for gates, 1 for hidden maps and biases, 2 for unpenalized maps.
template<typename Fn>
void for_each_coordinate(NetworkParams& p, Fn&& fn) {
	for (Index j = 0; j < p.gate.size(); ++j)
		fn(0, p.gate[j], p.gate[j]);
	const std::size_t depth = p.layers.size() - 1;
	for (std::size_t l = 0; l <= depth; ++l) {
		const bool hidden = l >= 1 && l < depth;
		auto& w = p.layers[l].weight;
		for (Index c = 0; c < w.cols(); ++c)
			for (Index r = 0; r < w.rows(); ++r)
				fn(hidden ? 1 : 2, w(r, c), w(r, c) - (r == c ? 1.0 : 0.0));
		auto& b = p.layers[l].bias;
		for (Index r = 0; r < b.size(); ++r)
			fn(hidden ? 1 : 2, b[r], b[r]);
	}
}

/// Flattened copy of a gradient in the same coordinate order.
inline std::vector<double> flatten(const Gradients& g) {
	std::vector<double> out;
	for (Index j = 0; j < g.gate.size(); ++j)
		out.push_back(g.gate[j]);
	for (const auto& layer : g.layers) {
		for (Index c = 0; c < layer.weight.cols(); ++c)
			for (Index r = 0; r < layer.weight.rows(); ++r)
				out.push_back(layer.weight(r, c));
		for (Index r = 0; r < layer.bias.size(); ++r)
			out.push_back(layer.bias[r]);
	}
	return out;
}

struct GradientCheck {
	std::size_t compared = 0;
	std::size_t skipped = 0;
	double worst = 0.0;
};

/**
 * Compares an analytic gradient with central differences of the long double
 * oracle objective. Coordinates whose own L1 argument, or whose perturbation
 * would move some pre-activation, lies within `margin` of a kink are skipped.
 */
inline GradientCheck check_gradient(NetworkParams p, const Matrix& X, const Vector& y, double lambda1, double lambda2,
		const Gradients& analytic, double step = 1e-6, double margin = 1e-3) {
	GradientCheck out;
	const std::vector<double> a = flatten(analytic);
	std::size_t k = 0;
	for_each_coordinate(p, [&](int kind, double& value, double l1_arg) {
		const std::size_t idx = k++;
		const bool penalized = (kind == 0 && lambda1 > 0.0) || (kind == 1 && lambda2 > 0.0);
		if (penalized && std::fabs(l1_arg) < margin) {
			++out.skipped;
			return;
		}
		const double saved = value;
		value = saved + step;
		const Real up = oracle_objective(p, X, y, lambda1, lambda2);
		const Real kink_up = min_kink_distance(p, X);
		value = saved - step;
		const Real down = oracle_objective(p, X, y, lambda1, lambda2);
		const Real kink_down = min_kink_distance(p, X);
		value = saved;
		if (std::min(kink_up, kink_down) < margin) {
			++out.skipped;
			return;
		}
		const Real fd = (up - down) / (2 * static_cast<Real>(step));
		out.worst = std::max(out.worst, relative_error(a[idx], fd));
		++out.compared;
	});
	return out;
}

/// Kolmogorov distribution upper tail P(K > x).
inline double kolmogorov_tail(double x) {
	if (x <= 0.0)
		return 1.0;
	double sum = 0.0;
	for (int k = 1; k <= 100; ++k) {
		const double term = std::exp(-2.0 * k * k * x * x);
		sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
		if (term < 1e-16)
			break;
	}
	return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
	double statistic = 0.0;
	double p_value = 1.0;
};

/// One-sample KS test against Uniform(0, 1). `granularity` is subtracted from
/// the statistic to absorb the lattice of a discrete p-value.
inline KsResult ks_uniform(std::vector<double> values, double granularity = 0.0) {
	std::sort(values.begin(), values.end());
	const double n = static_cast<double>(values.size());
	double d = 0.0;
	for (std::size_t i = 0; i < values.size(); ++i) {
		const double f = std::clamp(values[i], 0.0, 1.0);
		d = std::max(d, std::max((static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n));
	}
	KsResult r;
	r.statistic = std::max(0.0, d - granularity);
	const double sn = std::sqrt(n);
	r.p_value = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * r.statistic);
	return r;
}

}

#endif /* NNMR_TESTS_SUPPORT_HPP_ */
