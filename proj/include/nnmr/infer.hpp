#ifndef NNMR_INFER_HPP_
#define NNMR_INFER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "nnmr/error.hpp"
#include "nnmr/parallel.hpp"
#include "nnmr/random.hpp"
#include "nnmr/train.hpp"

namespace nnmr {

/// D1 drives selection and estimation, D2 is reserved for the test.
struct SplitData {
	Matrix d1_X;
	Vector d1_y;
	Matrix d2_X;
	Vector d2_y;
	/// Original row indices of each half, ascending.
	std::vector<Index> d1_rows;
	std::vector<Index> d2_rows;
	std::uint64_t split_seed = 0;
	double ratio = 0.5;
};

/// Uniformly random partition with round(ratio * n) rows in D1.
inline SplitData split(const Matrix& X, const Vector& y, double ratio, std::uint64_t seed) {
	if (X.rows() != y.size())
		throw ShapeError("data has " + std::to_string(X.rows()) + " rows but " + std::to_string(y.size()) +
				" responses");
	if (!(ratio > 0.0 && ratio < 1.0))
		throw InputError("split ratio must lie in (0, 1)");
	const Index n = X.rows();
	if (n < 4)
		throw InputError("splitting needs at least 4 rows, got " + std::to_string(n));
	const auto n1 = static_cast<Index>(std::llround(ratio * static_cast<double>(n)));
	if (n1 < 2 || n - n1 < 2)
		throw InputError("split ratio " + std::to_string(ratio) + " leaves fewer than 2 rows in a half");
	std::vector<Index> order(static_cast<std::size_t>(n));
	std::iota(order.begin(), order.end(), Index{0});
	Rng rng = make_rng(derive_seed(seed, {3}));
	std::shuffle(order.begin(), order.end(), rng);

	SplitData out;
	out.d1_rows.assign(order.begin(), order.begin() + n1);
	out.d2_rows.assign(order.begin() + n1, order.end());
	std::sort(out.d1_rows.begin(), out.d1_rows.end());
	std::sort(out.d2_rows.begin(), out.d2_rows.end());
	out.d1_X = X(out.d1_rows, Eigen::all);
	out.d1_y = y(out.d1_rows);
	out.d2_X = X(out.d2_rows, Eigen::all);
	out.d2_y = y(out.d2_rows);
	out.split_seed = seed;
	out.ratio = ratio;
	return out;
}

/// Mean of U_i^2 - V_i^2. Negative when the U residuals are smaller.
inline double ts_statistic(const Vector& u, const Vector& v) {
	if (u.size() != v.size())
		throw InputError("residual vectors differ in length (" + std::to_string(u.size()) + " vs " +
				std::to_string(v.size()) + ")");
	if (u.size() == 0)
		throw InputError("residual vectors are empty");
	// (u - v)(u + v) rather than u^2 - v^2: swapping u and v then negates every
	// rounded step exactly, even when the compiler fuses multiply-adds.
	double sum = 0.0;
	for (Index i = 0; i < u.size(); ++i)
		sum += (u[i] - v[i]) * (u[i] + v[i]);
	return sum / static_cast<double>(u.size());
}

/// Standard normal CDF.
inline double normal_cdf(double z) {
	return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

struct PermutationResult {
	double statistic = 0.0;
	std::vector<double> perm_stats;
	/// Fraction of permuted statistics strictly below the observed one.
	double p_perm = 1.0;
	/// Phi(statistic / sigma_hat).
	double p_gauss = 1.0;
	/// Sample standard deviation (denominator B - 1) of perm_stats.
	double sigma_hat = 0.0;
	bool degenerate = false;
};

inline constexpr std::size_t kMinPermutations = 100;

/// p-value of `statistic` against a permutation distribution.
inline double permutation_p_value(double statistic, const std::vector<double>& perm_stats) {
	if (perm_stats.empty())
		throw InputError("no permutation statistics");
	const auto below = std::count_if(perm_stats.begin(), perm_stats.end(), [&](double t) { return statistic > t; });
	return static_cast<double>(below) / static_cast<double>(perm_stats.size());
}

/**
 * Pools U and V into one multiset of 2m residuals and, B times, splits it
 * uniformly at random into two halves of size m, recomputing the statistic.
 * Permutation b draws from its own stream seeded by (seed, b).
 */
inline PermutationResult permutation_test(const Vector& u, const Vector& v, std::size_t permutations,
		std::uint64_t seed, std::size_t threads = 1) {
	if (permutations < kMinPermutations)
		throw ConfigError("at least " + std::to_string(kMinPermutations) + " permutations are required, got " +
				std::to_string(permutations));
	PermutationResult out;
	out.statistic = ts_statistic(u, v);
	const Index m = u.size();
	std::vector<double> pooled_sq(static_cast<std::size_t>(2 * m));
	for (Index i = 0; i < m; ++i) {
		pooled_sq[static_cast<std::size_t>(i)] = u[i] * u[i];
		pooled_sq[static_cast<std::size_t>(m + i)] = v[i] * v[i];
	}
	out.perm_stats.assign(permutations, 0.0);
	parallel_for(permutations, threads, [&](std::size_t b) {
		Rng rng = make_rng(derive_seed(seed, {4, b}));
		std::vector<double> work = pooled_sq;
		// Partial Fisher-Yates: the first m slots become a uniform random m-subset.
		for (Index i = 0; i < m; ++i) {
			std::uniform_int_distribution<Index> pick(i, 2 * m - 1);
			std::swap(work[static_cast<std::size_t>(i)], work[static_cast<std::size_t>(pick(rng))]);
		}
		double sum = 0.0;
		for (Index i = 0; i < m; ++i)
			sum += work[static_cast<std::size_t>(i)] - work[static_cast<std::size_t>(m + i)];
		out.perm_stats[b] = sum / static_cast<double>(m);
	});
	out.p_perm = permutation_p_value(out.statistic, out.perm_stats);

	const double B = static_cast<double>(permutations);
	double mean = 0.0;
	for (double t : out.perm_stats)
		mean += t;
	mean /= B;
	double ss = 0.0;
	for (double t : out.perm_stats)
		ss += (t - mean) * (t - mean);
	out.sigma_hat = std::sqrt(ss / (B - 1.0));
	if (out.sigma_hat > 0.0) {
		out.p_gauss = normal_cdf(out.statistic / out.sigma_hat);
	} else {
		out.degenerate = true;
		out.p_gauss = out.statistic >= 0.0 ? 1.0 : 0.0;
	}
	return out;
}

struct InferenceResult {
	std::size_t feature = 0;
	double statistic = 0.0;
	std::vector<double> perm_stats;
	double p_perm = 1.0;
	double p_gauss = 1.0;
	double sigma_hat = 0.0;
	std::size_t B = 0;
	/// sigma_hat was 0; p_gauss is then 1 for a non-negative statistic and 0 otherwise.
	bool degenerate = false;
	/// Columns used by the full and the null model.
	std::vector<std::size_t> full_features;
	std::vector<std::size_t> null_features;
	std::uint64_t perm_seed = 0;

	bool operator==(const InferenceResult&) const = default;
};

/// Conditional-mean estimate on a column subset. An empty subset gives the
/// D1 response mean.
struct SubsetModel {
	std::vector<std::size_t> columns;
	std::optional<FittedModel> model;
	double constant = 0.0;

	Vector predict(const Matrix& X) const {
		if (!model)
			return Vector::Constant(X.rows(), constant);
		std::vector<Index> cols(columns.begin(), columns.end());
		return nnmr::predict(*model, X(Eigen::all, cols));
	}
};

/// Penalty-free refit (lambda1 = 0) of the regression of y on the listed columns.
inline SubsetModel fit_subset(const Matrix& X, const Vector& y, const std::vector<std::size_t>& columns,
		const NetworkConfig& net_config, const TrainConfig& train_config) {
	SubsetModel out;
	out.columns = columns;
	if (columns.empty()) {
		out.constant = y.mean();
		return out;
	}
	for (std::size_t c : columns)
		if (c >= static_cast<std::size_t>(X.cols()))
			throw InputError("feature index " + std::to_string(c) + " out of range");
	NetworkConfig cfg = net_config;
	cfg.input_dim = columns.size();
	TrainConfig tc = train_config;
	tc.lambda1 = 0.0;
	std::vector<Index> cols(columns.begin(), columns.end());
	out.model = fit(X(Eigen::all, cols), y, cfg, tc);
	return out;
}

/// Columns of the full and null models when testing feature j given the selected set.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> test_feature_sets(
		const std::vector<std::size_t>& selected, std::size_t j) {
	std::set<std::size_t> full(selected.begin(), selected.end());
	full.insert(j);
	std::set<std::size_t> null = full;
	null.erase(j);
	return {std::vector<std::size_t>(full.begin(), full.end()), std::vector<std::size_t>(null.begin(), null.end())};
}

namespace detail {

inline InferenceResult residual_test(const SplitData& data, std::size_t j, const SubsetModel& full,
		const SubsetModel& null, std::size_t permutations, std::uint64_t perm_seed, std::size_t threads) {
	const Vector u = data.d2_y - full.predict(data.d2_X);
	const Vector v = data.d2_y - null.predict(data.d2_X);
	PermutationResult perm = permutation_test(u, v, permutations, perm_seed, threads);
	InferenceResult out;
	out.feature = j;
	out.statistic = perm.statistic;
	out.perm_stats = std::move(perm.perm_stats);
	out.p_perm = perm.p_perm;
	out.p_gauss = perm.p_gauss;
	out.sigma_hat = perm.sigma_hat;
	out.B = permutations;
	out.degenerate = perm.degenerate;
	out.full_features = full.columns;
	out.null_features = null.columns;
	out.perm_seed = perm_seed;
	return out;
}

inline void check_inference_inputs(const SplitData& data, std::size_t j, std::size_t permutations) {
	if (permutations < kMinPermutations)
		throw ConfigError("at least " + std::to_string(kMinPermutations) + " permutations are required, got " +
				std::to_string(permutations));
	if (data.d2_y.size() < 2)
		throw InputError("inference half needs at least 2 rows");
	if (j >= static_cast<std::size_t>(data.d1_X.cols()))
		throw InputError("feature index " + std::to_string(j) + " out of range");
}

}

/**
 * Tests H0: E(Y | X_{S \ j}) = E(Y | X_{S u j}). Both conditional means are
 * fit on D1 only; residuals on D2 feed the permutation test.
 */
inline InferenceResult test_feature(const SplitData& data, const std::vector<std::size_t>& selected, std::size_t j,
		const NetworkConfig& net_config, const TrainConfig& train_config, std::size_t permutations,
		std::uint64_t perm_seed, std::size_t threads = 1) {
	detail::check_inference_inputs(data, j, permutations);
	const auto [full_cols, null_cols] = test_feature_sets(selected, j);
	const SubsetModel full = fit_subset(data.d1_X, data.d1_y, full_cols, net_config, train_config);
	const SubsetModel null = fit_subset(data.d1_X, data.d1_y, null_cols, net_config, train_config);
	return detail::residual_test(data, j, full, null, permutations, perm_seed, threads);
}

/// Permutation seed used for feature j under a master seed.
inline std::uint64_t feature_seed(std::uint64_t seed, std::size_t j) {
	return derive_seed(seed, {5, j});
}

/// One test per selected feature. The full model on X_S is fit once and shared.
inline std::vector<InferenceResult> test_all(const SplitData& data, const std::vector<std::size_t>& selected,
		const NetworkConfig& net_config, const TrainConfig& train_config, std::size_t permutations,
		std::uint64_t seed, std::size_t threads = 1) {
	if (selected.empty())
		throw InputError("no selected features to test");
	const std::set<std::size_t> sorted(selected.begin(), selected.end());
	const std::vector<std::size_t> features(sorted.begin(), sorted.end());
	for (std::size_t j : features)
		detail::check_inference_inputs(data, j, permutations);
	const SubsetModel full = fit_subset(data.d1_X, data.d1_y, features, net_config, train_config);
	std::vector<InferenceResult> results(features.size());
	parallel_for(features.size(), threads, [&](std::size_t k) {
		const std::size_t j = features[k];
		const auto null_cols = test_feature_sets(features, j).second;
		const SubsetModel null = fit_subset(data.d1_X, data.d1_y, null_cols, net_config, train_config);
		results[k] = detail::residual_test(data, j, full, null, permutations, feature_seed(seed, j), 1);
	});
	return results;
}

}

#endif /* NNMR_INFER_HPP_ */
