#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "nnmr/infer.hpp"
#include "nnmr/simgen.hpp"
#include "support.hpp"

using namespace nnmr;
using namespace nnmr::testing;

namespace {

NetworkConfig small_net(std::size_t d) {
	return make_config(d, 1, 8);
}

TrainConfig small_train(std::uint64_t seed = 0) {
	TrainConfig t;
	t.max_iters = 1000;
	t.learning_rate = 5e-3;
	t.seed = seed;
	return t;
}

bool is_multiple_of(double p, double step) {
	const double k = p / step;
	return std::fabs(k - std::round(k)) < 1e-9;
}

}

TEST(Split, SizesAndDisjointness) {
	std::mt19937_64 rng(1);
	const Matrix X = random_matrix(10, 2, rng);
	const Vector y = random_vector(10, rng);
	const SplitData s = split(X, y, 0.5, 7);
	EXPECT_EQ(s.d1_rows.size(), 5u);
	EXPECT_EQ(s.d2_rows.size(), 5u);
	std::set<Index> all(s.d1_rows.begin(), s.d1_rows.end());
	all.insert(s.d2_rows.begin(), s.d2_rows.end());
	EXPECT_EQ(all.size(), 10u);
	for (std::size_t k = 0; k < s.d1_rows.size(); ++k) {
		EXPECT_EQ(s.d1_X.row(static_cast<Index>(k)), X.row(s.d1_rows[k]));
		EXPECT_EQ(s.d1_y[static_cast<Index>(k)], y[s.d1_rows[k]]);
	}
	for (std::size_t k = 0; k < s.d2_rows.size(); ++k)
		EXPECT_EQ(s.d2_y[static_cast<Index>(k)], y[s.d2_rows[k]]);
	const SplitData t = split(X, y, 0.7, 7);
	EXPECT_EQ(t.d1_rows.size(), 7u);
}

TEST(Split, Deterministic) {
	std::mt19937_64 rng(2);
	const Matrix X = random_matrix(30, 2, rng);
	const Vector y = random_vector(30, rng);
	EXPECT_EQ(split(X, y, 0.5, 11).d1_rows, split(X, y, 0.5, 11).d1_rows);
	EXPECT_NE(split(X, y, 0.5, 11).d1_rows, split(X, y, 0.5, 12).d1_rows);
}

TEST(Split, EachRowLandsInD1HalfTheTime) {
	const Matrix X = Matrix::Zero(20, 1);
	const Vector y = Vector::Zero(20);
	std::vector<int> hits(20, 0);
	for (std::uint64_t seed = 0; seed < 1000; ++seed)
		for (Index r : split(X, y, 0.5, seed).d1_rows)
			++hits[static_cast<std::size_t>(r)];
	for (int h : hits)
		EXPECT_NEAR(h / 1000.0, 0.5, 0.05);
}

TEST(Split, Errors) {
	EXPECT_THROW(split(Matrix::Zero(3, 1), Vector::Zero(3), 0.5, 0), InputError);
	EXPECT_THROW(split(Matrix::Zero(10, 1), Vector::Zero(10), 0.1, 0), InputError);
	EXPECT_THROW(split(Matrix::Zero(10, 1), Vector::Zero(10), 1.0, 0), InputError);
	EXPECT_THROW(split(Matrix::Zero(10, 1), Vector::Zero(9), 0.5, 0), ShapeError);
}

TEST(TsStatistic, HandExamples) {
	Vector u(2), v(2);
	u << 1, 1;
	v << 2, 2;
	EXPECT_EQ(ts_statistic(u, v), -3.0);
	EXPECT_EQ(ts_statistic(u, u), 0.0);
	EXPECT_THROW(ts_statistic(u, Vector::Zero(3)), InputError);
	EXPECT_THROW(ts_statistic(Vector(), Vector()), InputError);
}

TEST(TsStatistic, MatchesLoopOracle) {
	std::mt19937_64 rng(3);
	for (int t = 0; t < 100; ++t) {
		const Index m = 1 + t * 7;
		const Vector u = random_vector(m, rng), v = random_vector(m, rng);
		EXPECT_LE(relative_error(ts_statistic(u, v), oracle_ts(u, v)), 1e-12);
	}
}

TEST(TsStatistic, ExactAntisymmetry) {
	std::mt19937_64 rng(4);
	for (int t = 0; t < 1000; ++t) {
		const Vector u = random_vector(37, rng) * 3.0, v = random_vector(37, rng);
		EXPECT_EQ(ts_statistic(u, v), -ts_statistic(v, u));
	}
}

TEST(Permutation, GranularityAndStatistics) {
	std::mt19937_64 rng(5);
	const Vector u = random_vector(50, rng), v = random_vector(50, rng);
	const PermutationResult r = permutation_test(u, v, 200, 9);
	ASSERT_EQ(r.perm_stats.size(), 200u);
	EXPECT_TRUE(is_multiple_of(r.p_perm, 1.0 / 200.0));
	EXPECT_GE(r.p_perm, 0.0);
	EXPECT_LE(r.p_perm, 1.0);
	std::size_t below = 0;
	Real mean = 0;
	for (double t : r.perm_stats) {
		below += t < r.statistic ? 1 : 0;
		mean += t;
	}
	EXPECT_EQ(r.p_perm, below / 200.0);
	mean /= 200;
	Real ss = 0;
	for (double t : r.perm_stats)
		ss += (t - mean) * (t - mean);
	EXPECT_LE(relative_error(r.sigma_hat, std::sqrt(ss / 199)), 1e-12);
	EXPECT_DOUBLE_EQ(r.p_gauss, 0.5 * std::erfc(-(r.statistic / r.sigma_hat) / std::sqrt(2.0)));
	EXPECT_FALSE(r.degenerate);
}

TEST(Permutation, PermutedStatisticsComeFromThePool) {
	// Each permuted statistic is (sum of m pooled squares - the rest) / m, so
	// statistics are bounded by the extreme splits of the pool.
	std::mt19937_64 rng(6);
	const Vector u = random_vector(20, rng), v = random_vector(20, rng);
	std::vector<double> pool;
	for (Index i = 0; i < 20; ++i) {
		pool.push_back(u[i] * u[i]);
		pool.push_back(v[i] * v[i]);
	}
	std::sort(pool.begin(), pool.end());
	double lo = 0.0, total = 0.0;
	for (std::size_t k = 0; k < pool.size(); ++k) {
		total += pool[k];
		if (k < 20)
			lo += pool[k];
	}
	const double min_stat = (2 * lo - total) / 20.0;
	const PermutationResult r = permutation_test(u, v, 500, 1);
	for (double t : r.perm_stats) {
		EXPECT_GE(t, min_stat - 1e-12);
		EXPECT_LE(t, -min_stat + 1e-12);
	}
}

TEST(Permutation, MonotoneInObservedStatistic) {
	std::mt19937_64 rng(7);
	std::vector<double> perm;
	for (int b = 0; b < 300; ++b)
		perm.push_back(random_vector(1, rng)[0]);
	double last = 1.0;
	for (double t = 3.0; t >= -3.0; t -= 0.05) {
		const double p = permutation_p_value(t, perm);
		EXPECT_LE(p, last);
		last = p;
	}
}

TEST(Permutation, DegenerateSpread) {
	const Vector u = Vector::Ones(10), v = Vector::Ones(10);
	const PermutationResult r = permutation_test(u, v, 100, 0);
	EXPECT_TRUE(r.degenerate);
	EXPECT_EQ(r.sigma_hat, 0.0);
	EXPECT_EQ(r.p_gauss, 1.0);
	EXPECT_EQ(r.p_perm, 0.0);
}

TEST(Permutation, TooFewPermutations) {
	const Vector u = Vector::Ones(10);
	EXPECT_THROW(permutation_test(u, u, 99, 0), ConfigError);
}

TEST(Permutation, ThreadCountDoesNotMatter) {
	std::mt19937_64 rng(8);
	const Vector u = random_vector(60, rng), v = random_vector(60, rng);
	const PermutationResult a = permutation_test(u, v, 400, 3, 1);
	const PermutationResult b = permutation_test(u, v, 400, 3, 4);
	EXPECT_EQ(a.perm_stats, b.perm_stats);
	EXPECT_EQ(a.p_perm, b.p_perm);
}

TEST(Permutation, CalibratedUnderExchangeability) {
	std::vector<double> p;
	for (std::uint64_t t = 0; t < 1000; ++t) {
		std::mt19937_64 rng(100000 + t);
		const Vector u = random_vector(40, rng), v = random_vector(40, rng);
		p.push_back(permutation_test(u, v, 200, t).p_perm);
	}
	const KsResult ks = ks_uniform(p, 1.0 / 200.0);
	EXPECT_GT(ks.p_value, 0.01) << "KS statistic " << ks.statistic;
}

TEST(TestFeature, FeatureSets) {
	auto [full, null] = test_feature_sets({0, 2, 5}, 2);
	EXPECT_EQ(full, (std::vector<std::size_t>{0, 2, 5}));
	EXPECT_EQ(null, (std::vector<std::size_t>{0, 5}));
	std::tie(full, null) = test_feature_sets({0, 2, 5}, 1);
	EXPECT_EQ(full, (std::vector<std::size_t>{0, 1, 2, 5}));
	EXPECT_EQ(null, (std::vector<std::size_t>{0, 2, 5}));
}

TEST(TestFeature, GranularityAndDeterminism) {
	std::mt19937_64 rng(9);
	const Matrix X = random_matrix(200, 3, rng);
	const Vector y = X.col(0) + random_vector(200, rng);
	const SplitData s = split(X, y, 0.5, 1);
	const InferenceResult a = test_feature(s, {0, 1}, 1, small_net(3), small_train(), 200, 5);
	EXPECT_TRUE(is_multiple_of(a.p_perm, 0.005));
	EXPECT_EQ(a.B, 200u);
	EXPECT_EQ(a.full_features, (std::vector<std::size_t>{0, 1}));
	EXPECT_EQ(a.null_features, (std::vector<std::size_t>{0}));
	EXPECT_EQ(a, test_feature(s, {0, 1}, 1, small_net(3), small_train(), 200, 5));
	EXPECT_EQ(a, test_feature(s, {0, 1}, 1, small_net(3), small_train(), 200, 5, 3));
}

TEST(TestFeature, Errors) {
	std::mt19937_64 rng(10);
	const Matrix X = random_matrix(20, 3, rng);
	const Vector y = random_vector(20, rng);
	const SplitData s = split(X, y, 0.5, 1);
	EXPECT_THROW(test_feature(s, {0}, 0, small_net(3), small_train(), 50, 0), ConfigError);
	EXPECT_THROW(test_feature(s, {0}, 3, small_net(3), small_train(), 100, 0), InputError);
}

TEST(TestFeature, EmptyNullSetUsesTheD1Mean) {
	std::mt19937_64 rng(11);
	const Matrix X = random_matrix(40, 2, rng);
	const Vector y = X.col(0) + random_vector(40, rng);
	const SplitData s = split(X, y, 0.5, 2);
	const InferenceResult r = test_feature(s, {}, 0, small_net(2), small_train(), 100, 0);
	EXPECT_TRUE(r.null_features.empty());
	const SubsetModel full = fit_subset(s.d1_X, s.d1_y, {0}, small_net(2), small_train());
	const Vector u = s.d2_y - full.predict(s.d2_X);
	const Vector v = s.d2_y.array() - s.d1_y.mean();
	EXPECT_EQ(r.statistic, ts_statistic(u, v));
}

TEST(TestFeature, RefitsIgnorePenaltyAndD2) {
	std::mt19937_64 rng(12);
	const Matrix X = random_matrix(120, 3, rng);
	const Vector y = X.col(0) - X.col(1) + random_vector(120, rng);
	SplitData s = split(X, y, 0.5, 3);
	TrainConfig tc = small_train(4);
	tc.lambda1 = 5.0;
	const InferenceResult original = test_feature(s, {0, 1}, 1, small_net(3), tc, 100, 1);

	// Replace D2 with fresh rows; the fits (D1 only) must not move.
	s.d2_X = random_matrix(s.d2_X.rows(), 3, rng);
	s.d2_y = s.d2_X.col(0) + random_vector(s.d2_y.size(), rng);
	const InferenceResult fresh = test_feature(s, {0, 1}, 1, small_net(3), tc, 100, 1);
	TrainConfig unpenalized = tc;
	unpenalized.lambda1 = 0.0;
	const SubsetModel full = fit_subset(s.d1_X, s.d1_y, {0, 1}, small_net(3), unpenalized);
	const SubsetModel null = fit_subset(s.d1_X, s.d1_y, {0}, small_net(3), unpenalized);
	EXPECT_EQ(fresh.statistic, ts_statistic(s.d2_y - full.predict(s.d2_X), s.d2_y - null.predict(s.d2_X)));
	EXPECT_NE(fresh.statistic, original.statistic);
}

TEST(TestFeature, PowerAgainstASingleStrongSignal) {
	std::size_t rejected = 0;
	for (std::uint64_t r = 0; r < 100; ++r) {
		std::mt19937_64 rng(2000 + r);
		const Matrix X = random_matrix(1000, 3, rng);
		const Vector y = 3.0 * X.col(1) + random_vector(1000, rng);
		const SplitData s = split(X, y, 0.5, r);
		const InferenceResult res = test_feature(s, {1}, 1, small_net(3), small_train(r), 1000, r);
		rejected += res.p_perm < 0.05 ? 1 : 0;
	}
	EXPECT_GE(rejected, 90u);
}

TEST(TestFeature, TypeOneErrorForAConditionallyNullFeature) {
	std::size_t rejected = 0;
	for (std::uint64_t r = 0; r < 500; ++r) {
		std::mt19937_64 rng(5000 + r);
		const Matrix X = random_matrix(400, 3, rng);
		const Vector y = X.col(0).array().square().matrix() + random_vector(400, rng);
		const SplitData s = split(X, y, 0.5, r);
		const InferenceResult res = test_feature(s, {0}, 2, small_net(3), small_train(r), 200, r);
		rejected += res.p_perm <= 0.05 ? 1 : 0;
	}
	EXPECT_LE(rejected / 500.0, 0.08);
}

TEST(TestAll, SingletonMatchesTestFeature) {
	std::mt19937_64 rng(13);
	const Matrix X = random_matrix(100, 3, rng);
	const Vector y = X.col(2) + random_vector(100, rng);
	const SplitData s = split(X, y, 0.5, 4);
	const auto all = test_all(s, {2}, small_net(3), small_train(), 100, 8);
	ASSERT_EQ(all.size(), 1u);
	EXPECT_EQ(all[0], test_feature(s, {2}, 2, small_net(3), small_train(), 100, feature_seed(8, 2)));
	EXPECT_THROW(test_all(s, {}, small_net(3), small_train(), 100, 8), InputError);
}

TEST(TestAll, OrderOfSelectedDoesNotMatter) {
	std::mt19937_64 rng(14);
	const Matrix X = random_matrix(100, 4, rng);
	const Vector y = X.col(0) + X.col(3) + random_vector(100, rng);
	const SplitData s = split(X, y, 0.5, 5);
	const auto a = test_all(s, {0, 3, 1}, small_net(4), small_train(), 100, 2);
	const auto b = test_all(s, {3, 1, 0}, small_net(4), small_train(), 100, 2, 3);
	EXPECT_EQ(a, b);
	std::set<std::uint64_t> seeds;
	for (const auto& r : a)
		seeds.insert(r.perm_seed);
	EXPECT_EQ(seeds.size(), 3u);
}

TEST(TestAll, BenchmarkPowerWithPerfectSelection) {
	const NetworkConfig net = make_config(200, 3, 16);
	TrainConfig tc;
	tc.learning_rate = 3e-3;
	std::size_t all_rejected = 0;
	std::vector<std::size_t> per_feature(kBenchmarkTruth.size(), 0);
	for (std::uint64_t r = 0; r < 20; ++r) {
		BenchmarkSpec spec;
		spec.seed = 300 + r;
		const Dataset data = generate_benchmark(spec);
		const SplitData s = split(data.X, data.y, 0.5, r);
		tc.seed = r;
		const auto results = test_all(s, kBenchmarkTruth, net, tc, 1000, r);
		bool all = true;
		for (std::size_t k = 0; k < results.size(); ++k) {
			per_feature[k] += results[k].p_perm < 0.05 ? 1 : 0;
			all = all && results[k].p_perm < 0.05;
		}
		all_rejected += all ? 1 : 0;
	}
	for (std::size_t k = 0; k < per_feature.size(); ++k)
		RecordProperty("rejections_X" + std::to_string(kBenchmarkTruth[k]), static_cast<int>(per_feature[k]));
	EXPECT_GT(all_rejected, 10u) << "rejections per feature: X0 " << per_feature[0] << ", X2 " << per_feature[1]
			<< ", X5 " << per_feature[2] << ", X7 " << per_feature[3] << ", X8 " << per_feature[4];
}
