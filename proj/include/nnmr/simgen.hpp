#ifndef NNMR_SIMGEN_HPP_
#define NNMR_SIMGEN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "nnmr/error.hpp"
#include "nnmr/infer.hpp"
#include "nnmr/parallel.hpp"
#include "nnmr/random.hpp"
#include "nnmr/train.hpp"

namespace nnmr {

/// Active coordinates of the benchmark response.
inline const std::vector<std::size_t> kBenchmarkTruth = {0, 2, 5, 7, 8};

/**
 * Y = X0^3 (X2^2 + X5) - |X7| cos(X8) + noise_sd * eps, with every X_j and
 * eps independent standard normals.
 */
struct BenchmarkSpec {
	std::size_t n = 1000;
	std::size_t d = 200;
	double noise_sd = 1.0;
	std::vector<std::size_t> truth = kBenchmarkTruth;
	std::uint64_t seed = 0;

	void validate() const {
		if (d < 9)
			throw InputError("benchmark needs d >= 9, got " + std::to_string(d));
		if (n < 1)
			throw InputError("benchmark needs n >= 1");
		if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
			throw InputError("noise_sd must be a finite non-negative number");
	}
};

struct Dataset {
	Matrix X;
	Vector y;
};

inline double benchmark_mean(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
	return x[0] * x[0] * x[0] * (x[2] * x[2] + x[5]) - std::abs(x[7]) * std::cos(x[8]);
}

inline Dataset generate_benchmark(const BenchmarkSpec& spec) {
	spec.validate();
	Rng rng = make_rng(derive_seed(spec.seed, {10}));
	std::normal_distribution<double> normal(0.0, 1.0);
	Dataset out;
	out.X.resize(static_cast<Index>(spec.n), static_cast<Index>(spec.d));
	out.y.resize(static_cast<Index>(spec.n));
	for (Index i = 0; i < out.X.rows(); ++i) {
		for (Index j = 0; j < out.X.cols(); ++j)
			out.X(i, j) = normal(rng);
		out.y[i] = benchmark_mean(out.X.row(i)) + spec.noise_sd * normal(rng);
	}
	return out;
}

/// Benchmark data in which feature j (outside the truth set) is a null feature.
inline Dataset generate_null(std::size_t n, std::size_t d, std::size_t j, std::uint64_t seed) {
	if (std::find(kBenchmarkTruth.begin(), kBenchmarkTruth.end(), j) != kBenchmarkTruth.end())
		throw InputError("feature " + std::to_string(j) + " enters the benchmark response and cannot be a null feature");
	if (j >= d)
		throw InputError("feature " + std::to_string(j) + " out of range for d = " + std::to_string(d));
	BenchmarkSpec spec;
	spec.n = n;
	spec.d = d;
	spec.seed = seed;
	return generate_benchmark(spec);
}

struct SelectionScore {
	double precision = 0.0;
	double recall = 0.0;
	double f1 = 0.0;
	bool operator==(const SelectionScore&) const = default;
};

/// Precision is 0 for an empty selection; F1 is 0 when precision + recall is 0.
inline SelectionScore selection_metrics(const std::vector<std::size_t>& selected, const std::vector<std::size_t>& truth) {
	if (truth.empty())
		throw InputError("truth set is empty");
	const std::set<std::size_t> s(selected.begin(), selected.end());
	const std::set<std::size_t> t(truth.begin(), truth.end());
	std::size_t hits = 0;
	for (std::size_t j : s)
		hits += t.count(j);
	SelectionScore out;
	out.precision = s.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(s.size());
	out.recall = static_cast<double>(hits) / static_cast<double>(t.size());
	const double denom = out.precision + out.recall;
	out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
	return out;
}

/// Baseline: the k columns with the largest absolute Pearson correlation with y.
inline std::vector<std::size_t> marginal_screening(const Matrix& X, const Vector& y, std::size_t k) {
	const Vector yc = y.array() - y.mean();
	std::vector<double> score(static_cast<std::size_t>(X.cols()), 0.0);
	for (Index j = 0; j < X.cols(); ++j) {
		const Vector xc = X.col(j).array() - X.col(j).mean();
		const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
		score[static_cast<std::size_t>(j)] = denom > 0.0 ? std::abs(xc.dot(yc)) / denom : 0.0;
	}
	std::vector<std::size_t> order(score.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
	order.resize(std::min(k, order.size()));
	std::sort(order.begin(), order.end());
	return order;
}

struct MetricSummary {
	double mean = 0.0;
	double sd = 0.0;
};

/// Mean and sample standard deviation; sd is 0 for fewer than two values.
inline MetricSummary summarize(const std::vector<double>& values) {
	MetricSummary s;
	if (values.empty())
		return s;
	for (double v : values)
		s.mean += v;
	s.mean /= static_cast<double>(values.size());
	if (values.size() > 1) {
		double ss = 0.0;
		for (double v : values)
			ss += (v - s.mean) * (v - s.mean);
		s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
	}
	return s;
}

struct SelectionRecord {
	std::size_t replicate = 0;
	std::uint64_t seed = 0;
	bool failed = false;
	std::string error;
	std::vector<std::size_t> selected;
	SelectionScore score;
	std::vector<std::size_t> baseline_selected;
	SelectionScore baseline;
	GridPoint tuned;
	std::size_t pruned_depth = 0;
};

struct Type1Record {
	std::size_t replicate = 0;
	std::uint64_t seed = 0;
	bool failed = false;
	std::string error;
	std::vector<std::size_t> selected;
	InferenceResult post_selection;
	InferenceResult no_selection;
};

struct SimulationReport {
	std::string study;
	std::vector<SelectionRecord> selection;
	std::vector<Type1Record> type1;
	std::size_t failures = 0;
	// selection study aggregates over non-failed replicates
	MetricSummary precision, recall, f1;
	MetricSummary baseline_precision, baseline_recall, baseline_f1;
	// type I study aggregates
	double level = 0.05;
	double post_selection_rate = 0.0;
	double no_selection_rate = 0.0;
};

/// Seed of replicate r; independent of how many replicates are run.
inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t r) {
	return derive_seed(master, {6, r});
}

inline void aggregate_selection(SimulationReport& report) {
	std::vector<double> p, r, f, bp, br, bf;
	report.failures = 0;
	for (const auto& rec : report.selection) {
		if (rec.failed) {
			++report.failures;
			continue;
		}
		p.push_back(rec.score.precision);
		r.push_back(rec.score.recall);
		f.push_back(rec.score.f1);
		bp.push_back(rec.baseline.precision);
		br.push_back(rec.baseline.recall);
		bf.push_back(rec.baseline.f1);
	}
	report.precision = summarize(p);
	report.recall = summarize(r);
	report.f1 = summarize(f);
	report.baseline_precision = summarize(bp);
	report.baseline_recall = summarize(br);
	report.baseline_f1 = summarize(bf);
}

/// A test rejects at `level` when p_perm <= level.
inline void aggregate_type1(SimulationReport& report) {
	std::size_t ok = 0, post = 0, none = 0;
	report.failures = 0;
	for (const auto& rec : report.type1) {
		if (rec.failed) {
			++report.failures;
			continue;
		}
		++ok;
		post += rec.post_selection.p_perm <= report.level ? 1 : 0;
		none += rec.no_selection.p_perm <= report.level ? 1 : 0;
	}
	report.post_selection_rate = ok ? static_cast<double>(post) / static_cast<double>(ok) : 0.0;
	report.no_selection_rate = ok ? static_cast<double>(none) / static_cast<double>(ok) : 0.0;
}

/**
 * For each replicate: draw benchmark data, tune on the grid, refit on all rows
 * with the tuned configuration, prune and score against the truth. A
 * replicate that fails is recorded and left out of the aggregates.
 */
inline SimulationReport run_selection_study(const BenchmarkSpec& spec, const NetworkConfig& net_config,
		const std::vector<GridPoint>& grid, const TrainConfig& base, std::size_t replicates,
		std::size_t threads = 1) {
	spec.validate();
	if (replicates < 1)
		throw ConfigError("at least one replicate is required");
	if (grid.empty())
		throw InputError("tuning grid is empty");
	SimulationReport report;
	report.study = "selection";
	report.selection.resize(replicates);
	parallel_for(replicates, threads, [&](std::size_t r) {
		SelectionRecord& rec = report.selection[r];
		rec.replicate = r;
		rec.seed = replicate_seed(spec.seed, r);
		try {
			BenchmarkSpec rs = spec;
			rs.seed = rec.seed;
			const Dataset data = generate_benchmark(rs);
			NetworkConfig nc = net_config;
			nc.input_dim = spec.d;
			TrainConfig tc = base;
			tc.seed = derive_seed(rec.seed, {7});
			const TuneResult tuned = tune_with_report(data.X, data.y, nc, grid, tc, 1);
			const FittedModel model = prune(fit(data.X, data.y, nc, tuned.best));
			rec.tuned = grid[tuned.best_index];
			rec.selected = model.selected;
			rec.pruned_depth = model.pruned_depth;
			rec.score = selection_metrics(rec.selected, spec.truth);
			rec.baseline_selected = marginal_screening(data.X, data.y, spec.truth.size());
			rec.baseline = selection_metrics(rec.baseline_selected, spec.truth);
		} catch (const Error& e) {
			rec.failed = true;
			rec.error = e.what();
		}
	});
	aggregate_selection(report);
	return report;
}

/**
 * Type I error of the permutation test for a null feature j under two
 * conditioning sets: every other predictor ("no selection") and the features
 * selected on D1 ("post selection").
 */
inline SimulationReport run_type1_study(const BenchmarkSpec& spec, std::size_t j, const NetworkConfig& net_config,
		const TrainConfig& train_config, std::size_t permutations, std::size_t replicates, double level,
		std::size_t threads = 1, double split_ratio = 0.5) {
	spec.validate();
	if (replicates < 50)
		throw ConfigError("type I studies need at least 50 replicates, got " + std::to_string(replicates));
	if (!(level > 0.0 && level <= 1.0))
		throw ConfigError("level must lie in (0, 1]");
	if (permutations < kMinPermutations)
		throw ConfigError("at least " + std::to_string(kMinPermutations) + " permutations are required");
	if (std::find(spec.truth.begin(), spec.truth.end(), j) != spec.truth.end() || j >= spec.d)
		throw InputError("feature " + std::to_string(j) + " is not a null feature of the benchmark");

	SimulationReport report;
	report.study = "type1";
	report.level = level;
	report.type1.resize(replicates);
	parallel_for(replicates, threads, [&](std::size_t r) {
		Type1Record& rec = report.type1[r];
		rec.replicate = r;
		rec.seed = replicate_seed(spec.seed, r);
		try {
			BenchmarkSpec rs = spec;
			rs.seed = rec.seed;
			const Dataset data = generate_benchmark(rs);
			const SplitData halves = split(data.X, data.y, split_ratio, derive_seed(rec.seed, {8}));
			NetworkConfig nc = net_config;
			nc.input_dim = spec.d;
			TrainConfig tc = train_config;
			tc.seed = derive_seed(rec.seed, {7});
			rec.selected = fit(halves.d1_X, halves.d1_y, nc, tc).selected;

			const std::uint64_t perm_seed = derive_seed(rec.seed, {9});
			rec.post_selection = test_feature(halves, rec.selected, j, net_config, tc, permutations, perm_seed);
			std::vector<std::size_t> everything(spec.d);
			std::iota(everything.begin(), everything.end(), std::size_t{0});
			rec.no_selection = test_feature(halves, everything, j, net_config, tc, permutations, perm_seed);
		} catch (const Error& e) {
			rec.failed = true;
			rec.error = e.what();
		}
	});
	aggregate_type1(report);
	return report;
}

}

#endif /* NNMR_SIMGEN_HPP_ */
