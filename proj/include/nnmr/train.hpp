#ifndef NNMR_TRAIN_HPP_
#define NNMR_TRAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nnmr/error.hpp"
#include "nnmr/net.hpp"
#include "nnmr/parallel.hpp"
#include "nnmr/random.hpp"

namespace nnmr {

struct TrainConfig {
	double lambda1 = 0.05;
	double lambda2 = 0.01;
	/// Gate threshold: gates with |gate_j| <= tau1 are set to exactly 0.
	double tau1 = 1e-2;
	/// Layer threshold: hidden maps with ||W - I||_1 <= tau2 are reset to the identity.
	double tau2 = 1e-2;
	/// Iterations between truncations.
	std::size_t trunc_period = 100;
	std::size_t max_iters = 5000;
	double learning_rate = 1e-3;
	/// Mini-batch size used when n exceeds `full_batch_limit`; nullopt means always full batch.
	std::optional<std::size_t> batch_size = 256;
	std::size_t full_batch_limit = 5000;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double epsilon = 1e-8;
	std::uint64_t seed = 0;
	/// Fraction of rows held out for validation when tuning.
	double val_fraction = 0.2;
	/// Keep every input-map column at a fixed norm by projecting after each
	/// step. The gate then carries the whole magnitude of its feature.
	bool normalize_input_columns = true;

	void validate() const {
		auto require = [](bool ok, const char* what) {
			if (!ok)
				throw ConfigError(what);
		};
		require(lambda1 >= 0.0 && std::isfinite(lambda1), "lambda1 must be a finite non-negative number");
		require(lambda2 >= 0.0 && std::isfinite(lambda2), "lambda2 must be a finite non-negative number");
		require(tau1 >= 0.0 && std::isfinite(tau1), "tau1 must be a finite non-negative number");
		require(tau2 >= 0.0 && std::isfinite(tau2), "tau2 must be a finite non-negative number");
		require(trunc_period >= 1, "truncation period must be at least 1");
		require(max_iters >= 1, "max_iters must be at least 1");
		require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
		require(!batch_size || *batch_size >= 1, "batch size must be positive");
		require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
		require(epsilon > 0.0, "Adam epsilon must be positive");
		require(val_fraction > 0.0 && val_fraction <= 0.5, "val_fraction must lie in (0, 0.5]");
	}
	bool operator==(const TrainConfig&) const = default;
};

/// Per-column centering and scaling. Constant columns map to 0.
struct Standardizer {
	Vector x_mean;
	Vector x_scale;
	std::vector<bool> x_constant;
	double y_mean = 0.0;
	double y_scale = 1.0;

	static Standardizer fit(const Matrix& X, const Vector& y) {
		Standardizer s;
		const Index n = X.rows();
		const double denom = static_cast<double>(std::max<Index>(n - 1, 1));
		s.x_mean.resize(X.cols());
		s.x_scale.resize(X.cols());
		s.x_constant.assign(static_cast<std::size_t>(X.cols()), false);
		for (Index j = 0; j < X.cols(); ++j) {
			const auto col = X.col(j);
			const double mean = col.mean();
			const double var = (col.array() - mean).square().sum() / denom;
			const bool constant = (col.array() == col[0]).all();
			s.x_mean[j] = mean;
			s.x_scale[j] = constant || !(var > 0.0) ? 1.0 : std::sqrt(var);
			s.x_constant[static_cast<std::size_t>(j)] = constant;
		}
		s.y_mean = y.mean();
		const double yvar = (y.array() - s.y_mean).square().sum() / denom;
		s.y_scale = yvar > 0.0 ? std::sqrt(yvar) : 1.0;
		return s;
	}

	Matrix transform(const Matrix& X) const {
		if (X.cols() != x_mean.size())
			throw ShapeError("standardizer expects " + std::to_string(x_mean.size()) + " columns, got " +
					std::to_string(X.cols()));
		Matrix Z(X.rows(), X.cols());
		for (Index j = 0; j < X.cols(); ++j) {
			if (x_constant[static_cast<std::size_t>(j)])
				Z.col(j).setZero();
			else
				Z.col(j) = (X.col(j).array() - x_mean[j]) / x_scale[j];
		}
		return Z;
	}
	Vector transform_response(const Vector& y) const { return (y.array() - y_mean) / y_scale; }
	Vector inverse_response(const Vector& z) const { return z.array() * y_scale + y_mean; }

	/// Keeps the statistics of the listed columns, in the given order.
	Standardizer select(const std::vector<std::size_t>& columns) const {
		Standardizer s;
		s.x_mean.resize(static_cast<Index>(columns.size()));
		s.x_scale.resize(static_cast<Index>(columns.size()));
		for (std::size_t k = 0; k < columns.size(); ++k) {
			s.x_mean[static_cast<Index>(k)] = x_mean[static_cast<Index>(columns[k])];
			s.x_scale[static_cast<Index>(k)] = x_scale[static_cast<Index>(columns[k])];
			s.x_constant.push_back(x_constant[columns[k]]);
		}
		s.y_mean = y_mean;
		s.y_scale = y_scale;
		return s;
	}
};

struct FittedModel {
	/// Parameters after the final truncation, on the standardized scale.
	NetworkParams params;
	NetworkConfig config;
	/// Original column index of each network input.
	std::vector<std::size_t> features;
	Standardizer standardizer;
	/// Sorted original indices of the inputs whose gate is nonzero.
	std::vector<std::size_t> selected;
	/// Hidden layers left once identity maps are removed.
	std::size_t pruned_depth = 0;
	std::vector<std::pair<std::size_t, double>> history;
	/// Full-data objective of the final parameters.
	double final_objective = 0.0;
	TrainConfig train_config;
	std::vector<std::string> warnings;
};

/// Full penalized objective; equal to objective_gradient(...).loss.
inline double objective(const NetworkParams& params, const NetworkConfig& config, const Matrix& X, const Vector& y,
		double lambda1, double lambda2) {
	detail::check_data(config, X, y);
	if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
		throw ConfigError("penalty weights must be non-negative");
	const Vector prediction = batch_forward(params, config, X);
	return detail::mean_squared_error(y, prediction) + penalty(params, lambda1, lambda2);
}

/// Which coordinates a truncation touched.
struct TruncationMask {
	std::vector<bool> gates;
	/// Indexed like params.layers; only hidden maps can be set.
	std::vector<bool> layers;
};

/// In-place hard thresholding. Gates with |gate_j| <= tau1 become 0 and
/// hidden maps with ||W_l - I||_1 <= tau2 become (I, 0).
inline TruncationMask truncate_inplace(NetworkParams& params, const NetworkConfig& config, double tau1, double tau2) {
	check_shapes(params, config);
	if (!(tau1 >= 0.0) || !(tau2 >= 0.0))
		throw ConfigError("truncation thresholds must be non-negative");
	TruncationMask mask;
	mask.gates.assign(static_cast<std::size_t>(params.gate.size()), false);
	mask.layers.assign(params.layers.size(), false);
	for (Index j = 0; j < params.gate.size(); ++j)
		if (std::abs(params.gate[j]) <= tau1) {
			params.gate[j] = 0.0;
			mask.gates[static_cast<std::size_t>(j)] = true;
		}
	for (std::size_t l = 1; l < config.depth; ++l) {
		auto& layer = params.layers[l];
		const Matrix identity = Matrix::Identity(layer.weight.rows(), layer.weight.cols());
		if ((layer.weight - identity).cwiseAbs().sum() <= tau2) {
			layer.weight = identity;
			layer.bias.setZero();
			mask.layers[l] = true;
		}
	}
	return mask;
}

inline NetworkParams truncate(NetworkParams params, const NetworkConfig& config, double tau1, double tau2) {
	truncate_inplace(params, config, tau1, tau2);
	return params;
}

/// Gates at 1, hidden maps at I plus N(0, 0.01^2) noise, boundary maps with
/// He-style N(0, 2 / fan_in) weights (N(0, 1 / fan_in) for the linear output
/// map), zero biases.
inline NetworkParams initialize(const NetworkConfig& config, Rng& rng) {
	config.validate();
	NetworkParams p = NetworkParams::zeros(config);
	p.gate.setOnes();
	std::normal_distribution<double> normal(0.0, 1.0);
	for (std::size_t l = 0; l < config.layer_count(); ++l) {
		auto& w = p.layers[l].weight;
		if (config.is_hidden(l)) {
			for (Index c = 0; c < w.cols(); ++c)
				for (Index r = 0; r < w.rows(); ++r)
					w(r, c) = (r == c ? 1.0 : 0.0) + 0.01 * normal(rng);
		} else {
			const double gain = l == config.depth ? 1.0 : 2.0;
			const double sd = std::sqrt(gain / static_cast<double>(w.cols()));
			for (Index c = 0; c < w.cols(); ++c)
				for (Index r = 0; r < w.rows(); ++r)
					w(r, c) = sd * normal(rng);
		}
	}
	return p;
}

/// Norm that input-map columns are held at: the expected column norm under
/// the initialization.
inline double input_column_norm(const NetworkConfig& config) {
	const double gain = config.depth == 0 ? 1.0 : 2.0;
	return std::sqrt(gain * static_cast<double>(config.layer_outputs(0)) / static_cast<double>(config.input_dim));
}

/// Projects every nonzero input-map column onto the sphere of radius `target`.
inline void normalize_input_columns(NetworkParams& params, double target) {
	auto& w = params.input_layer().weight;
	for (Index j = 0; j < w.cols(); ++j) {
		const double norm = w.col(j).norm();
		if (norm > 0.0 && std::isfinite(norm))
			w.col(j) *= target / norm;
	}
}

namespace detail {

class Adam {
public:
	Adam(const NetworkConfig& config, const TrainConfig& train) :
			m_(Gradients::zeros(config)), v_(Gradients::zeros(config)), train_(train) { }

	void step(NetworkParams& params, const Gradients& grad) {
		++t_;
		const double b1 = train_.beta1, b2 = train_.beta2;
		const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
		const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
		const double lr = train_.learning_rate, eps = train_.epsilon;
		auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
			m = b1 * m + (1.0 - b1) * g;
			v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
			p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
		};
		update(params.gate, grad.gate, m_.gate, v_.gate);
		for (std::size_t l = 0; l < params.layers.size(); ++l) {
			update(params.layers[l].weight, grad.layers[l].weight, m_.layers[l].weight, v_.layers[l].weight);
			update(params.layers[l].bias, grad.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias);
		}
	}

	/// Zeroes the moment estimates of every truncated coordinate.
	void reset(const TruncationMask& mask) {
		for (std::size_t j = 0; j < mask.gates.size(); ++j)
			if (mask.gates[j]) {
				m_.gate[static_cast<Index>(j)] = 0.0;
				v_.gate[static_cast<Index>(j)] = 0.0;
			}
		for (std::size_t l = 0; l < mask.layers.size(); ++l)
			if (mask.layers[l]) {
				m_.layers[l].weight.setZero();
				v_.layers[l].weight.setZero();
				m_.layers[l].bias.setZero();
				v_.layers[l].bias.setZero();
			}
	}

private:
	Gradients m_, v_;
	TrainConfig train_;
	std::size_t t_ = 0;
};

inline void check_training_data(const Matrix& X, const Vector& y) {
	if (X.rows() != y.size())
		throw ShapeError("data has " + std::to_string(X.rows()) + " rows but " + std::to_string(y.size()) +
				" responses");
	if (X.rows() < 2)
		throw InputError("fitting needs at least 2 observations, got " + std::to_string(X.rows()));
	if (!X.allFinite() || !y.allFinite())
		throw InputError("training data contains non-finite values");
}

inline std::vector<std::size_t> nonzero_features(const NetworkParams& params, const std::vector<std::size_t>& features) {
	std::vector<std::size_t> out;
	for (Index j = 0; j < params.gate.size(); ++j)
		if (params.gate[j] != 0.0)
			out.push_back(features[static_cast<std::size_t>(j)]);
	std::sort(out.begin(), out.end());
	return out;
}

inline std::size_t count_identity_hidden(const NetworkParams& params) {
	std::size_t count = 0;
	for (const auto& layer : params.hidden_layers())
		count += layer.is_identity() ? 1 : 0;
	return count;
}

}

/**
 * Minimizes the penalized objective on standardized data with Adam steps,
 * truncating every `trunc_period` iterations and once more at the end.
 * Truncated coordinates have their moment estimates cleared. Gates of
 * constant columns start (and stay) at 0.
 */
inline FittedModel fit(const Matrix& X, const Vector& y, const NetworkConfig& net_config,
		const TrainConfig& train_config) {
	train_config.validate();
	net_config.validate();
	detail::check_training_data(X, y);
	if (static_cast<std::size_t>(X.cols()) != net_config.input_dim)
		throw ShapeError("data has " + std::to_string(X.cols()) + " columns, network expects " +
				std::to_string(net_config.input_dim));

	FittedModel model;
	model.config = net_config;
	model.train_config = train_config;
	model.features.resize(net_config.input_dim);
	std::iota(model.features.begin(), model.features.end(), std::size_t{0});
	model.standardizer = Standardizer::fit(X, y);
	const Matrix Xs = model.standardizer.transform(X);
	const Vector ys = model.standardizer.transform_response(y);

	Rng rng = make_rng(derive_seed(train_config.seed, {0}));
	NetworkParams params = initialize(net_config, rng);
	const double column_norm = input_column_norm(net_config);
	if (train_config.normalize_input_columns)
		normalize_input_columns(params, column_norm);
	for (std::size_t j = 0; j < net_config.input_dim; ++j)
		if (model.standardizer.x_constant[j]) {
			params.gate[static_cast<Index>(j)] = 0.0;
			model.warnings.push_back("feature " + std::to_string(j) + " is constant; its gate is fixed at 0");
		}

	const auto n = static_cast<std::size_t>(X.rows());
	const bool full_batch = !train_config.batch_size || n <= train_config.full_batch_limit ||
			*train_config.batch_size >= n;
	std::vector<Index> order(n);
	std::iota(order.begin(), order.end(), Index{0});
	Rng batch_rng = make_rng(derive_seed(train_config.seed, {1}));
	std::size_t cursor = n;

	detail::Adam adam(net_config, train_config);
	model.history.reserve(train_config.max_iters);
	for (std::size_t it = 1; it <= train_config.max_iters; ++it) {
		ObjectiveValue value;
		if (full_batch) {
			value = objective_gradient(params, net_config, Xs, ys, train_config.lambda1, train_config.lambda2);
		} else {
			const std::size_t b = *train_config.batch_size;
			if (cursor + b > n) {
				std::shuffle(order.begin(), order.end(), batch_rng);
				cursor = 0;
			}
			const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(cursor),
					order.begin() + static_cast<std::ptrdiff_t>(cursor + b));
			cursor += b;
			const Matrix Xb = Xs(rows, Eigen::all);
			const Vector yb = ys(rows);
			value = objective_gradient(params, net_config, Xb, yb, train_config.lambda1, train_config.lambda2);
		}
		model.history.emplace_back(it, value.loss);
		if (!std::isfinite(value.loss))
			throw DivergenceError(it, value.loss);
		adam.step(params, value.gradient);
		if (train_config.normalize_input_columns)
			normalize_input_columns(params, column_norm);
		if (!params.all_finite())
			throw DivergenceError(it, std::numeric_limits<double>::quiet_NaN());
		for (std::size_t j = 0; j < net_config.input_dim; ++j)
			if (model.standardizer.x_constant[j])
				params.gate[static_cast<Index>(j)] = 0.0;
		if (it % train_config.trunc_period == 0)
			adam.reset(truncate_inplace(params, net_config, train_config.tau1, train_config.tau2));
	}
	truncate_inplace(params, net_config, train_config.tau1, train_config.tau2);

	model.final_objective = objective(params, net_config, Xs, ys, train_config.lambda1, train_config.lambda2);
	if (!std::isfinite(model.final_objective))
		throw DivergenceError(train_config.max_iters, model.final_objective);
	model.selected = detail::nonzero_features(params, model.features);
	model.pruned_depth = net_config.depth - detail::count_identity_hidden(params);
	model.params = std::move(params);
	return model;
}

/**
 * Removes hidden maps equal to (I, 0) and inputs whose gate is 0. Predictions
 * are unchanged bit for bit. When every gate is 0 the first input is kept
 * (still gated off) so the network keeps at least one input.
 */
inline FittedModel prune(const FittedModel& model) {
	check_shapes(model.params, model.config);
	FittedModel out = model;
	auto& layers = out.params.layers;
	std::vector<AffineLayer> kept;
	kept.reserve(layers.size());
	for (std::size_t l = 0; l < layers.size(); ++l)
		if (!(model.config.is_hidden(l) && layers[l].is_identity()))
			kept.push_back(std::move(layers[l]));
	layers = std::move(kept);
	out.config.depth = layers.size() - 1;

	std::vector<std::size_t> columns;
	for (Index j = 0; j < model.params.gate.size(); ++j)
		if (model.params.gate[j] != 0.0)
			columns.push_back(static_cast<std::size_t>(j));
	if (columns.empty())
		columns.push_back(0);
	if (columns.size() != static_cast<std::size_t>(model.params.gate.size())) {
		Vector gate(static_cast<Index>(columns.size()));
		Matrix w0(layers.front().weight.rows(), static_cast<Index>(columns.size()));
		std::vector<std::size_t> features;
		for (std::size_t k = 0; k < columns.size(); ++k) {
			const auto c = static_cast<Index>(columns[k]);
			gate[static_cast<Index>(k)] = model.params.gate[c];
			w0.col(static_cast<Index>(k)) = layers.front().weight.col(c);
			features.push_back(model.features[columns[k]]);
		}
		out.params.gate = std::move(gate);
		layers.front().weight = std::move(w0);
		out.standardizer = model.standardizer.select(columns);
		out.features = std::move(features);
		out.config.input_dim = columns.size();
	}
	out.pruned_depth = out.config.depth;
	return out;
}

/// Predictions on the original response scale. `X` holds all original
/// columns; the model reads the ones listed in `model.features`.
inline Vector predict(const FittedModel& model, const Matrix& X) {
	for (std::size_t f : model.features)
		if (f >= static_cast<std::size_t>(X.cols()))
			throw ShapeError("model reads column " + std::to_string(f) + " but data has " + std::to_string(X.cols()));
	std::vector<Index> cols(model.features.begin(), model.features.end());
	const Matrix Xs = model.standardizer.transform(X(Eigen::all, cols));
	return model.standardizer.inverse_response(batch_forward(model.params, model.config, Xs));
}

struct GridPoint {
	double lambda1 = 0.0;
	double lambda2 = 0.0;
	double tau1 = 0.0;
	bool operator==(const GridPoint&) const = default;
};

/// Index of the smallest validation error; exact ties go to the larger
/// lambda1, then the larger lambda2. Non-finite errors never win unless all are.
inline std::size_t select_grid_point(const std::vector<GridPoint>& grid, const std::vector<double>& errors) {
	if (grid.empty())
		throw InputError("tuning grid is empty");
	if (grid.size() != errors.size())
		throw ShapeError("one validation error per grid point is required");
	std::size_t best = 0;
	auto better = [&](std::size_t a, std::size_t b) {
		const double ea = std::isfinite(errors[a]) ? errors[a] : std::numeric_limits<double>::infinity();
		const double eb = std::isfinite(errors[b]) ? errors[b] : std::numeric_limits<double>::infinity();
		if (ea != eb)
			return ea < eb;
		if (grid[a].lambda1 != grid[b].lambda1)
			return grid[a].lambda1 > grid[b].lambda1;
		return grid[a].lambda2 > grid[b].lambda2;
	};
	for (std::size_t k = 1; k < grid.size(); ++k)
		if (better(k, best))
			best = k;
	return best;
}

/// Deterministic split of row indices into (train, validation).
inline std::pair<std::vector<Index>, std::vector<Index>> validation_split(Index n, double val_fraction,
		std::uint64_t seed) {
	const auto n_val = std::max<Index>(1, static_cast<Index>(std::llround(val_fraction * static_cast<double>(n))));
	if (n - n_val < 2)
		throw InputError("too few rows to hold out a validation set");
	std::vector<Index> order(static_cast<std::size_t>(n));
	std::iota(order.begin(), order.end(), Index{0});
	Rng rng = make_rng(derive_seed(seed, {2}));
	std::shuffle(order.begin(), order.end(), rng);
	std::vector<Index> val(order.begin(), order.begin() + n_val);
	std::vector<Index> train(order.begin() + n_val, order.end());
	std::sort(val.begin(), val.end());
	std::sort(train.begin(), train.end());
	return {std::move(train), std::move(val)};
}

struct TuneResult {
	TrainConfig best;
	std::size_t best_index = 0;
	std::vector<double> validation_mse;
};

/**
 * Fits every grid point on a training split, prunes, and scores the
 * validation split (original response scale). Grid points that diverge score
 * +inf. Grid points may run on `threads` workers; the result does not depend
 * on the thread count.
 */
inline TuneResult tune_with_report(const Matrix& X, const Vector& y, const NetworkConfig& net_config,
		const std::vector<GridPoint>& grid, const TrainConfig& base, std::size_t threads = 1) {
	if (grid.empty())
		throw InputError("tuning grid is empty");
	base.validate();
	detail::check_training_data(X, y);
	const auto [train_rows, val_rows] = validation_split(X.rows(), base.val_fraction, base.seed);
	const Matrix Xt = X(train_rows, Eigen::all);
	const Vector yt = y(train_rows);
	const Matrix Xv = X(val_rows, Eigen::all);
	const Vector yv = y(val_rows);

	TuneResult result;
	result.validation_mse.assign(grid.size(), std::numeric_limits<double>::infinity());
	std::vector<std::exception_ptr> failures(grid.size());
	parallel_for(grid.size(), threads, [&](std::size_t k) {
		TrainConfig cfg = base;
		cfg.lambda1 = grid[k].lambda1;
		cfg.lambda2 = grid[k].lambda2;
		cfg.tau1 = grid[k].tau1;
		try {
			const FittedModel model = prune(fit(Xt, yt, net_config, cfg));
			result.validation_mse[k] = detail::mean_squared_error(yv, predict(model, Xv));
		} catch (const DivergenceError&) {
			failures[k] = std::current_exception();
		}
	});
	if (std::none_of(result.validation_mse.begin(), result.validation_mse.end(),
			[](double e) { return std::isfinite(e); }))
		for (auto& f : failures)
			if (f)
				std::rethrow_exception(f);
	result.best_index = select_grid_point(grid, result.validation_mse);
	result.best = base;
	result.best.lambda1 = grid[result.best_index].lambda1;
	result.best.lambda2 = grid[result.best_index].lambda2;
	result.best.tau1 = grid[result.best_index].tau1;
	return result;
}

inline TrainConfig tune(const Matrix& X, const Vector& y, const NetworkConfig& net_config,
		const std::vector<GridPoint>& grid, const TrainConfig& base, std::size_t threads = 1) {
	return tune_with_report(X, y, net_config, grid, base, threads).best;
}

/// Cartesian product, lambda1-major.
inline std::vector<GridPoint> make_grid(const std::vector<double>& lambda1s, const std::vector<double>& lambda2s,
		const std::vector<double>& tau1s) {
	std::vector<GridPoint> grid;
	for (double l1 : lambda1s)
		for (double l2 : lambda2s)
			for (double t1 : tau1s)
				grid.push_back({l1, l2, t1});
	return grid;
}

}

#endif /* NNMR_TRAIN_HPP_ */
