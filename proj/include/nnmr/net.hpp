#ifndef NNMR_NET_HPP_
#define NNMR_NET_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnmr/error.hpp"

namespace nnmr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/**
 * Architecture of an input-gated ReLU network.
 *
 * A network of depth D is the composition h_D . relu . h_{D-1} . ... . relu . h_0
 * applied to gate (*) x. The input map h_0 takes d inputs to `width` units,
 * the D-1 hidden maps are width x width and the output map h_D returns a
 * scalar. A depth-0 network is the single affine map d -> 1.
 */
struct NetworkConfig {
	std::size_t input_dim = 1;
	std::size_t depth = 1;
	std::size_t width = 8;
	/// Sup-norm bound on the network output. Documentation only, never enforced.
	std::optional<double> output_bound;

	void validate() const {
		if (input_dim < 1)
			throw ShapeError("network input dimension must be at least 1");
		if (width < 1)
			throw ShapeError("network width must be at least 1");
		if (output_bound && !(*output_bound > 0.0))
			throw ShapeError("output bound must be positive");
	}
	std::size_t layer_count() const noexcept { return depth + 1; }
	std::size_t layer_inputs(std::size_t l) const noexcept { return l == 0 ? input_dim : width; }
	std::size_t layer_outputs(std::size_t l) const noexcept { return l == depth ? 1 : width; }
	/// True for the square hidden-to-hidden maps h_1 .. h_{D-1}.
	bool is_hidden(std::size_t l) const noexcept { return l >= 1 && l < depth; }
	/// Number of weights and biases, excluding the gate.
	std::size_t size() const noexcept {
		std::size_t s = 0;
		for (std::size_t l = 0; l < layer_count(); ++l)
			s += layer_outputs(l) * (layer_inputs(l) + 1);
		return s;
	}
	bool operator==(const NetworkConfig&) const = default;
};

struct AffineLayer {
	Matrix weight;
	Vector bias;

	bool is_identity() const {
		return weight.rows() == weight.cols() && weight.isIdentity(0.0) && (bias.array() == 0.0).all();
	}
	bool operator==(const AffineLayer& other) const {
		return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
				bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
	}
};

namespace detail {

/// Storage shared by parameters and everything shaped like them.
struct LayeredBlocks {
	Vector gate;
	/// layers[0] is the input map, layers[1 .. depth-1] the hidden maps and
	/// layers.back() the output map.
	std::vector<AffineLayer> layers;

	std::size_t depth() const noexcept { return layers.empty() ? 0 : layers.size() - 1; }

	AffineLayer& input_layer() { return layers.front(); }
	const AffineLayer& input_layer() const { return layers.front(); }
	AffineLayer& output_layer() { return layers.back(); }
	const AffineLayer& output_layer() const { return layers.back(); }
	std::span<AffineLayer> hidden_layers() {
		return layers.size() < 2 ? std::span<AffineLayer>() : std::span(layers).subspan(1, layers.size() - 2);
	}
	std::span<const AffineLayer> hidden_layers() const {
		return layers.size() < 2 ? std::span<const AffineLayer>() : std::span(layers).subspan(1, layers.size() - 2);
	}

	/// Calls fn(block) on the gate and on every weight matrix and bias, in a fixed order.
	template<typename Fn>
	void for_each_block(Fn&& fn) {
		fn(gate);
		for (auto& layer : layers) {
			fn(layer.weight);
			fn(layer.bias);
		}
	}
	template<typename Fn>
	void for_each_block(Fn&& fn) const {
		fn(gate);
		for (const auto& layer : layers) {
			fn(layer.weight);
			fn(layer.bias);
		}
	}

	bool all_finite() const {
		bool finite = true;
		for_each_block([&](const auto& block) { finite = finite && block.allFinite(); });
		return finite;
	}

	void set_zero(const NetworkConfig& config) {
		gate = Vector::Zero(static_cast<Index>(config.input_dim));
		layers.assign(config.layer_count(), {});
		for (std::size_t l = 0; l < config.layer_count(); ++l) {
			layers[l].weight = Matrix::Zero(static_cast<Index>(config.layer_outputs(l)),
					static_cast<Index>(config.layer_inputs(l)));
			layers[l].bias = Vector::Zero(static_cast<Index>(config.layer_outputs(l)));
		}
	}

	bool operator==(const LayeredBlocks& other) const {
		return gate.size() == other.gate.size() && gate == other.gate && layers == other.layers;
	}
};

}

/// Trainable state: the gate vector plus every affine map.
struct NetworkParams : detail::LayeredBlocks {
	static NetworkParams zeros(const NetworkConfig& config) {
		NetworkParams p;
		p.set_zero(config);
		return p;
	}
};

/// Partial derivatives of a scalar objective, shaped like NetworkParams.
struct Gradients : detail::LayeredBlocks {
	static Gradients zeros(const NetworkConfig& config) {
		Gradients g;
		g.set_zero(config);
		return g;
	}
};

inline void check_shapes(const detail::LayeredBlocks& params, const NetworkConfig& config) {
	config.validate();
	if (static_cast<std::size_t>(params.gate.size()) != config.input_dim)
		throw ShapeError("gate has length " + std::to_string(params.gate.size()) + ", expected " +
				std::to_string(config.input_dim));
	if (params.layers.size() != config.layer_count())
		throw ShapeError("parameters hold " + std::to_string(params.layers.size()) + " affine maps, expected " +
				std::to_string(config.layer_count()));
	for (std::size_t l = 0; l < params.layers.size(); ++l) {
		const auto& layer = params.layers[l];
		if (static_cast<std::size_t>(layer.weight.rows()) != config.layer_outputs(l) ||
				static_cast<std::size_t>(layer.weight.cols()) != config.layer_inputs(l) ||
				static_cast<std::size_t>(layer.bias.size()) != config.layer_outputs(l))
			throw ShapeError("affine map " + std::to_string(l) + " has shape " + std::to_string(layer.weight.rows()) +
					"x" + std::to_string(layer.weight.cols()) + " with bias " + std::to_string(layer.bias.size()) +
					", expected " + std::to_string(config.layer_outputs(l)) + "x" + std::to_string(config.layer_inputs(l)));
	}
}

namespace detail {

inline constexpr Index kSampleBlock = 128;

/**
 * Z(i, :) = bias^T + sum_j input(i, j) * weight(:, j)^T, with one row per sample.
 *
 * Every entry of Z is accumulated over j in ascending order, independently of
 * the number of samples, so a batch row equals the single-sample result bit
 * for bit. Columns with skip(j) true are left out entirely; adding exact zeros
 * never changes a sum, which is what keeps predictions identical when
 * zero-gated inputs or identity maps are pruned away.
 */
template<typename LoadColumn, typename Skip>
void affine_batch(const AffineLayer& layer, Index n, LoadColumn&& load_column, Skip&& skip, Matrix& Z) {
	const Index units = layer.weight.rows();
	Z.resize(n, units);
	for (Index k = 0; k < units; ++k)
		Z.col(k).setConstant(layer.bias[k]);
	double buffer[kSampleBlock];
	for (Index b0 = 0; b0 < n; b0 += kSampleBlock) {
		const Index len = std::min(n - b0, kSampleBlock);
		for (Index j = 0; j < layer.weight.cols(); ++j) {
			if (skip(j))
				continue;
			load_column(j, b0, len, buffer);
			for (Index k = 0; k < units; ++k) {
				const double w = layer.weight(k, j);
				double* z = Z.col(k).data() + b0;
				for (Index i = 0; i < len; ++i)
					z[i] += buffer[i] * w;
			}
		}
	}
}

/// Pre-activations of the input map for the rows of X.
inline void input_affine(const AffineLayer& layer, const Vector& gate, const Matrix& X, Matrix& Z) {
	affine_batch(layer, X.rows(),
			[&](Index j, Index b0, Index len, double* out) {
				const double g = gate[j];
				const double* x = X.col(j).data() + b0;
				for (Index i = 0; i < len; ++i)
					out[i] = g * x[i];
			},
			[&](Index j) { return gate[j] == 0.0; }, Z);
}

inline void hidden_affine(const AffineLayer& layer, const Matrix& A, Matrix& Z) {
	affine_batch(layer, A.rows(),
			[&](Index j, Index b0, Index len, double* out) {
				const double* a = A.col(j).data() + b0;
				std::copy(a, a + len, out);
			},
			[](Index) { return false; }, Z);
}

/// ReLU that lets NaN through.
inline void relu(const Matrix& Z, Matrix& A) {
	A = Z.unaryExpr([](double v) { return v < 0.0 ? 0.0 : v; });
}

/// Forward pass over all rows of X. When `pre`/`post` are given they receive
/// the pre-activations of every map and the ReLU outputs of all but the last,
/// one row per sample.
inline Vector propagate(const NetworkParams& params, const Matrix& X, std::vector<Matrix>* pre = nullptr,
		std::vector<Matrix>* post = nullptr) {
	const std::size_t depth = params.layers.size() - 1;
	std::vector<Matrix> local_pre, local_post;
	auto& P = pre ? *pre : local_pre;
	auto& A = post ? *post : local_post;
	P.resize(depth + 1);
	A.resize(depth);
	input_affine(params.layers[0], params.gate, X, P[0]);
	for (std::size_t l = 1; l <= depth; ++l) {
		relu(P[l - 1], A[l - 1]);
		hidden_affine(params.layers[l], A[l - 1], P[l]);
		if (!pre && l >= 2) {
			P[l - 2].resize(0, 0);
			A[l - 2].resize(0, 0);
		}
	}
	return P[depth].col(0);
}

inline double mean_squared_error(const Vector& y, const Vector& prediction) {
	double sum = 0.0;
	for (Index i = 0; i < y.size(); ++i) {
		const double r = y[i] - prediction[i];
		sum += r * r;
	}
	return sum / static_cast<double>(y.size());
}

inline double sign(double v) {
	return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

inline void check_data(const NetworkConfig& config, const Matrix& X, const Vector& y) {
	if (static_cast<std::size_t>(X.cols()) != config.input_dim)
		throw ShapeError("data has " + std::to_string(X.cols()) + " columns, network expects " +
				std::to_string(config.input_dim));
	if (X.rows() != y.size())
		throw ShapeError("data has " + std::to_string(X.rows()) + " rows but " + std::to_string(y.size()) +
				" responses");
	if (X.rows() < 1)
		throw InputError("objective needs at least one observation");
}

}

/// Network output g(gate (*) x) for a single input vector.
inline double forward(const NetworkParams& params, const NetworkConfig& config, const Eigen::Ref<const Vector>& x) {
	check_shapes(params, config);
	if (static_cast<std::size_t>(x.size()) != config.input_dim)
		throw ShapeError("input has length " + std::to_string(x.size()) + ", network expects " +
				std::to_string(config.input_dim));
	const Matrix row = x.transpose();
	return detail::propagate(params, row)[0];
}

/// Row-wise network output; row i equals forward(params, config, X.row(i)) exactly.
inline Vector batch_forward(const NetworkParams& params, const NetworkConfig& config, const Matrix& X) {
	check_shapes(params, config);
	if (static_cast<std::size_t>(X.cols()) != config.input_dim)
		throw ShapeError("input has " + std::to_string(X.cols()) + " columns, network expects " +
				std::to_string(config.input_dim));
	if (X.rows() == 0)
		return Vector(0);
	return detail::propagate(params, X);
}

/// Sum over hidden maps of ||W_l - I||_1 + ||c_l||_1.
inline double depth_penalty(const NetworkParams& params) {
	double total = 0.0;
	for (const auto& layer : params.hidden_layers()) {
		total += (layer.weight - Matrix::Identity(layer.weight.rows(), layer.weight.cols())).cwiseAbs().sum();
		total += layer.bias.cwiseAbs().sum();
	}
	return total;
}

inline double penalty(const NetworkParams& params, double lambda1, double lambda2) {
	return lambda1 * params.gate.cwiseAbs().sum() + lambda2 * depth_penalty(params);
}

struct ObjectiveValue {
	/// Full penalized objective.
	double loss = 0.0;
	/// Mean squared error part of `loss`.
	double data_loss = 0.0;
	Gradients gradient;
};

/**
 * Value and subgradient of
 *
 *   n^-1 sum_i (y_i - g(gate (*) x_i))^2 + lambda1 ||gate||_1
 *       + lambda2 sum_{hidden l} (||W_l - I||_1 + ||c_l||_1).
 *
 * The data term is differentiated exactly by reverse mode, taking the ReLU
 * derivative at 0 to be 0. The absolute values contribute sign(.) with
 * sign(0) = 0.
 */
inline ObjectiveValue objective_gradient(const NetworkParams& params, const NetworkConfig& config, const Matrix& X,
		const Vector& y, double lambda1, double lambda2) {
	check_shapes(params, config);
	detail::check_data(config, X, y);
	if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
		throw ConfigError("penalty weights must be non-negative");

	const Index n = X.rows();
	const std::size_t depth = config.depth;
	std::vector<Matrix> pre, post;
	const Vector prediction = detail::propagate(params, X, &pre, &post);

	ObjectiveValue result;
	result.data_loss = detail::mean_squared_error(y, prediction);
	result.loss = result.data_loss + penalty(params, lambda1, lambda2);
	result.gradient = Gradients::zeros(config);
	auto& grad = result.gradient;

	// Backward pass. delta(i, k) = d(data loss) / d(pre-activation k of sample i) for map l.
	Matrix delta = (2.0 / static_cast<double>(n)) * (prediction - y);
	for (std::size_t l = depth; l >= 1; --l) {
		grad.layers[l].weight.noalias() = delta.transpose() * post[l - 1];
		grad.layers[l].bias = delta.colwise().sum().transpose();
		Matrix back = delta * params.layers[l].weight;
		delta = (pre[l - 1].array() > 0.0).select(back, 0.0);
	}
	const Matrix inner = delta.transpose() * X;  // outputs(0) x d
	grad.layers[0].weight = inner.array().rowwise() * params.gate.transpose().array();
	grad.layers[0].bias = delta.colwise().sum().transpose();
	grad.gate = params.layers[0].weight.cwiseProduct(inner).colwise().sum().transpose();

	if (lambda1 > 0.0)
		for (Index j = 0; j < grad.gate.size(); ++j)
			grad.gate[j] += lambda1 * detail::sign(params.gate[j]);
	if (lambda2 > 0.0)
		for (std::size_t l = 1; l < depth; ++l) {
			const auto& layer = params.layers[l];
			auto& g = grad.layers[l];
			for (Index c = 0; c < layer.weight.cols(); ++c)
				for (Index r = 0; r < layer.weight.rows(); ++r)
					g.weight(r, c) += lambda2 * detail::sign(layer.weight(r, c) - (r == c ? 1.0 : 0.0));
			for (Index r = 0; r < layer.bias.size(); ++r)
				g.bias[r] += lambda2 * detail::sign(layer.bias[r]);
		}
	return result;
}

}

#endif /* NNMR_NET_HPP_ */
