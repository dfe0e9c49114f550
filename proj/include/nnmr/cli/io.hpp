#ifndef NNMR_CLI_IO_HPP_
#define NNMR_CLI_IO_HPP_

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nnmr/error.hpp"
#include "nnmr/infer.hpp"
#include "nnmr/net.hpp"
#include "nnmr/simgen.hpp"
#include "nnmr/train.hpp"

namespace nnmr::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kModelFormatVersion = 1;

/// Lowercase hex SHA-256 of a file's bytes.
inline std::string file_sha256(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw InputError("cannot open '" + path + "' for hashing");
	EVP_MD_CTX* ctx = EVP_MD_CTX_new();
	if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
		EVP_MD_CTX_free(ctx);
		throw Error("cannot initialize SHA-256");
	}
	std::array<char, 1 << 16> buffer{};
	while (in) {
		in.read(buffer.data(), buffer.size());
		if (in.gcount() > 0)
			EVP_DigestUpdate(ctx, buffer.data(), static_cast<std::size_t>(in.gcount()));
	}
	std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
	unsigned int length = 0;
	EVP_DigestFinal_ex(ctx, digest.data(), &length);
	EVP_MD_CTX_free(ctx);
	std::ostringstream hex;
	for (unsigned int i = 0; i < length; ++i)
		hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
	return hex.str();
}

/// Writes next to the destination and renames over it, so readers never see a partial file.
inline void write_atomic(const std::string& path, const std::string& content) {
	namespace fs = std::filesystem;
	const fs::path target(path);
	if (target.has_parent_path() && !fs::exists(target.parent_path()))
		throw InputError("output directory '" + target.parent_path().string() + "' does not exist");
	fs::path tmp = target;
	tmp += ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out)
			throw InputError("cannot write '" + tmp.string() + "'");
		out << content;
		out.flush();
		if (!out)
			throw InputError("failed writing '" + tmp.string() + "'");
	}
	std::error_code ec;
	fs::rename(tmp, target, ec);
	if (ec) {
		fs::remove(tmp);
		throw InputError("cannot move output into place at '" + path + "': " + ec.message());
	}
}

inline std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

inline json read_json(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw InputError("cannot open '" + path + "'");
	try {
		return json::parse(in);
	} catch (const json::exception& e) {
		throw InputError("'" + path + "' is not valid JSON: " + e.what());
	}
}

inline json vector_json(const Vector& v) {
	json out = json::array();
	for (Index i = 0; i < v.size(); ++i)
		out.push_back(v[i]);
	return out;
}

/// Row-major nested arrays.
inline json matrix_json(const Matrix& m) {
	json out = json::array();
	for (Index r = 0; r < m.rows(); ++r) {
		json row = json::array();
		for (Index c = 0; c < m.cols(); ++c)
			row.push_back(m(r, c));
		out.push_back(std::move(row));
	}
	return out;
}

inline Vector vector_from(const json& j) {
	Vector v(static_cast<Index>(j.size()));
	for (std::size_t i = 0; i < j.size(); ++i)
		v[static_cast<Index>(i)] = j.at(i).get<double>();
	return v;
}

inline Matrix matrix_from(const json& j, Index rows, Index cols) {
	if (j.size() != static_cast<std::size_t>(rows))
		throw InputError("matrix has " + std::to_string(j.size()) + " rows, expected " + std::to_string(rows));
	Matrix m(rows, cols);
	for (Index r = 0; r < rows; ++r) {
		const json& row = j.at(static_cast<std::size_t>(r));
		if (row.size() != static_cast<std::size_t>(cols))
			throw InputError("matrix row has " + std::to_string(row.size()) + " entries, expected " +
					std::to_string(cols));
		for (Index c = 0; c < cols; ++c)
			m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
	}
	return m;
}

inline json network_config_json(const NetworkConfig& c) {
	json out;
	out["input_dim"] = c.input_dim;
	out["depth"] = c.depth;
	out["width"] = c.width;
	out["output_bound"] = c.output_bound ? json(*c.output_bound) : json(nullptr);
	return out;
}

inline NetworkConfig network_config_from(const json& j) {
	NetworkConfig c;
	c.input_dim = j.at("input_dim").get<std::size_t>();
	c.depth = j.at("depth").get<std::size_t>();
	c.width = j.at("width").get<std::size_t>();
	if (j.contains("output_bound") && !j.at("output_bound").is_null())
		c.output_bound = j.at("output_bound").get<double>();
	return c;
}

inline json train_config_json(const TrainConfig& c) {
	json out;
	out["lambda1"] = c.lambda1;
	out["lambda2"] = c.lambda2;
	out["tau1"] = c.tau1;
	out["tau2"] = c.tau2;
	out["trunc_period"] = c.trunc_period;
	out["max_iters"] = c.max_iters;
	out["learning_rate"] = c.learning_rate;
	out["batch_size"] = c.batch_size ? json(*c.batch_size) : json(nullptr);
	out["full_batch_limit"] = c.full_batch_limit;
	out["beta1"] = c.beta1;
	out["beta2"] = c.beta2;
	out["epsilon"] = c.epsilon;
	out["seed"] = c.seed;
	out["val_fraction"] = c.val_fraction;
	out["normalize_input_columns"] = c.normalize_input_columns;
	return out;
}

inline TrainConfig train_config_from(const json& j) {
	TrainConfig c;
	c.lambda1 = j.at("lambda1").get<double>();
	c.lambda2 = j.at("lambda2").get<double>();
	c.tau1 = j.at("tau1").get<double>();
	c.tau2 = j.at("tau2").get<double>();
	c.trunc_period = j.at("trunc_period").get<std::size_t>();
	c.max_iters = j.at("max_iters").get<std::size_t>();
	c.learning_rate = j.at("learning_rate").get<double>();
	if (j.at("batch_size").is_null())
		c.batch_size.reset();
	else
		c.batch_size = j.at("batch_size").get<std::size_t>();
	c.full_batch_limit = j.at("full_batch_limit").get<std::size_t>();
	c.beta1 = j.at("beta1").get<double>();
	c.beta2 = j.at("beta2").get<double>();
	c.epsilon = j.at("epsilon").get<double>();
	c.seed = j.at("seed").get<std::uint64_t>();
	c.val_fraction = j.at("val_fraction").get<double>();
	c.normalize_input_columns = j.at("normalize_input_columns").get<bool>();
	return c;
}

inline json params_json(const NetworkParams& p) {
	json out;
	out["gate"] = vector_json(p.gate);
	json layers = json::array();
	for (const auto& layer : p.layers)
		layers.push_back({{"weight", matrix_json(layer.weight)}, {"bias", vector_json(layer.bias)}});
	out["layers"] = std::move(layers);
	return out;
}

inline NetworkParams params_from(const json& j, const NetworkConfig& config) {
	NetworkParams p = NetworkParams::zeros(config);
	p.gate = vector_from(j.at("gate"));
	const json& layers = j.at("layers");
	if (layers.size() != p.layers.size())
		throw InputError("model has " + std::to_string(layers.size()) + " layers, configuration implies " +
				std::to_string(p.layers.size()));
	for (std::size_t l = 0; l < p.layers.size(); ++l) {
		const auto rows = static_cast<Index>(config.layer_outputs(l));
		const auto cols = static_cast<Index>(config.layer_inputs(l));
		p.layers[l].weight = matrix_from(layers[l].at("weight"), rows, cols);
		p.layers[l].bias = vector_from(layers[l].at("bias"));
	}
	check_shapes(p, config);
	return p;
}

inline json standardizer_json(const Standardizer& s) {
	json out;
	out["x_mean"] = vector_json(s.x_mean);
	out["x_scale"] = vector_json(s.x_scale);
	out["x_constant"] = s.x_constant;
	out["y_mean"] = s.y_mean;
	out["y_scale"] = s.y_scale;
	return out;
}

inline Standardizer standardizer_from(const json& j) {
	Standardizer s;
	s.x_mean = vector_from(j.at("x_mean"));
	s.x_scale = vector_from(j.at("x_scale"));
	s.x_constant = j.at("x_constant").get<std::vector<bool>>();
	s.y_mean = j.at("y_mean").get<double>();
	s.y_scale = j.at("y_scale").get<double>();
	if (s.x_scale.size() != s.x_mean.size() || s.x_constant.size() != static_cast<std::size_t>(s.x_mean.size()))
		throw InputError("standardization statistics have inconsistent lengths");
	return s;
}

inline json grid_point_json(const GridPoint& g) {
	return {{"lambda1", g.lambda1}, {"lambda2", g.lambda2}, {"tau1", g.tau1}};
}

inline json score_json(const SelectionScore& s) {
	return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

inline json names_json(const std::vector<std::size_t>& indices, const std::vector<std::string>& names) {
	json out = json::array();
	for (std::size_t i : indices)
		out.push_back(i < names.size() ? names[i] : std::to_string(i));
	return out;
}

inline json inference_json(const InferenceResult& r, const std::vector<std::string>& names,
		bool with_permutations = true) {
	json out;
	out["feature"] = r.feature < names.size() ? names[r.feature] : std::to_string(r.feature);
	out["feature_index"] = r.feature;
	out["statistic"] = r.statistic;
	out["p_perm"] = r.p_perm;
	out["p_gauss"] = r.p_gauss;
	out["sigma_hat"] = r.sigma_hat;
	out["B"] = r.B;
	out["degenerate"] = r.degenerate;
	out["full_features"] = names_json(r.full_features, names);
	out["null_features"] = names_json(r.null_features, names);
	out["perm_seed"] = r.perm_seed;
	if (with_permutations)
		out["perm_stats"] = r.perm_stats;
	return out;
}

}

#endif /* NNMR_CLI_IO_HPP_ */
