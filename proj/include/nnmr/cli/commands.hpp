#ifndef NNMR_CLI_COMMANDS_HPP_
#define NNMR_CLI_COMMANDS_HPP_

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nnmr/cli/csv.hpp"
#include "nnmr/cli/io.hpp"
#include "nnmr/error.hpp"
#include "nnmr/infer.hpp"
#include "nnmr/random.hpp"
#include "nnmr/simgen.hpp"
#include "nnmr/train.hpp"

namespace nnmr::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kInputError = 2, kDivergence = 3 };

struct SharedOptions {
	std::string input;
	std::string target;
	std::vector<std::string> features;
	std::string config;
	std::uint64_t seed = 0;
	std::string out;
	std::size_t threads = 1;
	char delimiter = ',';
};

/// Network and optimizer settings shared by every command that trains.
struct ModelOptions {
	std::size_t depth = 3;
	std::size_t width = 16;
	double lambda1 = 0.1;
	double lambda2 = 0.01;
	double tau1 = 0.05;
	double tau2 = 0.01;
	std::size_t max_iters = 5000;
	double lr = 3e-3;
	std::size_t trunc_period = 100;
	std::size_t batch_size = 256;

	NetworkConfig network(std::size_t input_dim) const {
		NetworkConfig c;
		c.input_dim = input_dim;
		c.depth = depth;
		c.width = width;
		return c;
	}
	TrainConfig training(std::uint64_t seed) const {
		TrainConfig c;
		c.lambda1 = lambda1;
		c.lambda2 = lambda2;
		c.tau1 = tau1;
		c.tau2 = tau2;
		c.max_iters = max_iters;
		c.learning_rate = lr;
		c.trunc_period = trunc_period;
		c.batch_size = batch_size;
		c.seed = seed;
		return c;
	}
};

/// Grid used by --tune and by the selection study.
struct GridOptions {
	std::vector<double> lambda1 = {0.075, 0.1};
	std::vector<double> lambda2 = {0.01};
	std::vector<double> tau1 = {0.03, 0.05};

	std::vector<GridPoint> grid() const { return make_grid(lambda1, lambda2, tau1); }
	json to_json() const { return {{"lambda1", lambda1}, {"lambda2", lambda2}, {"tau1", tau1}}; }
};

struct FitOptions {
	bool tune = false;
	std::string model_out;
	std::optional<double> split_ratio;
};

struct TestOptions {
	std::string model;
	std::vector<std::string> test_features;
	std::size_t permutations = 1000;
	double split_ratio = 0.5;
};

struct SimulateOptions {
	std::string study;
	std::size_t n = 1000;
	std::size_t d = 200;
	double noise_sd = 1.0;
	std::optional<std::size_t> replicates;
	std::size_t permutations = 1000;
	double level = 0.05;
	std::size_t null_feature = 1;
	double split_ratio = 0.5;
	std::string csv_out;
};

namespace detail {

/// Seed streams owned by the command layer.
inline std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, {20}); }
inline std::uint64_t permutation_master(std::uint64_t seed) { return derive_seed(seed, {21}); }

inline std::string with_suffix(const std::string& path, const std::string& suffix) {
	const std::string ext = ".json";
	if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
		return path.substr(0, path.size() - ext.size()) + suffix;
	return path + suffix;
}

inline void add_shared(CLI::App* cmd, SharedOptions& o, bool needs_input) {
	auto* input = cmd->add_option("--input", o.input, "CSV file with a header row");
	auto* target = cmd->add_option("--target", o.target, "Response column name");
	if (needs_input) {
		input->required();
		target->required();
	}
	cmd->add_option("--features", o.features, "Feature column names (default: every other numeric column)")
			->delimiter(',');
	cmd->add_option("--config", o.config, "File of key = value lines; flags given on the command line win");
	cmd->add_option("--seed", o.seed, "Master seed");
	cmd->add_option("--out", o.out, "Result document path")->required();
	cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
	cmd->add_option("--delimiter", o.delimiter, "CSV field delimiter");
}

inline void add_model(CLI::App* cmd, ModelOptions& o) {
	cmd->add_option("--depth", o.depth, "Hidden layers");
	cmd->add_option("--width", o.width, "Hidden width")->check(CLI::PositiveNumber);
	cmd->add_option("--lambda1", o.lambda1, "Gate L1 weight")->check(CLI::NonNegativeNumber);
	cmd->add_option("--lambda2", o.lambda2, "Depth penalty weight")->check(CLI::NonNegativeNumber);
	cmd->add_option("--tau1", o.tau1, "Gate truncation threshold")->check(CLI::NonNegativeNumber);
	cmd->add_option("--tau2", o.tau2, "Layer truncation threshold")->check(CLI::NonNegativeNumber);
	cmd->add_option("--max-iters", o.max_iters, "Optimizer iterations")->check(CLI::PositiveNumber);
	cmd->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
	cmd->add_option("--trunc-period", o.trunc_period, "Iterations between truncations")->check(CLI::PositiveNumber);
	cmd->add_option("--batch-size", o.batch_size, "Mini-batch size above 5000 rows")->check(CLI::PositiveNumber);
}

inline void add_grid(CLI::App* cmd, GridOptions& o) {
	cmd->add_option("--grid-lambda1", o.lambda1, "lambda1 values for tuning")->delimiter(',');
	cmd->add_option("--grid-lambda2", o.lambda2, "lambda2 values for tuning")->delimiter(',');
	cmd->add_option("--grid-tau1", o.tau1, "tau1 values for tuning")->delimiter(',');
}

/// Fills options the command line left unset from a key = value file.
inline void apply_config(CLI::App* cmd, const std::string& path) {
	std::ifstream in(path);
	if (!in)
		throw InputError("cannot open config file '" + path + "'");
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const auto hash = line.find('#');
		if (hash != std::string::npos)
			line.erase(hash);
		const std::string_view trimmed = nnmr::cli::detail::trim(line);
		if (trimmed.empty())
			continue;
		const auto eq = trimmed.find('=');
		if (eq == std::string_view::npos)
			throw InputError("config line " + std::to_string(line_no) + " is not of the form key = value");
		std::string key(nnmr::cli::detail::trim(trimmed.substr(0, eq)));
		std::string value(nnmr::cli::detail::trim(trimmed.substr(eq + 1)));
		if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
			value = value.substr(1, value.size() - 2);
		std::replace(key.begin(), key.end(), '_', '-');
		if (key == "config")
			throw InputError("config line " + std::to_string(line_no) + ": config files cannot nest");
		CLI::Option* opt = cmd->get_option_no_throw("--" + key);
		if (!opt)
			throw InputError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
		if (opt->count() > 0)
			continue;
		opt->add_result(value);
		opt->run_callback();
	}
}

inline void require_input(const SharedOptions& o) {
	if (o.input.empty() || o.target.empty())
		throw InputError("--input and --target are required");
}

inline json data_json(const Dataset& ds) {
	json out;
	out["rows_read"] = ds.rows_read;
	out["rows_dropped"] = ds.rows_dropped;
	out["rows_used"] = ds.y.size();
	out["target"] = ds.target_name;
	out["features"] = ds.feature_names;
	return out;
}

/// Per-column statistics needed to map standardized values back.
inline json standardization_json(const Standardizer& s, const std::vector<std::string>& names,
		const std::string& target) {
	json columns = json::array();
	for (std::size_t k = 0; k < names.size(); ++k)
		columns.push_back({{"name", names[k]}, {"mean", s.x_mean[static_cast<Index>(k)]},
				{"sd", s.x_scale[static_cast<Index>(k)]}, {"constant", bool(s.x_constant[k])}});
	return {{"features", columns}, {"target", {{"name", target}, {"mean", s.y_mean}, {"sd", s.y_scale}}}};
}

inline json manifest(const std::string& command, const json& config, std::uint64_t seed,
		const std::optional<std::string>& input) {
	json m;
	m["command"] = command;
	m["version"] = kVersion;
	m["seed"] = seed;
	m["config"] = config;
	if (input) {
		m["input"] = {{"path", *input}, {"sha256", file_sha256(*input)}};
	} else {
		m["input"] = nullptr;
	}
	return m;
}

inline json shared_config(const SharedOptions& o) {
	json c;
	c["input"] = o.input;
	c["target"] = o.target;
	c["features"] = o.features;
	c["delimiter"] = std::string(1, o.delimiter);
	c["out"] = o.out;
	return c;
}

inline json model_config(const ModelOptions& o) {
	return {{"depth", o.depth}, {"width", o.width}, {"lambda1", o.lambda1}, {"lambda2", o.lambda2},
			{"tau1", o.tau1}, {"tau2", o.tau2}, {"max_iters", o.max_iters}, {"lr", o.lr},
			{"trunc_period", o.trunc_period}, {"batch_size", o.batch_size}};
}

inline std::vector<std::size_t> resolve_names(const std::vector<std::string>& wanted,
		const std::vector<std::string>& names, const char* what) {
	std::vector<std::size_t> out;
	for (const auto& w : wanted) {
		const auto it = std::find(names.begin(), names.end(), w);
		if (it == names.end())
			throw InputError(std::string(what) + " '" + w + "' is not a feature of the dataset");
		out.push_back(static_cast<std::size_t>(it - names.begin()));
	}
	return out;
}

}

/// Model file contents, versioned. Parameters are those of the pruned network.
inline json model_json(const FittedModel& pruned, const std::vector<std::string>& names, const std::string& target,
		const std::optional<std::pair<double, std::uint64_t>>& split_info, const NetworkConfig& fitted_config,
		const json& manifest) {
	json m;
	m["format"] = "nnmr-model";
	m["format_version"] = kModelFormatVersion;
	m["target"] = target;
	m["all_features"] = names;
	m["inputs"] = names_json(pruned.features, names);
	m["selected"] = names_json(pruned.selected, names);
	m["fitted_network"] = network_config_json(fitted_config);
	m["network"] = network_config_json(pruned.config);
	m["standardizer"] = standardizer_json(pruned.standardizer);
	m["params"] = params_json(pruned.params);
	m["train_config"] = train_config_json(pruned.train_config);
	if (split_info)
		m["split"] = {{"ratio", split_info->first}, {"seed", split_info->second}};
	else
		m["split"] = nullptr;
	m["manifest"] = manifest;
	return m;
}

/// Everything cmd_test needs from a model file.
struct LoadedModel {
	FittedModel model;
	std::vector<std::string> all_features;
	std::vector<std::string> selected;
	std::string target;
	std::optional<std::pair<double, std::uint64_t>> split;
	std::string input_sha256;
};

inline LoadedModel load_model(const std::string& path) {
	const json j = read_json(path);
	try {
		if (j.at("format").get<std::string>() != "nnmr-model")
			throw InputError("'" + path + "' is not a model file");
		const int version = j.at("format_version").get<int>();
		if (version != kModelFormatVersion)
			throw InputError("unsupported model format version " + std::to_string(version));
		LoadedModel out;
		out.all_features = j.at("all_features").get<std::vector<std::string>>();
		out.selected = j.at("selected").get<std::vector<std::string>>();
		out.target = j.at("target").get<std::string>();
		auto& m = out.model;
		m.config = network_config_from(j.at("network"));
		m.params = params_from(j.at("params"), m.config);
		m.standardizer = standardizer_from(j.at("standardizer"));
		m.train_config = train_config_from(j.at("train_config"));
		m.features = detail::resolve_names(j.at("inputs").get<std::vector<std::string>>(), out.all_features, "input");
		m.selected = detail::resolve_names(out.selected, out.all_features, "selected feature");
		m.pruned_depth = m.config.depth;
		if (!j.at("split").is_null())
			out.split = std::make_pair(j.at("split").at("ratio").get<double>(),
					j.at("split").at("seed").get<std::uint64_t>());
		const json& input = j.at("manifest").at("input");
		if (!input.is_null())
			out.input_sha256 = input.at("sha256").get<std::string>();
		return out;
	} catch (const json::exception& e) {
		throw InputError("malformed model file '" + path + "': " + e.what());
	}
}

inline int cmd_fit(const SharedOptions& so, const ModelOptions& mo, const GridOptions& go, const FitOptions& fo,
		std::ostream& log) {
	detail::require_input(so);
	const Dataset ds = extract(read_table(so.input, so.delimiter), so.target, so.features);
	const NetworkConfig net = mo.network(static_cast<std::size_t>(ds.X.cols()));
	TrainConfig train = mo.training(so.seed);

	Matrix X = ds.X;
	Vector y = ds.y;
	std::optional<std::pair<double, std::uint64_t>> split_info;
	if (fo.split_ratio) {
		const SplitData halves = split(ds.X, ds.y, *fo.split_ratio, detail::split_seed(so.seed));
		X = halves.d1_X;
		y = halves.d1_y;
		split_info = std::make_pair(*fo.split_ratio, halves.split_seed);
	}

	json tuning = nullptr;
	if (fo.tune) {
		const auto grid = go.grid();
		const TuneResult tuned = tune_with_report(X, y, net, grid, train, so.threads);
		train = tuned.best;
		json points = json::array();
		for (std::size_t k = 0; k < grid.size(); ++k) {
			json p = grid_point_json(grid[k]);
			p["validation_mse"] = std::isfinite(tuned.validation_mse[k]) ? json(tuned.validation_mse[k]) : json(nullptr);
			points.push_back(std::move(p));
		}
		tuning = {{"grid", std::move(points)}, {"best", grid_point_json(grid[tuned.best_index])}};
	}

	const FittedModel model = fit(X, y, net, train);
	const FittedModel pruned = prune(model);

	json config = detail::shared_config(so);
	config["model_out"] = fo.model_out.empty() ? detail::with_suffix(so.out, ".model.json") : fo.model_out;
	config["model"] = detail::model_config(mo);
	config["tune"] = fo.tune;
	if (fo.tune)
		config["grid"] = go.to_json();
	config["split_ratio"] = fo.split_ratio ? json(*fo.split_ratio) : json(nullptr);
	const json man = detail::manifest("fit", config, so.seed, so.input);

	json gates = json::array();
	for (Index k = 0; k < pruned.params.gate.size(); ++k)
		if (pruned.params.gate[k] != 0.0)
			gates.push_back({{"feature", ds.feature_names[pruned.features[static_cast<std::size_t>(k)]]},
					{"gate", pruned.params.gate[k]}});
	json history = json::array();
	for (const auto& [it, value] : model.history)
		if (it % train.trunc_period == 0 || it == 1)
			history.push_back({{"iteration", it}, {"objective", value}});

	json report;
	report["manifest"] = man;
	report["data"] = detail::data_json(ds);
	if (split_info)
		report["data"]["rows_fitted"] = y.size();
	report["standardization"] = detail::standardization_json(model.standardizer, ds.feature_names, ds.target_name);
	report["tuning"] = tuning;
	report["train_config"] = train_config_json(train);
	report["selected"] = names_json(pruned.selected, ds.feature_names);
	report["gates"] = std::move(gates);
	report["depth"] = net.depth;
	report["pruned_depth"] = pruned.pruned_depth;
	report["final_objective"] = model.final_objective;
	report["history"] = std::move(history);
	report["warnings"] = model.warnings;

	const std::string model_path = config["model_out"].get<std::string>();
	write_atomic(model_path, dump(model_json(pruned, ds.feature_names, ds.target_name, split_info, net, man)));
	write_atomic(so.out, dump(report));
	log << "selected " << pruned.selected.size() << " of " << ds.feature_names.size() << " features; report "
		<< so.out << ", model " << model_path << "\n";
	return kOk;
}

inline int cmd_test(const SharedOptions& so, const ModelOptions& mo, const TestOptions& to, bool split_ratio_given,
		std::ostream& log) {
	detail::require_input(so);
	std::optional<LoadedModel> loaded;
	if (!to.model.empty())
		loaded = load_model(to.model);
	std::vector<std::string> columns = so.features;
	if (columns.empty() && loaded)
		columns = loaded->all_features;
	const Dataset ds = extract(read_table(so.input, so.delimiter), so.target, columns);
	const std::vector<std::size_t> tested = detail::resolve_names(to.test_features, ds.feature_names, "feature");

	std::vector<std::string> warnings;
	double ratio = to.split_ratio;
	std::uint64_t sseed = detail::split_seed(so.seed);
	if (loaded) {
		if (loaded->split) {
			if (split_ratio_given && loaded->split->first != to.split_ratio)
				throw ConfigError("--split-ratio differs from the split the model was fit on");
			ratio = loaded->split->first;
			sseed = loaded->split->second;
		} else {
			warnings.push_back("the model was fit on every row, including the inference half");
		}
		if (!loaded->input_sha256.empty() && loaded->input_sha256 != file_sha256(so.input))
			warnings.push_back("the model was fit on a different input file");
	}
	const SplitData halves = split(ds.X, ds.y, ratio, sseed);
	const NetworkConfig net = mo.network(static_cast<std::size_t>(ds.X.cols()));
	const TrainConfig train = mo.training(so.seed);

	std::vector<std::size_t> selected;
	std::string source;
	if (loaded) {
		selected = detail::resolve_names(loaded->selected, ds.feature_names, "selected feature");
		source = "model";
	} else {
		selected = fit(halves.d1_X, halves.d1_y, net, train).selected;
		source = "d1_fit";
	}
	std::vector<std::size_t> targets = tested.empty() ? selected : tested;
	if (targets.empty())
		warnings.push_back("no features selected and none requested; nothing to test");

	const std::uint64_t pmaster = detail::permutation_master(so.seed);
	json results = json::array();
	for (std::size_t j : targets) {
		const InferenceResult r = test_feature(halves, selected, j, net, train, to.permutations,
				feature_seed(pmaster, j), so.threads);
		results.push_back(inference_json(r, ds.feature_names));
	}

	json config = detail::shared_config(so);
	config["model"] = to.model.empty() ? json(nullptr) : json(to.model);
	config["feature"] = to.test_features;
	config["B"] = to.permutations;
	config["split_ratio"] = ratio;
	config["network"] = detail::model_config(mo);
	json report;
	report["manifest"] = detail::manifest("test", config, so.seed, so.input);
	report["data"] = detail::data_json(ds);
	report["split"] = {{"ratio", ratio}, {"seed", sseed}, {"d1_rows", halves.d1_y.size()},
			{"d2_rows", halves.d2_y.size()}};
	report["selection_source"] = source;
	report["selected"] = names_json(selected, ds.feature_names);
	report["results"] = std::move(results);
	report["warnings"] = warnings;
	write_atomic(so.out, dump(report));
	log << "tested " << targets.size() << " feature(s); report " << so.out << "\n";
	return kOk;
}

inline std::string join(const std::vector<std::size_t>& v) {
	std::string s;
	for (std::size_t k = 0; k < v.size(); ++k)
		s += (k ? " " : "") + std::to_string(v[k]);
	return s;
}

inline std::string csv_number(double v) {
	std::ostringstream s;
	s.precision(17);
	s << v;
	return s.str();
}

inline std::string selection_csv(const SimulationReport& r) {
	std::ostringstream s;
	s << "replicate,seed,failed,selected,precision,recall,f1,baseline_precision,baseline_recall,baseline_f1,"
		 "lambda1,lambda2,tau1,pruned_depth\n";
	for (const auto& rec : r.selection)
		s << rec.replicate << ',' << rec.seed << ',' << (rec.failed ? 1 : 0) << ',' << join(rec.selected) << ','
		  << csv_number(rec.score.precision) << ',' << csv_number(rec.score.recall) << ','
		  << csv_number(rec.score.f1) << ',' << csv_number(rec.baseline.precision) << ','
		  << csv_number(rec.baseline.recall) << ',' << csv_number(rec.baseline.f1) << ','
		  << csv_number(rec.tuned.lambda1) << ',' << csv_number(rec.tuned.lambda2) << ','
		  << csv_number(rec.tuned.tau1) << ',' << rec.pruned_depth << '\n';
	return s.str();
}

inline std::string type1_csv(const SimulationReport& r) {
	std::ostringstream s;
	s << "replicate,seed,failed,selected,post_statistic,post_p_perm,post_p_gauss,no_statistic,no_p_perm,"
		 "no_p_gauss\n";
	for (const auto& rec : r.type1)
		s << rec.replicate << ',' << rec.seed << ',' << (rec.failed ? 1 : 0) << ',' << join(rec.selected) << ','
		  << csv_number(rec.post_selection.statistic) << ',' << csv_number(rec.post_selection.p_perm) << ','
		  << csv_number(rec.post_selection.p_gauss) << ',' << csv_number(rec.no_selection.statistic) << ','
		  << csv_number(rec.no_selection.p_perm) << ',' << csv_number(rec.no_selection.p_gauss) << '\n';
	return s.str();
}

inline json simulation_json(const SimulationReport& r) {
	json out;
	out["study"] = r.study;
	out["failures"] = r.failures;
	json records = json::array();
	std::vector<std::string> no_names;
	if (r.study == "selection") {
		for (const auto& rec : r.selection)
			records.push_back({{"replicate", rec.replicate}, {"seed", rec.seed}, {"failed", rec.failed},
					{"error", rec.error}, {"selected", rec.selected}, {"score", score_json(rec.score)},
					{"baseline_selected", rec.baseline_selected}, {"baseline", score_json(rec.baseline)},
					{"tuned", grid_point_json(rec.tuned)}, {"pruned_depth", rec.pruned_depth}});
		out["records"] = std::move(records);
		out["aggregate"] = {{"precision", summary_json(r.precision)}, {"recall", summary_json(r.recall)},
				{"f1", summary_json(r.f1)}};
		out["baseline_aggregate"] = {{"precision", summary_json(r.baseline_precision)},
				{"recall", summary_json(r.baseline_recall)}, {"f1", summary_json(r.baseline_f1)}};
	} else {
		for (const auto& rec : r.type1) {
			json j = {{"replicate", rec.replicate}, {"seed", rec.seed}, {"failed", rec.failed},
					{"error", rec.error}, {"selected", rec.selected}};
			if (!rec.failed) {
				j["post_selection"] = inference_json(rec.post_selection, no_names, false);
				j["no_selection"] = inference_json(rec.no_selection, no_names, false);
			}
			records.push_back(std::move(j));
		}
		out["records"] = std::move(records);
		out["level"] = r.level;
		out["post_selection_rate"] = r.post_selection_rate;
		out["no_selection_rate"] = r.no_selection_rate;
	}
	return out;
}

inline int cmd_simulate(const SharedOptions& so, const ModelOptions& mo, const GridOptions& go,
		const SimulateOptions& sim, std::ostream& log) {
	BenchmarkSpec spec;
	spec.n = sim.n;
	spec.d = sim.d;
	spec.noise_sd = sim.noise_sd;
	spec.seed = so.seed;
	const NetworkConfig net = mo.network(sim.d);
	const TrainConfig train = mo.training(so.seed);

	json config;
	config["study"] = sim.study;
	config["n"] = sim.n;
	config["d"] = sim.d;
	config["noise_sd"] = sim.noise_sd;
	config["out"] = so.out;
	config["csv_out"] = sim.csv_out.empty() ? detail::with_suffix(so.out, ".csv") : sim.csv_out;
	config["model"] = detail::model_config(mo);

	SimulationReport report;
	std::string csv;
	if (sim.study == "selection") {
		const std::size_t R = sim.replicates.value_or(20);
		config["replicates"] = R;
		config["grid"] = go.to_json();
		report = run_selection_study(spec, net, go.grid(), train, R, so.threads);
		csv = selection_csv(report);
	} else if (sim.study == "type1") {
		const std::size_t R = sim.replicates.value_or(100);
		config["replicates"] = R;
		config["B"] = sim.permutations;
		config["level"] = sim.level;
		config["feature"] = sim.null_feature;
		config["split_ratio"] = sim.split_ratio;
		report = run_type1_study(spec, sim.null_feature, net, train, sim.permutations, R, sim.level, so.threads,
				sim.split_ratio);
		csv = type1_csv(report);
	} else {
		throw ConfigError("unknown study '" + sim.study + "'; expected selection or type1");
	}
	json doc;
	doc["manifest"] = detail::manifest("simulate", config, so.seed, std::nullopt);
	doc["report"] = simulation_json(report);
	write_atomic(config["csv_out"].get<std::string>(), csv);
	write_atomic(so.out, dump(doc));
	if (report.study == "selection")
		log << "mean F1 " << report.f1.mean << " (sd " << report.f1.sd << "), mean precision "
			<< report.precision.mean << ", failures " << report.failures << "\n";
	else
		log << "rejection rate post-selection " << report.post_selection_rate << ", no-selection "
			<< report.no_selection_rate << ", failures " << report.failures << "\n";
	return kOk;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
	CLI::App app{"Sparse variable selection and post-selection inference with gated ReLU networks", "nnmr"};
	app.require_subcommand(1);
	app.set_version_flag("--version", kVersion);

	SharedOptions fit_shared, test_shared, sim_shared;
	ModelOptions fit_model, test_model, sim_model;
	GridOptions fit_grid, sim_grid;
	FitOptions fit_opts;
	TestOptions test_opts;
	SimulateOptions sim_opts;

	CLI::App* fit_cmd = app.add_subcommand("fit", "Select features and write a model");
	detail::add_shared(fit_cmd, fit_shared, true);
	detail::add_model(fit_cmd, fit_model);
	detail::add_grid(fit_cmd, fit_grid);
	fit_cmd->add_flag("--tune", fit_opts.tune, "Pick lambda1, lambda2, tau1 on a validation split");
	fit_cmd->add_option("--model-out", fit_opts.model_out, "Model file path (default: next to --out)");
	fit_cmd->add_option("--split-ratio", fit_opts.split_ratio, "Fit on the selection half of this split only")
			->check(CLI::Range(0.0, 1.0));

	CLI::App* test_cmd = app.add_subcommand("test", "Permutation test of conditional importance");
	detail::add_shared(test_cmd, test_shared, true);
	detail::add_model(test_cmd, test_model);
	test_cmd->add_option("--model", test_opts.model, "Model file from fit (default: select on the first half)");
	test_cmd->add_option("--feature", test_opts.test_features, "Feature to test; repeatable (default: selected)");
	auto* split_opt = test_cmd->add_option("--split-ratio", test_opts.split_ratio, "Share of rows used for fitting")
			->check(CLI::Range(0.0, 1.0));
	test_cmd->add_option("-B,--B", test_opts.permutations, "Permutations");

	CLI::App* sim_cmd = app.add_subcommand("simulate", "Run a simulation study on the synthetic benchmark");
	detail::add_shared(sim_cmd, sim_shared, false);
	detail::add_model(sim_cmd, sim_model);
	detail::add_grid(sim_cmd, sim_grid);
	sim_cmd->add_option("--study", sim_opts.study, "selection or type1")->required();
	sim_cmd->add_option("--n", sim_opts.n, "Rows per replicate")->check(CLI::PositiveNumber);
	sim_cmd->add_option("--d", sim_opts.d, "Features per replicate")->check(CLI::PositiveNumber);
	sim_cmd->add_option("--noise-sd", sim_opts.noise_sd, "Noise standard deviation")->check(CLI::NonNegativeNumber);
	sim_cmd->add_option("--replicates", sim_opts.replicates, "Replicates (default 20, or 100 for type1)");
	sim_cmd->add_option("-B,--B", sim_opts.permutations, "Permutations per test");
	sim_cmd->add_option("--level", sim_opts.level, "Test level");
	sim_cmd->add_option("--feature", sim_opts.null_feature, "Null feature for the type I study");
	sim_cmd->add_option("--split-ratio", sim_opts.split_ratio, "Share of rows used for selection and fitting")
			->check(CLI::Range(0.0, 1.0));
	sim_cmd->add_option("--csv-out", sim_opts.csv_out, "Per-replicate CSV (default: next to --out)");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int code = app.exit(e, out, err);
		return code == 0 ? kOk : kInputError;
	}

	try {
		if (fit_cmd->parsed()) {
			if (!fit_shared.config.empty())
				detail::apply_config(fit_cmd, fit_shared.config);
			return cmd_fit(fit_shared, fit_model, fit_grid, fit_opts, out);
		}
		if (test_cmd->parsed()) {
			if (!test_shared.config.empty())
				detail::apply_config(test_cmd, test_shared.config);
			return cmd_test(test_shared, test_model, test_opts, split_opt->count() > 0, out);
		}
		if (!sim_shared.config.empty())
			detail::apply_config(sim_cmd, sim_shared.config);
		return cmd_simulate(sim_shared, sim_model, sim_grid, sim_opts, out);
	} catch (const DivergenceError& e) {
		err << "error: " << e.what() << "\n";
		return kDivergence;
	} catch (const Error& e) {
		err << "error: " << e.what() << "\n";
		return kInputError;
	} catch (const CLI::Error& e) {
		err << "error: " << e.what() << "\n";
		return kInputError;
	} catch (const std::exception& e) {
		err << "error: " << e.what() << "\n";
		return kFailure;
	}
}

}

#endif /* NNMR_CLI_COMMANDS_HPP_ */
