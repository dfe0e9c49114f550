#ifndef NNMR_CLI_CSV_HPP_
#define NNMR_CLI_CSV_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nnmr/error.hpp"
#include "nnmr/net.hpp"

namespace nnmr::cli {

/// Raw cells of a delimited text file with a header row.
struct Table {
	std::vector<std::string> header;
	std::vector<std::vector<std::string>> rows;
	/// 1-based line number of each row in the source file.
	std::vector<std::size_t> lines;
};

/// Numeric design extracted from a table after missing-value deletion.
struct Dataset {
	Matrix X;
	Vector y;
	std::vector<std::string> feature_names;
	std::string target_name;
	std::size_t rows_read = 0;
	std::size_t rows_dropped = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
	while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
		s.remove_prefix(1);
	while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
		s.remove_suffix(1);
	return s;
}

/// Splits one record; double quotes group a field and "" is a literal quote.
inline std::vector<std::string> split_record(std::string_view line, char delimiter) {
	std::vector<std::string> fields;
	std::string field;
	bool quoted = false;
	for (std::size_t i = 0; i < line.size(); ++i) {
		const char c = line[i];
		if (quoted) {
			if (c == '"') {
				if (i + 1 < line.size() && line[i + 1] == '"') {
					field += '"';
					++i;
				} else {
					quoted = false;
				}
			} else {
				field += c;
			}
		} else if (c == '"') {
			quoted = true;
		} else if (c == delimiter) {
			fields.emplace_back(trim(field));
			field.clear();
		} else {
			field += c;
		}
	}
	fields.emplace_back(trim(field));
	return fields;
}

inline bool is_missing(std::string_view cell) {
	static constexpr std::string_view tokens[] = {"", "NA", "na", "N/A", "NaN", "nan", "null", "NULL"};
	return std::find(std::begin(tokens), std::end(tokens), cell) != std::end(tokens);
}

inline std::optional<double> parse_number(std::string_view cell) {
	if (!cell.empty() && cell.front() == '+')
		cell.remove_prefix(1);
	double value = 0.0;
	const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
	if (ec != std::errc() || end != cell.data() + cell.size() || !std::isfinite(value))
		return std::nullopt;
	return value;
}

}

inline Table parse_table(std::istream& in, char delimiter = ',') {
	Table table;
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		if (line_no == 1 && line.starts_with("\xEF\xBB\xBF"))
			line.erase(0, 3);
		if (detail::trim(line).empty())
			continue;
		auto fields = detail::split_record(line, delimiter);
		if (table.header.empty()) {
			table.header = std::move(fields);
			continue;
		}
		if (fields.size() != table.header.size())
			throw InputError("row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
					" fields, header has " + std::to_string(table.header.size()));
		table.rows.push_back(std::move(fields));
		table.lines.push_back(line_no);
	}
	if (table.header.empty())
		throw InputError("input has no header row");
	for (std::size_t c = 0; c < table.header.size(); ++c)
		for (std::size_t k = c + 1; k < table.header.size(); ++k)
			if (table.header[c] == table.header[k])
				throw InputError("duplicate column name '" + table.header[c] + "'");
	return table;
}

inline Table read_table(const std::string& path, char delimiter = ',') {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw InputError("cannot open input file '" + path + "'");
	return parse_table(in, delimiter);
}

inline std::size_t column_index(const Table& table, const std::string& name) {
	const auto it = std::find(table.header.begin(), table.header.end(), name);
	if (it == table.header.end())
		throw InputError("column '" + name + "' is not in the header");
	return static_cast<std::size_t>(it - table.header.begin());
}

/// A column is text when none of its non-missing cells is a number.
inline bool is_text_column(const Table& table, std::size_t c) {
	bool any = false;
	for (const auto& row : table.rows) {
		if (detail::is_missing(row[c]))
			continue;
		any = true;
		if (detail::parse_number(row[c]))
			return false;
	}
	return any;
}

/**
 * Builds (X, y) from the named columns. With no feature names every other
 * column that is not pure text is used. Rows with a missing cell in any used
 * column are dropped; any other non-numeric cell is an input error.
 */
inline Dataset extract(const Table& table, const std::string& target, const std::vector<std::string>& features = {}) {
	const std::size_t target_col = column_index(table, target);
	std::vector<std::size_t> cols;
	if (features.empty()) {
		for (std::size_t c = 0; c < table.header.size(); ++c)
			if (c != target_col && !is_text_column(table, c))
				cols.push_back(c);
	} else {
		for (const auto& name : features) {
			const std::size_t c = column_index(table, name);
			if (c == target_col)
				throw InputError("column '" + name + "' is both the target and a feature");
			if (std::find(cols.begin(), cols.end(), c) != cols.end())
				throw InputError("feature '" + name + "' is listed twice");
			cols.push_back(c);
		}
	}
	if (cols.empty())
		throw InputError("no feature columns");

	std::vector<std::size_t> used = cols;
	used.push_back(target_col);
	std::vector<std::vector<double>> values;
	Dataset out;
	out.rows_read = table.rows.size();
	for (std::size_t r = 0; r < table.rows.size(); ++r) {
		const auto& row = table.rows[r];
		std::vector<double> parsed;
		parsed.reserve(used.size());
		bool missing = false;
		for (std::size_t c : used) {
			if (detail::is_missing(row[c])) {
				missing = true;
				continue;
			}
			const auto v = detail::parse_number(row[c]);
			if (!v)
				throw InputError("non-numeric value '" + row[c] + "' at row " + std::to_string(table.lines[r]) +
						", column '" + table.header[c] + "'");
			parsed.push_back(*v);
		}
		if (missing) {
			++out.rows_dropped;
			continue;
		}
		values.push_back(std::move(parsed));
	}
	out.X.resize(static_cast<Index>(values.size()), static_cast<Index>(cols.size()));
	out.y.resize(static_cast<Index>(values.size()));
	for (std::size_t i = 0; i < values.size(); ++i) {
		for (std::size_t k = 0; k < cols.size(); ++k)
			out.X(static_cast<Index>(i), static_cast<Index>(k)) = values[i][k];
		out.y[static_cast<Index>(i)] = values[i].back();
	}
	for (std::size_t c : cols)
		out.feature_names.push_back(table.header[c]);
	out.target_name = target;
	return out;
}

}

#endif /* NNMR_CLI_CSV_HPP_ */
