#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fasucm::text {

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
	std::vector<std::size_t> row(b.size() + 1);
	for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
	for (std::size_t i = 1; i <= a.size(); ++i) {
		std::size_t diag = row[0];
		row[0] = i;
		for (std::size_t j = 1; j <= b.size(); ++j) {
			const std::size_t up = row[j];
			row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
			diag = up;
		}
	}
	return row[b.size()];
}

inline std::string_view trim(std::string_view s) {
	const auto first = s.find_first_not_of(" \t\r\n");
	if (first == std::string_view::npos) return {};
	const auto last = s.find_last_not_of(" \t\r\n");
	return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
	std::vector<std::string> out;
	std::size_t start = 0;
	while (true) {
		const auto pos = s.find(sep, start);
		out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start));
		if (pos == std::string_view::npos) break;
		start = pos + 1;
	}
	return out;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
	Int v{};
	const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
	if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
	return v;
}

inline std::optional<double> parse_double(std::string_view s) {
	double v{};
	const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
	if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
	return v;
}

/// Fixed six-decimal rendering used by every bit-stable output file.
inline std::string fixed6(double v) {
	char buf[64];
	std::snprintf(buf, sizeof buf, "%.6f", v);
	std::string s = buf;
	if (s == "-0.000000") s = "0.000000";
	return s;
}

} // namespace fasucm::text
