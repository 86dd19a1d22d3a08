#pragma once

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/core/text.hpp"
#include "fasucm/dataset/records.hpp"

namespace fasucm::metrics {

using dataset::Label;
using text::fixed6;
using text::parse_double;
using text::parse_int;
using text::split;
using text::trim;

/// Creates the parent directory of `path`; failures surface as IoError.
inline void ensure_parent(const std::filesystem::path& path) {
	if (!path.has_parent_path()) return;
	std::error_code ec;
	std::filesystem::create_directories(path.parent_path(), ec);
	if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

struct ScoreRecord {
	std::string subject_id;
	std::string video_id;
	std::uint64_t frame_index = 0;
	Label true_label = Label::live;
	double p_spoof = 0;
	Label decision = Label::live;

	bool operator==(const ScoreRecord&) const = default;
};

inline Label decide(double p_spoof, double threshold) { return p_spoof >= threshold ? Label::spoof : Label::live; }

/// "Accept" means classified live.
struct ConfusionCounts {
	std::size_t tp_live = 0;  ///< live accepted
	std::size_t fn_live = 0;  ///< live rejected
	std::size_t tn_spoof = 0; ///< spoof rejected
	std::size_t fp_spoof = 0; ///< spoof accepted

	std::size_t live() const { return tp_live + fn_live; }
	std::size_t spoof() const { return tn_spoof + fp_spoof; }
	std::size_t total() const { return live() + spoof(); }
	bool operator==(const ConfusionCounts&) const = default;
};

/// Decisions are re-derived from p_spoof: spoof iff p_spoof >= threshold.
inline ConfusionCounts confusion(const std::vector<ScoreRecord>& records, double threshold) {
	if (records.empty()) throw EmptyInputError("confusion over an empty score list");
	FASUCM_REQUIRE(threshold >= 0.0 && std::isfinite(threshold), "threshold must be a finite value >= 0");
	ConfusionCounts c;
	for (const auto& r : records) {
		const bool spoof = decide(r.p_spoof, threshold) == Label::spoof;
		if (r.true_label == Label::live)
			(spoof ? c.fn_live : c.tp_live) += 1;
		else
			(spoof ? c.tn_spoof : c.fp_spoof) += 1;
	}
	return c;
}

/// A rate, or nullopt when its denominator is zero.
using Rate = std::optional<double>;

inline Rate ratio(std::size_t num, std::size_t den) {
	if (den == 0) return std::nullopt;
	return static_cast<double>(num) / static_cast<double>(den);
}

struct BoxplotSummary {
	double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
	bool operator==(const BoxplotSummary&) const = default;
};

struct MetricsReport {
	Rate accuracy, far, frr, f1, apcer, npcer, acer;
	ConfusionCounts counts;
	double threshold = 0.5;
	std::map<std::string, double> per_subject;
	std::optional<BoxplotSummary> boxplot;
	/// Free-form provenance (config hash, notes); emitted as strings.
	std::map<std::string, std::string> meta;

	bool operator==(const MetricsReport&) const = default;
};

inline Rate mean_of(const Rate& a, const Rate& b) {
	if (!a || !b) return std::nullopt;
	return (*a + *b) / 2.0;
}

/// Scalar rates from counts. F1 treats live as the positive class.
inline MetricsReport compute_metrics(const ConfusionCounts& c) {
	MetricsReport r;
	r.counts = c;
	r.apcer = ratio(c.fp_spoof, c.spoof());
	r.npcer = ratio(c.fn_live, c.live());
	r.acer = mean_of(r.apcer, r.npcer);
	r.far = r.apcer;
	r.frr = r.npcer;
	r.accuracy = ratio(c.tp_live + c.tn_spoof, c.total());
	r.f1 = ratio(2 * c.tp_live, 2 * c.tp_live + c.fp_spoof + c.fn_live);
	return r;
}

inline std::map<std::string, double> per_subject_accuracy(const std::vector<ScoreRecord>& records) {
	std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
	for (const auto& r : records) {
		auto& [correct, total] = tally[r.subject_id];
		correct += r.decision == r.true_label;
		++total;
	}
	std::map<std::string, double> out;
	for (const auto& [s, t] : tally) out[s] = static_cast<double>(t.first) / static_cast<double>(t.second);
	return out;
}

/// Quantile by linear interpolation between order statistics, inclusive of
/// the extremes: h = (n - 1) p, q = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
/// For {1, 2, 3, 4} this gives q1 1.75, median 2.5, q3 3.25.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
	const double h = static_cast<double>(sorted.size() - 1) * p;
	const auto lo = static_cast<std::size_t>(std::floor(h));
	if (lo + 1 >= sorted.size()) return sorted.back();
	return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline BoxplotSummary boxplot_summary(std::vector<double> values) {
	if (values.empty()) throw EmptyInputError("boxplot of an empty value list");
	std::sort(values.begin(), values.end());
	return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5), quantile_sorted(values, 0.75),
	        values.back()};
}

/// Headline report: rates at `threshold`, per-subject accuracy and its boxplot.
/// Per-subject accuracy uses decisions re-derived at the same threshold.
inline MetricsReport evaluate(std::vector<ScoreRecord> records, double threshold) {
	auto report = compute_metrics(confusion(records, threshold));
	report.threshold = threshold;
	for (auto& r : records) r.decision = decide(r.p_spoof, threshold);
	report.per_subject = per_subject_accuracy(records);
	std::vector<double> acc;
	for (const auto& [_, a] : report.per_subject) acc.push_back(a);
	report.boxplot = boxplot_summary(acc);
	return report;
}

struct SweepPoint {
	double threshold = 0;
	Rate apcer, npcer, acer;
};

inline std::vector<SweepPoint> threshold_sweep(const std::vector<ScoreRecord>& records,
                                               const std::vector<double>& thresholds) {
	std::vector<SweepPoint> out;
	for (double t : thresholds) {
		const auto m = compute_metrics(confusion(records, t));
		out.push_back({t, m.apcer, m.npcer, m.acer});
	}
	return out;
}

inline std::vector<double> uniform_thresholds(std::size_t steps) {
	std::vector<double> t;
	for (std::size_t i = 0; i <= steps; ++i) t.push_back(static_cast<double>(i) / static_cast<double>(steps));
	return t;
}

// ---- score files ---------------------------------------------------------

inline constexpr const char* score_header = "subject,video,frame,true_label,p_spoof,decision";

inline void write_scores(const std::vector<ScoreRecord>& records, const std::filesystem::path& path) {
	ensure_parent(path);
	std::ofstream out(path, std::ios::binary);
	if (!out) throw IoError("cannot write " + path.string());
	out << score_header << '\n';
	for (const auto& r : records)
		out << r.subject_id << ',' << r.video_id << ',' << r.frame_index << ',' << dataset::to_string(r.true_label) << ','
		    << fixed6(r.p_spoof) << ',' << dataset::to_string(r.decision) << '\n';
	if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw IoError("cannot read score file " + path.string());
	std::string line;
	if (!std::getline(in, line) || trim(line) != score_header)
		throw ParseError(path.string() + ": expected header '" + score_header + "'");
	std::vector<ScoreRecord> out;
	for (std::size_t n = 2; std::getline(in, line); ++n) {
		if (trim(line).empty()) continue;
		const auto f = split(std::string(trim(line)), ',');
		const auto where = path.string() + ":" + std::to_string(n);
		if (f.size() != 6) throw ParseError(where + ": expected 6 fields");
		ScoreRecord r;
		r.subject_id = f[0];
		r.video_id = f[1];
		const auto frame = parse_int<std::uint64_t>(f[2]);
		const auto p = parse_double(f[4]);
		if (!frame || !p || *p < 0.0 || *p > 1.0) throw ParseError(where + ": bad frame or probability");
		r.frame_index = *frame;
		r.p_spoof = *p;
		r.true_label = dataset::parse_label(f[3]);
		r.decision = dataset::parse_label(f[5]);
		out.push_back(std::move(r));
	}
	return out;
}

// ---- report emission ------------------------------------------------------

namespace detail {

inline std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }
inline std::string json_rate(const Rate& r) { return r ? fixed6(*r) : "null"; }

} // namespace detail

/// Bit-stable JSON: keys sorted, numbers with six decimals, undefined rates null.
inline std::string report_json(const MetricsReport& r) {
	std::ostringstream o;
	o << "{\n";
	o << "  \"accuracy\": " << detail::json_rate(r.accuracy) << ",\n";
	o << "  \"acer\": " << detail::json_rate(r.acer) << ",\n";
	o << "  \"apcer\": " << detail::json_rate(r.apcer) << ",\n";
	o << "  \"boxplot\": ";
	if (r.boxplot) {
		const auto& b = *r.boxplot;
		o << "{\"max\": " << fixed6(b.max) << ", \"median\": " << fixed6(b.median) << ", \"min\": " << fixed6(b.min)
		  << ", \"q1\": " << fixed6(b.q1) << ", \"q3\": " << fixed6(b.q3) << "},\n";
	} else {
		o << "null,\n";
	}
	const auto& c = r.counts;
	o << "  \"counts\": {\"fn_live\": " << c.fn_live << ", \"fp_spoof\": " << c.fp_spoof << ", \"tn_spoof\": " << c.tn_spoof
	  << ", \"tp_live\": " << c.tp_live << "},\n";
	o << "  \"f1\": " << detail::json_rate(r.f1) << ",\n";
	o << "  \"far\": " << detail::json_rate(r.far) << ",\n";
	o << "  \"frr\": " << detail::json_rate(r.frr) << ",\n";
	o << "  \"meta\": {";
	bool first = true;
	for (const auto& [k, v] : r.meta) {
		o << (first ? "" : ", ") << detail::json_string(k) << ": " << detail::json_string(v);
		first = false;
	}
	o << "},\n";
	o << "  \"npcer\": " << detail::json_rate(r.npcer) << ",\n";
	o << "  \"per_subject\": {";
	first = true;
	for (const auto& [k, v] : r.per_subject) {
		o << (first ? "\n    " : ",\n    ") << detail::json_string(k) << ": " << fixed6(v);
		first = false;
	}
	o << (r.per_subject.empty() ? "},\n" : "\n  },\n");
	o << "  \"threshold\": " << fixed6(r.threshold) << "\n}\n";
	return o.str();
}

inline std::string report_csv(const MetricsReport& r) {
	std::string out = "subject,accuracy\n";
	for (const auto& [s, a] : r.per_subject) out += s + "," + fixed6(a) + "\n";
	return out;
}

inline MetricsReport parse_report(const std::string& text) {
	MetricsReport r;
	try {
		const auto j = nlohmann::json::parse(text);
		auto rate = [&](const char* key) -> Rate {
			const auto& v = j.at(key);
			if (v.is_null()) return std::nullopt;
			return v.get<double>();
		};
		r.accuracy = rate("accuracy");
		r.acer = rate("acer");
		r.apcer = rate("apcer");
		r.npcer = rate("npcer");
		r.f1 = rate("f1");
		r.far = rate("far");
		r.frr = rate("frr");
		const auto& c = j.at("counts");
		r.counts = {c.at("tp_live"), c.at("fn_live"), c.at("tn_spoof"), c.at("fp_spoof")};
		r.threshold = j.at("threshold");
		for (auto& [k, v] : j.at("per_subject").items()) r.per_subject[k] = v.get<double>();
		if (!j.at("boxplot").is_null()) {
			const auto& b = j["boxplot"];
			r.boxplot = BoxplotSummary{b.at("min"), b.at("q1"), b.at("median"), b.at("q3"), b.at("max")};
		}
		for (auto& [k, v] : j.at("meta").items()) r.meta[k] = v.get<std::string>();
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(std::string("metrics report: ") + e.what());
	}
	return r;
}

/// Boxplot of per-subject accuracy on a [0, 1] axis, 400x300 PNG.
inline void render_boxplot(const BoxplotSummary& b, const std::filesystem::path& path, const std::string& label = "") {
	constexpr int width = 400, height = 300, top = 20, bottom = 260;
	cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
	auto y_of = [&](double v) { return static_cast<int>(std::lround(bottom - v * (bottom - top))); };
	const cv::Scalar ink(40, 40, 40), box_fill(230, 200, 160);
	cv::line(img, {50, top}, {50, bottom}, ink, 1);
	for (int t = 0; t <= 10; t += 2) {
		const int y = y_of(t / 10.0);
		cv::line(img, {45, y}, {50, y}, ink, 1);
		cv::putText(img, fixed6(t / 10.0).substr(0, 3), {8, y + 4}, cv::FONT_HERSHEY_PLAIN, 0.9, ink, 1);
	}
	const int cx = 220, half = 50;
	cv::rectangle(img, {cx - half, y_of(b.q3)}, {cx + half, y_of(b.q1)}, box_fill, cv::FILLED);
	cv::rectangle(img, {cx - half, y_of(b.q3)}, {cx + half, y_of(b.q1)}, ink, 1);
	cv::line(img, {cx - half, y_of(b.median)}, {cx + half, y_of(b.median)}, cv::Scalar(30, 30, 200), 2);
	cv::line(img, {cx, y_of(b.q3)}, {cx, y_of(b.max)}, ink, 1);
	cv::line(img, {cx, y_of(b.q1)}, {cx, y_of(b.min)}, ink, 1);
	cv::line(img, {cx - half / 2, y_of(b.max)}, {cx + half / 2, y_of(b.max)}, ink, 1);
	cv::line(img, {cx - half / 2, y_of(b.min)}, {cx + half / 2, y_of(b.min)}, ink, 1);
	if (!label.empty()) cv::putText(img, label, {cx - half, height - 12}, cv::FONT_HERSHEY_PLAIN, 1.0, ink, 1);
	ensure_parent(path);
	if (!cv::imwrite(path.string(), img)) throw IoError("cannot write plot " + path.string());
}

enum class ReportFormat { json, csv };

inline ReportFormat parse_report_format(const std::string& s) {
	if (s == "json") return ReportFormat::json;
	if (s == "csv") return ReportFormat::csv;
	throw ConfigError("unknown report format '" + s + "' (expected json or csv)");
}

/// Writes the report in `format` to `path` and, when `plot` is given and the
/// report has a boxplot, renders it.
inline void emit_report(const MetricsReport& report, ReportFormat format, const std::filesystem::path& path,
                        const std::optional<std::filesystem::path>& plot = std::nullopt) {
	ensure_parent(path);
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw IoError("cannot write report " + path.string());
	out << (format == ReportFormat::json ? report_json(report) : report_csv(report));
	if (!out) throw IoError("failed writing report " + path.string());
	if (plot && report.boxplot) render_boxplot(*report.boxplot, *plot, "per-subject accuracy");
}

} // namespace fasucm::metrics
