#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fasucm/core/random.hpp"
#include "fasucm/metrics/metrics.hpp"
#include "metrics_oracle.hpp"

using namespace fasucm;
using namespace fasucm::metrics;
namespace fs = std::filesystem;

namespace {

ScoreRecord rec(const std::string& subject, Label truth, double p_spoof, double threshold = 0.5) {
	return {subject, "v", 0, truth, p_spoof, decide(p_spoof, threshold)};
}

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::stringstream s;
	s << in.rdbuf();
	return s.str();
}

} // namespace

TEST(Confusion, HandLabeledRecords) {
	const std::vector<ScoreRecord> r = {rec("a", Label::live, 0.1), rec("a", Label::live, 0.7),
	                                    rec("a", Label::spoof, 0.9), rec("a", Label::spoof, 0.2)};
	EXPECT_EQ(confusion(r, 0.5), (ConfusionCounts{1, 1, 1, 1}));
	EXPECT_EQ(confusion(r, 0.0), (ConfusionCounts{0, 2, 2, 0}));
	EXPECT_EQ(confusion(r, 1.0 + 1e-9), (ConfusionCounts{2, 0, 0, 2}));
	EXPECT_EQ(confusion({rec("a", Label::live, 0.5)}, 0.5), (ConfusionCounts{0, 1, 0, 0})); // boundary is spoof
	EXPECT_THROW(confusion({}, 0.5), EmptyInputError);
	EXPECT_THROW(confusion(r, -0.1), ContractError);
}

TEST(ComputeMetrics, HandArithmetic) {
	const auto m = compute_metrics({9, 1, 6, 4});
	EXPECT_DOUBLE_EQ(*m.accuracy, 0.75);
	EXPECT_DOUBLE_EQ(*m.frr, 0.1);
	EXPECT_DOUBLE_EQ(*m.far, 0.4);
	EXPECT_DOUBLE_EQ(*m.f1, 18.0 / 23.0);
	EXPECT_DOUBLE_EQ(*m.acer, 0.25);
}

TEST(ComputeMetrics, PerfectAndUndefined) {
	const auto p = compute_metrics({5, 0, 7, 0});
	EXPECT_EQ(*p.accuracy, 1.0);
	EXPECT_EQ(*p.apcer, 0.0);
	EXPECT_EQ(*p.npcer, 0.0);
	EXPECT_EQ(*p.acer, 0.0);
	EXPECT_EQ(*p.f1, 1.0);
	const auto live_only = compute_metrics({3, 1, 0, 0});
	EXPECT_FALSE(live_only.apcer.has_value());
	EXPECT_FALSE(live_only.acer.has_value());
	EXPECT_DOUBLE_EQ(*live_only.npcer, 0.25);
	const auto spoof_rejected = compute_metrics({0, 0, 4, 0});
	EXPECT_FALSE(spoof_rejected.f1.has_value());
}

TEST(ComputeMetrics, AcerOfReportedRates) {
	// 44 of 100 attacks accepted, no live rejected.
	const auto m = compute_metrics({100, 0, 56, 44});
	EXPECT_NEAR(*m.apcer, 0.44, 1e-12);
	EXPECT_NEAR(*m.npcer, 0.00, 1e-12);
	EXPECT_NEAR(*m.acer, 0.22, 1e-12);
}

TEST(ComputeMetrics, MatchesBruteForceOnRandomScoreSets) {
	Rng rng(2024);
	for (int trial = 0; trial < 1000; ++trial) {
		const auto records = oracle::random_scores(rng, 1 + rng.below(200), 1 + rng.below(6));
		const double threshold = rng.uniform();
		const auto m = compute_metrics(confusion(records, threshold));
		const auto o = oracle::brute_force(records, threshold);
		oracle::expect_same(m, o, 1e-12);
	}
}

TEST(ComputeMetrics, AcerIsExactMean) {
	Rng rng(3);
	for (int trial = 0; trial < 200; ++trial) {
		const ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50) + 1, rng.below(50)};
		if (c.live() == 0) continue;
		const auto m = compute_metrics(c);
		// Exact rational check: 2 acer live spoof == fn spoof + fp live.
		const double lhs = 2.0 * *m.acer * static_cast<double>(c.live() * c.spoof());
		EXPECT_NEAR(lhs, static_cast<double>(c.fn_live * c.spoof() + c.fp_spoof * c.live()), 1e-9);
	}
}

TEST(ComputeMetrics, RatesInvariantToCorrectRecordsOfOtherClass) {
	Rng rng(4);
	for (int trial = 0; trial < 100; ++trial) {
		auto records = oracle::random_scores(rng, 50, 3);
		const auto before = compute_metrics(confusion(records, 0.5));
		auto more_live = records, more_spoof = records;
		more_live.push_back(rec("x", Label::live, 0.1));
		more_spoof.push_back(rec("x", Label::spoof, 0.9));
		const auto a = compute_metrics(confusion(more_live, 0.5));
		const auto b = compute_metrics(confusion(more_spoof, 0.5));
		EXPECT_EQ(a.apcer, before.apcer);
		EXPECT_EQ(b.npcer, before.npcer);
	}
}

TEST(ThresholdSweep, Monotone) {
	Rng rng(5);
	for (int trial = 0; trial < 50; ++trial) {
		auto records = oracle::random_scores(rng, 100, 2);
		records.push_back(rec("x", Label::live, 0.3));
		records.push_back(rec("x", Label::spoof, 0.6));
		const auto sweep = threshold_sweep(records, uniform_thresholds(20));
		ASSERT_EQ(sweep.size(), 21u);
		// A higher threshold means fewer spoof decisions: fewer live
		// rejections and more accepted attacks.
		for (std::size_t i = 1; i < sweep.size(); ++i) {
			EXPECT_LE(*sweep[i].npcer, *sweep[i - 1].npcer);
			EXPECT_GE(*sweep[i].apcer, *sweep[i - 1].apcer);
		}
	}
}

TEST(PerSubjectAccuracy, Enumeration) {
	EXPECT_EQ(per_subject_accuracy({rec("a", Label::live, 0.1), rec("a", Label::spoof, 0.9)}).at("a"), 1.0);
	const std::vector<ScoreRecord> r = {rec("a", Label::live, 0.1), rec("a", Label::live, 0.9),
	                                    rec("b", Label::spoof, 0.8), rec("b", Label::live, 0.2)};
	const auto m = per_subject_accuracy(r);
	EXPECT_EQ(m, (std::map<std::string, double>{{"a", 0.5}, {"b", 1.0}}));
	std::vector<ScoreRecord> many;
	for (int s = 0; s < 90; ++s) many.push_back(rec("s" + std::to_string(s), Label::live, 0.2));
	EXPECT_EQ(per_subject_accuracy(many).size(), 90u);
}

TEST(Boxplot, DocumentedQuartileMethod) {
	const auto b = boxplot_summary({4, 2, 1, 3});
	EXPECT_EQ(b, (BoxplotSummary{1, 1.75, 2.5, 3.25, 4}));
	EXPECT_EQ(boxplot_summary({0.7}), (BoxplotSummary{0.7, 0.7, 0.7, 0.7, 0.7}));
	EXPECT_THROW(boxplot_summary({}), EmptyInputError);
	// Odd count: median is the middle order statistic.
	EXPECT_EQ(boxplot_summary({5, 1, 3}).median, 3.0);
}

TEST(Boxplot, MatchesSortAndInterpolateOracle) {
	Rng rng(6);
	for (int trial = 0; trial < 300; ++trial) {
		std::vector<double> v(1 + rng.below(40));
		for (auto& x : v) x = rng.uniform();
		const auto b = boxplot_summary(v);
		EXPECT_LE(b.min, b.q1);
		EXPECT_LE(b.q1, b.median);
		EXPECT_LE(b.median, b.q3);
		EXPECT_LE(b.q3, b.max);
		for (double p : {0.25, 0.5, 0.75}) {
			const double expect = oracle::quantile_by_rank_interpolation(v, p);
			const double got = p == 0.25 ? b.q1 : p == 0.5 ? b.median : b.q3;
			EXPECT_NEAR(got, expect, 1e-12);
		}
	}
}

TEST(Boxplot, ReportedFiveNumberAnchors) {
	const auto values = oracle::anchored_accuracies();
	ASSERT_EQ(values.size(), 90u);
	const auto b = boxplot_summary(values);
	EXPECT_NEAR(b.min, 0.3469, 1e-12);
	EXPECT_NEAR(b.q1, 0.6049, 1e-12);
	EXPECT_NEAR(b.q3, 0.9395, 1e-12);
	EXPECT_NEAR(b.max, 0.9949, 1e-12);
	EXPECT_GT(b.median, 0.70);
}

TEST(EmitReport, BitStableAndRoundTrips) {
	Rng rng(7);
	auto records = oracle::random_scores(rng, 120, 4);
	auto report = evaluate(records, 0.5);
	report.meta["config_hash"] = "abc123";
	const auto dir = fs::temp_directory_path() / "fasucm_report";
	fs::remove_all(dir);
	emit_report(report, ReportFormat::json, dir / "a.json", dir / "box.png");
	emit_report(report, ReportFormat::json, dir / "b.json");
	EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
	EXPECT_TRUE(fs::exists(dir / "box.png"));
	const auto back = parse_report(slurp(dir / "a.json"));
	EXPECT_EQ(report_json(back), report_json(report));
	EXPECT_EQ(back.counts, report.counts);
	EXPECT_NEAR(*back.acer, *report.acer, 5e-7);
	EXPECT_EQ(back.meta, report.meta);

	// Values already at six decimals survive exactly.
	MetricsReport exact = compute_metrics({6, 2, 3, 1});
	exact.per_subject = {{"a", 0.25}, {"b", 1.0}};
	exact.boxplot = boxplot_summary({0.25, 1.0});
	EXPECT_EQ(parse_report(report_json(exact)), exact);

	emit_report(report, ReportFormat::csv, dir / "s.csv");
	const auto csv = slurp(dir / "s.csv");
	EXPECT_EQ(csv.substr(0, csv.find('\n')), "subject,accuracy");
	EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(report.per_subject.size() + 1));
}

TEST(EmitReport, UndefinedRatesAreNull) {
	auto report = compute_metrics({4, 0, 0, 0});
	const auto json = report_json(report);
	EXPECT_NE(json.find("\"apcer\": null"), std::string::npos);
	EXPECT_EQ(json.find("nan"), std::string::npos);
	EXPECT_FALSE(parse_report(json).apcer.has_value());
}

TEST(EmitReport, UnwritablePath) {
	EXPECT_THROW(emit_report(compute_metrics({1, 0, 1, 0}), ReportFormat::json, "/proc/nope/report.json"), IoError);
}

TEST(ScoreFile, RoundTrip) {
	Rng rng(8);
	auto records = oracle::random_scores(rng, 30, 2);
	for (auto& r : records) r.p_spoof = std::round(r.p_spoof * 1e6) / 1e6;
	const auto path = fs::temp_directory_path() / "fasucm_scores.csv";
	write_scores(records, path);
	EXPECT_EQ(read_scores(path), records);
	std::ofstream(path) << "subject,p\n";
	EXPECT_THROW(read_scores(path), ParseError);
}
