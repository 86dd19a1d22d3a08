#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fasucm/classifier/subject.hpp"
#include "fasucm/core/hash.hpp"
#include "fasucm/core/log.hpp"
#include "fasucm/core/parallel.hpp"
#include "fasucm/dataset/manifest.hpp"
#include "fasucm/metrics/metrics.hpp"
#include "fasucm/perceptual/backbone.hpp"
#include "fasucm/pipeline/config.hpp"
#include "fasucm/synth/synth.hpp"

namespace fasucm::pipeline {

enum class Stage { ingest, split, style_train, spoof_gen, train, eval, report };

inline constexpr std::array<Stage, 7> all_stages = {Stage::ingest,    Stage::split, Stage::style_train,
                                                    Stage::spoof_gen, Stage::train, Stage::eval,
                                                    Stage::report};

inline std::string to_string(Stage s) {
	switch (s) {
	case Stage::ingest: return "ingest";
	case Stage::split: return "split";
	case Stage::style_train: return "style-train";
	case Stage::spoof_gen: return "spoof-gen";
	case Stage::train: return "train";
	case Stage::eval: return "eval";
	case Stage::report: return "report";
	}
	return "?";
}

inline Stage parse_stage(const std::string& s) {
	for (auto st : all_stages)
		if (to_string(st) == s) return st;
	throw ConfigError("unknown stage '" + s + "' (expected ingest, split, style-train, spoof-gen, train, eval, report or all)");
}

inline std::vector<Stage> upstream(Stage s) {
	switch (s) {
	case Stage::ingest: return {};
	case Stage::split: return {Stage::ingest};
	case Stage::style_train: return {Stage::split};
	case Stage::spoof_gen: return {Stage::split, Stage::style_train};
	case Stage::train: return {Stage::split, Stage::spoof_gen};
	case Stage::eval: return {Stage::split, Stage::train};
	case Stage::report: return {Stage::eval};
	}
	return {};
}

/// Files and directories under the output root.
struct Layout {
	fs::path out;
	fs::path crops() const { return out / "crops"; }
	fs::path manifest() const { return out / "manifest.json"; }
	fs::path split() const { return out / "split.json"; }
	fs::path bank() const { return out / "bank"; }
	fs::path weights() const { return out / "weights"; }
	fs::path models() const { return out / "models"; }
	fs::path scores() const { return out / "scores.csv"; }
	fs::path report() const { return out / "report.json"; }
	fs::path boxplot() const { return out / "boxplot.png"; }
	fs::path report_dir() const { return out / "report"; }
	fs::path stamps() const { return out / ".stamps"; }
	fs::path stamp(Stage s) const { return stamps() / (to_string(s) + ".json"); }
	fs::path run_log() const { return out / "run_log.jsonl"; }
};

/// Record of a finished stage: the key it was run under and the digests of
/// what it wrote (paths relative to the output root).
struct Stamp {
	std::string stage, key, config_hash;
	std::map<std::string, std::string> outputs;
};

inline void to_json(nlohmann::json& j, const Stamp& s) {
	j = {{"stage", s.stage}, {"key", s.key}, {"config_hash", s.config_hash}, {"outputs", s.outputs}};
}
inline void from_json(const nlohmann::json& j, Stamp& s) {
	s.stage = j.at("stage");
	s.key = j.at("key");
	s.config_hash = j.at("config_hash");
	s.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
}

inline std::optional<Stamp> read_stamp(const Layout& l, Stage s) {
	const auto p = l.stamp(s);
	if (!fs::exists(p)) return std::nullopt;
	try {
		std::ifstream in(p);
		return nlohmann::json::parse(in).get<Stamp>();
	} catch (const nlohmann::json::exception&) {
		return std::nullopt;
	}
}

inline std::string outputs_digest(const Stamp& s) {
	Sha256 h;
	for (const auto& [p, d] : s.outputs) h.update(p + "=" + d + "\n");
	return h.hex();
}

/// Outputs recorded in a stamp still exist with the recorded content.
inline bool intact(const Layout& l, const Stamp& s) {
	for (const auto& [p, d] : s.outputs) {
		const auto full = l.out / p;
		if (!fs::is_regular_file(full) || sha256_file(full) != d) return false;
	}
	return true;
}

/// SHA-256 over relative paths and contents of every regular file below `dir`.
inline std::string tree_hash(const fs::path& dir) {
	std::vector<fs::path> files;
	for (const auto& e : fs::recursive_directory_iterator(dir))
		if (e.is_regular_file()) files.push_back(e.path());
	std::sort(files.begin(), files.end());
	Sha256 h;
	for (const auto& f : files) h.update(fs::relative(f, dir).generic_string() + "=" + sha256_file(f) + "\n");
	return h.hex();
}

inline std::string file_identity(const fs::path& p) {
	return p.empty() ? "" : fs::exists(p) ? sha256_file(p) : "missing:" + p.generic_string();
}

struct RunOptions {
	std::size_t jobs = 1;
	bool force = false; // rerun even when the stamp is current
};

enum class StageStatus { ran, up_to_date };

class Pipeline {
public:
	Pipeline(PipelineConfig config, RunOptions options = {})
	    : config_(std::move(config)), options_(options), layout_{config_.paths.output},
	      hash_(config_hash(config_)) {}

	const Layout& layout() const { return layout_; }
	const std::string& hash() const { return hash_; }
	const PipelineConfig& config() const { return config_; }

	/// Key a stage would be stamped with now; empty if an upstream stamp is
	/// missing.
	std::string stage_key(Stage s) const {
		Sha256 h;
		h.update(to_string(s) + "\n");
		h.update(stage_parameters(s));
		for (auto u : upstream(s)) {
			const auto st = read_stamp(layout_, u);
			if (!st) return "";
			h.update(to_string(u) + ":" + st->key + ":" + outputs_digest(*st) + "\n");
		}
		return h.hex();
	}

	bool up_to_date(Stage s) const {
		const auto st = read_stamp(layout_, s);
		return st && st->key == stage_key(s) && intact(layout_, *st);
	}

	/// Throws PrerequisiteError naming the first stage that must run first.
	void check_prerequisites(Stage s) const {
		for (auto u : upstream(s)) {
			const auto st = read_stamp(layout_, u);
			if (!st)
				throw PrerequisiteError("stage '" + to_string(s) + "' needs the outputs of '" + to_string(u) +
				                        "'; run stage '" + to_string(u) + "' first");
			if (!up_to_date(u))
				throw PrerequisiteError("outputs of stage '" + to_string(u) + "' are out of date for this configuration; run stage '" +
				                        to_string(u) + "' again before '" + to_string(s) + "'");
		}
	}

	StageStatus run(Stage s) {
		check_prerequisites(s);
		const auto key = stage_key(s);
		const auto stamp = read_stamp(layout_, s);
		if (!options_.force && stamp && stamp->key == key && intact(layout_, *stamp)) {
			log::info("stage " + to_string(s) + " is up-to-date");
			append_log(s, "up-to-date", 0.0);
			return StageStatus::up_to_date;
		}
		const auto t0 = std::chrono::steady_clock::now();
		log::info("stage " + to_string(s) + ": running (config " + hash_.substr(0, 12) + ")");
		std::vector<fs::path> outputs;
		try {
			fs::create_directories(layout_.out);
			fs::remove(layout_.stamp(s));
			outputs = execute(s);
		} catch (...) {
			append_log(s, "failed", seconds_since(t0));
			throw;
		}
		Stamp st{to_string(s), key, hash_, {}};
		for (const auto& p : outputs) st.outputs[fs::relative(p, layout_.out).generic_string()] = sha256_file(p);
		fs::create_directories(layout_.stamps());
		std::ofstream(layout_.stamp(s)) << nlohmann::json(st).dump(1) << '\n';
		append_log(s, "ok", seconds_since(t0));
		return StageStatus::ran;
	}

	/// Runs every stage in order, skipping those that are current.
	void run_all() {
		for (auto s : all_stages) run(s);
	}

private:
	static double seconds_since(std::chrono::steady_clock::time_point t0) {
		return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
	}

	nlohmann::json extra() const { return {{"config_hash", hash_}}; }

	std::string stage_parameters(Stage s) const {
		switch (s) {
		case Stage::ingest:
			if (config_.paths.data_root.empty() || !fs::is_directory(config_.paths.data_root))
				throw ConfigError("paths.data_root is not a directory: '" + config_.paths.data_root.string() + "'");
			return config_hash(config_, "ingest") + tree_hash(config_.paths.data_root);
		case Stage::split: return config_hash(config_, "split");
		case Stage::style_train:
			return config_hash(config_, "style") + config_.synth.bank_subject + "\n" + weights_identity();
		case Stage::spoof_gen: return config_hash(config_, "synth");
		case Stage::train:
			return config_hash(config_, "train") + file_identity(config_.train.descriptor) +
			       file_identity(config_.train.backbone_weights);
		case Stage::eval:
		case Stage::report: return config_hash(config_, "eval");
		}
		return "";
	}

	std::string weights_identity() const {
		const auto& w = config_.paths.weights;
		if (w.rfind("random:", 0) == 0) return w;
		return file_identity(w);
	}

	perceptual::FeatureExtractor<float> extractor() const {
		const auto& w = config_.paths.weights;
		if (w.empty())
			throw ConfigError("paths.weights is required for style training (a weights manifest or \"random:<seed>\")");
		if (w.rfind("random:", 0) == 0) {
			const auto seed = text::parse_int<std::uint64_t>(w.substr(7));
			if (!seed) throw ConfigError("paths.weights: expected random:<seed>, got '" + w + "'");
			return perceptual::load_backbone<float>(perceptual::write_random_weights(layout_.weights(), *seed));
		}
		return perceptual::load_backbone<float>(w);
	}

	dataset::DatasetManifest split_manifest() const { return dataset::load_manifest(layout_.split()); }

	void write_manifest(const dataset::DatasetManifest& m, const fs::path& path) const {
		nlohmann::json j = m;
		j["config_hash"] = hash_;
		std::ofstream out(path);
		if (!out) throw IoError("cannot write " + path.string());
		out << j.dump(1) << '\n';
	}

	std::vector<fs::path> execute(Stage s) {
		switch (s) {
		case Stage::ingest: return do_ingest();
		case Stage::split: return do_split();
		case Stage::style_train: return do_style_train();
		case Stage::spoof_gen: return do_spoof_gen();
		case Stage::train: return do_train();
		case Stage::eval: return do_eval();
		case Stage::report: return do_report();
		}
		return {};
	}

	std::vector<fs::path> do_ingest() {
		fs::remove_all(layout_.crops());
		const auto stats = dataset::ingest(config_.paths.data_root, layout_.crops(), config_.crop_spec(), config_.ingest.stride);
		auto m = dataset::build_manifest(layout_.crops(), config_.split.seed);
		m.root = fs::absolute(layout_.crops());
		if (m.records.empty()) throw EmptyInputError("ingest produced no face crops from " + config_.paths.data_root.string());
		write_manifest(m, layout_.manifest());
		log::info("ingest: " + std::to_string(stats.videos) + " videos, " + std::to_string(stats.crops) + " crops, " +
		          std::to_string(stats.skipped) + " skipped");
		std::vector<fs::path> out{layout_.manifest()};
		for (const auto& r : m.records) out.push_back(m.absolute(r));
		return out;
	}

	std::vector<fs::path> do_split() {
		auto m = dataset::split_holdout(dataset::load_manifest(layout_.manifest()), config_.split.train_fraction,
		                                config_.split.seed);
		write_manifest(m, layout_.split());
		return {layout_.split()};
	}

	std::vector<fs::path> do_style_train() {
		const auto m = split_manifest();
		const auto fx = extractor();
		synth::BankSettings settings{config_.style_train_config(), config_.loss_weights(), config_.style.corpus_limit};
		fs::remove_all(layout_.bank());
		const auto bank =
		    synth::build_style_bank(m, config_.synth.bank_subject, config_.style.seed, settings, fx, options_.jobs);
		synth::save_style_bank(bank, layout_.bank(), extra());
		std::vector<fs::path> out{layout_.bank() / synth::bank_file};
		for (const auto& e : bank.styles) {
			out.push_back(style::style_model_sidecar(layout_.bank(), e.model.style_id));
			out.push_back(style::style_model_archive(layout_.bank(), e.model.style_id));
		}
		return out;
	}

	std::vector<fs::path> do_spoof_gen() {
		const auto m = split_manifest();
		const auto bank = synth::load_style_bank(layout_.bank());
		std::vector<fs::path> out;
		for (const auto& subject : m.subjects()) {
			synth::GenerateOptions opt;
			opt.jobs = options_.jobs;
			const auto set = synth::generate_spoofs(subject, bank, m, config_.synth.fraction, config_.synth.seed, opt,
			                                        {{"config_hash", hash_}, {"bank_subject", bank.source_subject}});
			out.push_back(synth::synthetic_root(set.root, subject) / synth::provenance_file);
			for (const auto& item : set.items) out.push_back(set.root / item.path);
		}
		return out;
	}

	std::vector<fs::path> do_train() {
		const auto m = split_manifest();
		const auto subjects = m.subjects();
		const auto tc = config_.train_config();
		const auto backbone = classifier::parse_backbone(config_.train.backbone);
		std::optional<std::pair<nlohmann::json, fs::path>> external;
		if (backbone == classifier::Backbone::external_backbone) {
			std::ifstream in(config_.train.descriptor);
			if (!in) throw ConfigError("cannot read backbone descriptor " + config_.train.descriptor.string());
			external.emplace(nlohmann::json::parse(in), config_.train.backbone_weights);
		}
		fs::remove_all(layout_.models());
		std::vector<fs::path> out(subjects.size() * 2);
		parallel_for(subjects.size(), options_.jobs, [&](std::size_t i) {
			const auto& subject = subjects[i];
			const auto set = synth::load_provenance(m.root, subject);
			const std::size_t input = external ? external->first.value("input_size", std::size_t{224}) : 32;
			const auto data = classifier::subject_training_set(m, subject, &set, config_.train.real_spoofs, input);
			const auto model = classifier::train_subject_model(subject, data, tc, backbone, external);
			const auto sidecar = classifier::save_classifier(
			    model, layout_.models(), subject,
			    {{"config_hash", hash_}, {"synthetic_bank_hash", set.bank_hash}, {"real_spoofs", config_.train.real_spoofs}});
			out[2 * i] = sidecar;
			out[2 * i + 1] = layout_.models() / (subject + ".fta");
			log::info("subject " + subject + ": trained on " + std::to_string(data.size()) + " images, final loss " +
			          text::fixed6(model.fingerprint.final_loss));
		});
		return out;
	}

	std::vector<fs::path> do_eval() {
		const auto m = split_manifest();
		const auto subjects = m.subjects();
		std::vector<std::vector<metrics::ScoreRecord>> per(subjects.size());
		parallel_for(subjects.size(), options_.jobs, [&](std::size_t i) {
			const auto model = classifier::load_classifier(layout_.models() / (subjects[i] + ".json"));
			per[i] = classifier::score_subject(model, m, subjects[i], config_.eval.threshold);
		});
		std::vector<metrics::ScoreRecord> scores;
		for (auto& p : per) scores.insert(scores.end(), p.begin(), p.end());
		if (scores.empty()) throw EmptyInputError("no test frames to score");
		metrics::write_scores(scores, layout_.scores());
		// Re-read so the report is computed from the six-decimal scores on disk.
		auto report = metrics::evaluate(metrics::read_scores(layout_.scores()), config_.eval.threshold);
		report.meta["config_hash"] = hash_;
		std::string bank_subject;
		{
			std::ifstream in(layout_.bank() / synth::bank_file);
			if (in) bank_subject = nlohmann::json::parse(in).value("source_subject", "");
		}
		// References came from this subject's spoof videos.
		report.meta["bank_subject"] = bank_subject;
		report.meta["subjects"] = std::to_string(subjects.size());
		metrics::emit_report(report, metrics::ReportFormat::json, layout_.report(), layout_.boxplot());
		log::info("eval: ACER " + (report.acer ? text::fixed6(*report.acer) : std::string("undefined")) + " over " +
		          std::to_string(scores.size()) + " test frames");
		return {layout_.scores(), layout_.report(), layout_.boxplot()};
	}

	std::vector<fs::path> do_report() {
		const auto scores = metrics::read_scores(layout_.scores());
		std::ifstream in(layout_.report());
		std::stringstream buf;
		buf << in.rdbuf();
		const auto report = metrics::parse_report(buf.str());
		const auto dir = layout_.report_dir();
		fs::create_directories(dir);
		metrics::emit_report(report, metrics::ReportFormat::csv, dir / "per_subject.csv", dir / "boxplot.png");
		std::ofstream sweep(dir / "threshold_sweep.csv", std::ios::binary);
		sweep << "threshold,apcer,npcer,acer\n";
		auto cell = [](const metrics::Rate& r) { return r ? text::fixed6(*r) : std::string(); };
		for (const auto& p : metrics::threshold_sweep(scores, metrics::uniform_thresholds(20)))
			sweep << text::fixed6(p.threshold) << ',' << cell(p.apcer) << ',' << cell(p.npcer) << ',' << cell(p.acer) << '\n';
		sweep.close();
		std::ofstream summary(dir / "summary.txt", std::ios::binary);
		summary << "config " << hash_ << "\nthreshold " << text::fixed6(report.threshold) << "\n";
		for (const auto& [name, r] : std::vector<std::pair<std::string, metrics::Rate>>{
		         {"accuracy", report.accuracy}, {"far", report.far}, {"frr", report.frr}, {"f1", report.f1},
		         {"apcer", report.apcer},       {"npcer", report.npcer}, {"acer", report.acer}})
			summary << name << ' ' << (r ? text::fixed6(*r) : "undefined") << '\n';
		if (report.meta.count("bank_subject"))
			summary << "style references taken from subject " << report.meta.at("bank_subject") << '\n';
		summary.close();
		return {dir / "per_subject.csv", dir / "boxplot.png", dir / "threshold_sweep.csv", dir / "summary.txt"};
	}

	void append_log(Stage s, const std::string& status, double seconds) const {
		nlohmann::json devs = nlohmann::json::array();
		for (const auto& d : deviations(config_))
			devs.push_back({{"key", d.key}, {"value", d.value}, {"default", d.default_value}, {"stated_default", d.stated}});
		const nlohmann::json line = {{"stage", to_string(s)},
		                             {"status", status},
		                             {"config_hash", hash_},
		                             {"seeds",
		                              {{"split", config_.split.seed},
		                               {"style", config_.style.seed},
		                               {"synth", config_.synth.seed},
		                               {"train", config_.train.seed}}},
		                             {"jobs", options_.jobs},
		                             {"wall_time_s", seconds},
		                             {"deviations", devs}};
		fs::create_directories(layout_.out);
		std::lock_guard lock(log_mutex_);
		std::ofstream(layout_.run_log(), std::ios::app) << line.dump() << '\n';
	}

	PipelineConfig config_;
	RunOptions options_;
	Layout layout_;
	std::string hash_;
	mutable std::mutex log_mutex_;
};

} // namespace fasucm::pipeline
