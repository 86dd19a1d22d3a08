#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fasucm/classifier/model.hpp"
#include "fasucm/core/error.hpp"
#include "fasucm/core/hash.hpp"
#include "fasucm/core/text.hpp"
#include "fasucm/dataset/crop.hpp"
#include "fasucm/style/engine.hpp"

namespace fasucm::pipeline {

namespace fs = std::filesystem;

struct PipelineConfig {
	struct Paths {
		fs::path data_root;
		std::string weights; // weights manifest path, or "random:<seed>"
		fs::path output = "run";
	} paths;
	struct Ingest {
		std::size_t size = 256;
		double margin = 0.1;
		std::size_t stride = 1;
		std::string detector = "full-frame";
	} ingest;
	struct SplitSection {
		double train_fraction = 0.7;
		std::uint64_t seed = 0;
	} split;
	struct Style {
		std::size_t iterations = 40000;
		double lr = 1e-3;
		double content_weight = 1;
		double style_weight = 5;
		double tv_weight = 1e-4;
		std::uint64_t seed = 0;
		std::size_t image_size = 256;
		std::size_t batch = 4;
		std::size_t base_channels = 32;
		std::size_t residual_blocks = 5;
		std::size_t corpus_limit = 0;
	} style;
	struct Synth {
		double fraction = 0.10;
		std::string bank_subject = "random";
		std::uint64_t seed = 0;
	} synth;
	struct Train {
		std::string backbone = "spoof_modnet";
		double lr = 1e-4;
		std::size_t batch = 8;
		std::size_t epochs = 50;
		std::size_t steps = 0;
		std::uint64_t seed = 0;
		std::string optimizer = "sgd";
		double momentum = 0.9;
		bool augment = false;
		bool real_spoofs = false;
		fs::path descriptor;
		fs::path backbone_weights;
		bool train_trunk = false;
	} train;
	struct Eval {
		double threshold = 0.5;
	} eval;

	dataset::CropSpec crop_spec() const { return {ingest.size, ingest.margin, ingest.detector}; }

	style::StyleTrainConfig style_train_config() const {
		style::StyleTrainConfig c;
		c.iterations = style.iterations;
		c.learning_rate = style.lr;
		c.seed = style.seed;
		c.image_size = style.image_size;
		c.batch_size = style.batch;
		c.net.base_channels = style.base_channels;
		c.net.residual_blocks = style.residual_blocks;
		return c;
	}
	style::LossWeights loss_weights() const { return {style.content_weight, style.style_weight, style.tv_weight}; }

	classifier::TrainConfig train_config() const {
		classifier::TrainConfig c;
		c.learning_rate = train.lr;
		c.batch_size = train.batch;
		c.epochs = train.epochs;
		c.steps = train.steps;
		c.seed = train.seed;
		c.optimizer = train.optimizer == "adam" ? nn::OptimizerKind::adam : nn::OptimizerKind::sgd;
		c.momentum = train.momentum;
		c.augment = train.augment;
		c.train_trunk = train.train_trunk;
		return c;
	}
};

/// A config file failed to parse or validate; `errors` lists every problem.
class ConfigValidationError : public ConfigError {
public:
	explicit ConfigValidationError(std::vector<std::string> errors)
	    : ConfigError(join(errors)), errors_(std::move(errors)) {}
	const std::vector<std::string>& errors() const { return errors_; }

private:
	static std::string join(const std::vector<std::string>& e) {
		std::string out = "invalid configuration:";
		for (const auto& s : e) out += "\n  " + s;
		return out;
	}
	std::vector<std::string> errors_;
};

using Value = std::variant<std::string, bool, std::int64_t, double>;

namespace detail {

struct Field {
	std::string section, key;
	bool stated; // default is a value the method description states
	std::function<std::string(const PipelineConfig&)> show;
	std::function<std::string(PipelineConfig&, const Value&)> set; // returns an error or ""
	std::string name() const { return section + "." + key; }
};

inline std::string show_double(double v) {
	char buf[32];
	const auto r = std::to_chars(buf, buf + sizeof buf, v);
	return std::string(buf, r.ptr);
}

template <class M>
Field field(std::string section, std::string key, bool stated, M PipelineConfig::*sec, auto member) {
	Field f;
	f.section = section;
	f.key = key;
	f.stated = stated;
	using T = std::remove_cvref_t<decltype((std::declval<M&>().*member))>;
	f.show = [sec, member](const PipelineConfig& c) -> std::string {
		const auto& v = (c.*sec).*member;
		if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
		else if constexpr (std::is_same_v<T, double>) return show_double(v);
		else if constexpr (std::is_integral_v<T>) return std::to_string(v);
		else if constexpr (std::is_same_v<T, fs::path>) return "\"" + v.generic_string() + "\"";
		else return "\"" + v + "\"";
	};
	f.set = [sec, member](PipelineConfig& c, const Value& v) -> std::string {
		auto& dst = (c.*sec).*member;
		if constexpr (std::is_same_v<T, bool>) {
			if (!std::holds_alternative<bool>(v)) return "expects true or false";
			dst = std::get<bool>(v);
		} else if constexpr (std::is_same_v<T, double>) {
			if (std::holds_alternative<double>(v)) dst = std::get<double>(v);
			else if (std::holds_alternative<std::int64_t>(v)) dst = static_cast<double>(std::get<std::int64_t>(v));
			else return "expects a number";
		} else if constexpr (std::is_integral_v<T>) {
			if (!std::holds_alternative<std::int64_t>(v)) return "expects an integer";
			if (std::get<std::int64_t>(v) < 0) return "must not be negative";
			dst = static_cast<T>(std::get<std::int64_t>(v));
		} else {
			if (!std::holds_alternative<std::string>(v)) return "expects a quoted string";
			dst = std::get<std::string>(v);
		}
		return "";
	};
	return f;
}

inline const std::vector<Field>& schema() {
	using C = PipelineConfig;
	static const std::vector<Field> fields = {
	    field("paths", "data_root", false, &C::paths, &C::Paths::data_root),
	    field("paths", "weights", false, &C::paths, &C::Paths::weights),
	    field("paths", "output", false, &C::paths, &C::Paths::output),
	    field("ingest", "size", true, &C::ingest, &C::Ingest::size),
	    field("ingest", "margin", true, &C::ingest, &C::Ingest::margin),
	    field("ingest", "stride", true, &C::ingest, &C::Ingest::stride),
	    field("ingest", "detector", false, &C::ingest, &C::Ingest::detector),
	    field("split", "train_fraction", true, &C::split, &C::SplitSection::train_fraction),
	    field("split", "seed", false, &C::split, &C::SplitSection::seed),
	    field("style", "iterations", false, &C::style, &C::Style::iterations),
	    field("style", "lr", false, &C::style, &C::Style::lr),
	    field("style", "content_weight", false, &C::style, &C::Style::content_weight),
	    field("style", "style_weight", false, &C::style, &C::Style::style_weight),
	    field("style", "tv_weight", false, &C::style, &C::Style::tv_weight),
	    field("style", "seed", false, &C::style, &C::Style::seed),
	    field("style", "image_size", false, &C::style, &C::Style::image_size),
	    field("style", "batch", false, &C::style, &C::Style::batch),
	    field("style", "base_channels", false, &C::style, &C::Style::base_channels),
	    field("style", "residual_blocks", false, &C::style, &C::Style::residual_blocks),
	    field("style", "corpus_limit", false, &C::style, &C::Style::corpus_limit),
	    field("synth", "fraction", true, &C::synth, &C::Synth::fraction),
	    field("synth", "bank_subject", true, &C::synth, &C::Synth::bank_subject),
	    field("synth", "seed", false, &C::synth, &C::Synth::seed),
	    field("train", "backbone", true, &C::train, &C::Train::backbone),
	    field("train", "lr", true, &C::train, &C::Train::lr),
	    field("train", "batch", true, &C::train, &C::Train::batch),
	    field("train", "epochs", true, &C::train, &C::Train::epochs),
	    field("train", "steps", false, &C::train, &C::Train::steps),
	    field("train", "seed", false, &C::train, &C::Train::seed),
	    field("train", "optimizer", false, &C::train, &C::Train::optimizer),
	    field("train", "momentum", false, &C::train, &C::Train::momentum),
	    field("train", "augment", false, &C::train, &C::Train::augment),
	    field("train", "real_spoofs", true, &C::train, &C::Train::real_spoofs),
	    field("train", "descriptor", false, &C::train, &C::Train::descriptor),
	    field("train", "backbone_weights", false, &C::train, &C::Train::backbone_weights),
	    field("train", "train_trunk", false, &C::train, &C::Train::train_trunk),
	    field("eval", "threshold", true, &C::eval, &C::Eval::threshold),
	};
	return fields;
}

inline const Field* find(const std::string& section, const std::string& key) {
	for (const auto& f : schema())
		if (f.section == section && f.key == key) return &f;
	return nullptr;
}

/// Closest known key, compared on the bare key and on the dotted name.
inline std::string suggest(const std::string& section, const std::string& key) {
	std::size_t best = SIZE_MAX;
	std::string name;
	for (const auto& f : schema()) {
		const std::size_t d = std::min(text::edit_distance(key, f.key),
		                               text::edit_distance(section + "." + key, f.name()));
		// ties go to the section the key was written under
		if (d < best || (d == best && f.section == section)) {
			best = d;
			name = f.name();
		}
	}
	return best <= std::max<std::size_t>(2, key.size() / 3) ? name : "";
}

inline std::optional<Value> parse_value(std::string_view raw, std::string& error) {
	const std::string_view v = text::trim(raw);
	if (v.empty()) {
		error = "missing value";
		return std::nullopt;
	}
	if (v.front() == '"') {
		std::string out;
		for (std::size_t i = 1; i < v.size(); ++i) {
			const char c = v[i];
			if (c == '\\' && i + 1 < v.size()) {
				const char n = v[++i];
				out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
			} else if (c == '"') {
				if (!text::trim(v.substr(i + 1)).empty()) break;
				return out;
			} else {
				out += c;
			}
		}
		error = "unterminated string";
		return std::nullopt;
	}
	if (v == "true") return true;
	if (v == "false") return false;
	std::string digits(v);
	std::erase(digits, '_');
	if (auto i = text::parse_int<std::int64_t>(digits.front() == '+' ? digits.substr(1) : digits)) return *i;
	if (auto d = text::parse_double(digits.front() == '+' ? digits.substr(1) : digits)) return *d;
	error = "cannot parse value '" + std::string(v) + "'";
	return std::nullopt;
}

/// Strips a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view line) {
	bool quoted = false;
	for (std::size_t i = 0; i < line.size(); ++i) {
		if (line[i] == '\\' && quoted) {
			++i;
			continue;
		}
		if (line[i] == '"') quoted = !quoted;
		if (line[i] == '#' && !quoted) return line.substr(0, i);
	}
	return line;
}

} // namespace detail

/// Checks ranges and cross-field constraints.
inline std::vector<std::string> check(const PipelineConfig& c) {
	std::vector<std::string> e;
	auto need = [&](bool ok, const std::string& msg) {
		if (!ok) e.push_back(msg);
	};
	need(c.ingest.size > 0, "ingest.size must be positive");
	need(c.ingest.margin >= 0 && c.ingest.margin < 1, "ingest.margin must lie in [0, 1)");
	need(c.ingest.stride >= 1, "ingest.stride must be at least 1");
	need(c.ingest.detector == "full-frame" || c.ingest.detector == "foreground" ||
	         c.ingest.detector.rfind("cascade:", 0) == 0,
	     "ingest.detector must be full-frame, foreground or cascade:<model.xml>");
	need(c.split.train_fraction > 0 && c.split.train_fraction < 1, "split.train_fraction must lie in (0, 1)");
	need(c.style.iterations >= 1, "style.iterations must be at least 1");
	need(c.style.lr > 0 && std::isfinite(c.style.lr), "style.lr must be positive");
	need(c.style.content_weight >= 0 && c.style.style_weight >= 0 && c.style.tv_weight >= 0,
	     "style weights must not be negative");
	need(c.style.image_size >= 32 && c.style.image_size % 4 == 0, "style.image_size must be >= 32 and a multiple of 4");
	need(c.style.batch >= 1, "style.batch must be at least 1");
	need(c.style.base_channels >= 1, "style.base_channels must be at least 1");
	need(c.synth.fraction > 0 && c.synth.fraction <= 1, "synth.fraction must lie in (0, 1]");
	need(!c.synth.bank_subject.empty(), "synth.bank_subject must be a subject id or \"random\"");
	need(c.train.backbone == "spoof_modnet" || c.train.backbone == "external_backbone",
	     "train.backbone must be spoof_modnet or external_backbone");
	need(c.train.lr > 0 && std::isfinite(c.train.lr), "train.lr must be positive");
	need(c.train.batch >= 2, "train.batch must be at least 2");
	need(c.train.epochs >= 1 || c.train.steps >= 1, "train.epochs or train.steps must be positive");
	need(c.train.optimizer == "sgd" || c.train.optimizer == "adam", "train.optimizer must be sgd or adam");
	need(c.train.momentum >= 0 && c.train.momentum < 1, "train.momentum must lie in [0, 1)");
	need(c.train.backbone != "external_backbone" || (!c.train.descriptor.empty() && !c.train.backbone_weights.empty()),
	     "external_backbone needs train.descriptor and train.backbone_weights");
	need(c.eval.threshold >= 0 && std::isfinite(c.eval.threshold), "eval.threshold must be a finite value >= 0");
	return e;
}

/// Parses the TOML-style text. Unknown sections and keys are errors; every
/// problem is collected before throwing ConfigValidationError.
inline PipelineConfig parse_config(std::string_view textv) {
	PipelineConfig c;
	std::vector<std::string> errors;
	std::map<std::string, int> seen;
	std::string section;
	std::size_t line_no = 0;
	for (const auto& raw : text::split(textv, '\n')) {
		++line_no;
		const std::string at = "line " + std::to_string(line_no) + ": ";
		const auto line = text::trim(detail::strip_comment(raw));
		if (line.empty()) continue;
		if (line.front() == '[') {
			if (line.back() != ']') {
				errors.push_back(at + "malformed section header");
				continue;
			}
			section = std::string(text::trim(line.substr(1, line.size() - 2)));
			bool known = false;
			for (const auto& f : detail::schema()) known |= f.section == section;
			if (!known) errors.push_back(at + "unknown section [" + section + "]");
			continue;
		}
		const auto eq = line.find('=');
		if (eq == std::string_view::npos) {
			errors.push_back(at + "expected key = value");
			continue;
		}
		std::string key(text::trim(line.substr(0, eq)));
		std::string sec = section;
		if (const auto dot = key.find('.'); dot != std::string::npos) {
			sec = key.substr(0, dot);
			key = key.substr(dot + 1);
		}
		const auto* f = detail::find(sec, key);
		if (!f) {
			const auto hint = detail::suggest(sec, key);
			errors.push_back(at + "unknown key '" + (sec.empty() ? key : sec + "." + key) + "'" +
			                 (hint.empty() ? "" : "; did you mean '" + hint + "'?"));
			continue;
		}
		if (seen[f->name()]++) {
			errors.push_back(at + "duplicate key '" + f->name() + "'");
			continue;
		}
		std::string perr;
		const auto value = detail::parse_value(line.substr(eq + 1), perr);
		if (!value) {
			errors.push_back(at + f->name() + ": " + perr);
			continue;
		}
		if (const auto err = f->set(c, *value); !err.empty()) errors.push_back(at + f->name() + " " + err);
	}
	for (auto& e : check(c)) errors.push_back(std::move(e));
	if (!errors.empty()) throw ConfigValidationError(std::move(errors));
	return c;
}

inline PipelineConfig load_config(const fs::path& path) {
	std::ifstream in(path);
	if (!in) throw ConfigValidationError({"cannot read config file " + path.string()});
	std::stringstream s;
	s << in.rdbuf();
	auto c = parse_config(s.str());
	// relative paths are relative to the config file
	const auto base = path.parent_path();
	auto anchor = [&](fs::path& p) {
		if (!p.empty() && p.is_relative()) p = base / p;
	};
	anchor(c.paths.data_root);
	anchor(c.paths.output);
	anchor(c.train.descriptor);
	anchor(c.train.backbone_weights);
	if (!c.paths.weights.empty() && c.paths.weights.rfind("random:", 0) != 0 && fs::path(c.paths.weights).is_relative())
		c.paths.weights = (base / c.paths.weights).string();
	return c;
}

/// Every key with its effective value, one `section.key = value` per line.
inline std::string render_config(const PipelineConfig& c) {
	std::string out, section;
	for (const auto& f : detail::schema()) {
		if (f.section != section) {
			out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
			section = f.section;
		}
		out += f.key + " = " + f.show(c) + "\n";
	}
	return out;
}

/// SHA-256 of the experiment parameters. Paths are left out: where the data
/// and outputs live does not change a result, and inputs are tracked by
/// content hash in the stage stamps.
inline std::string config_hash(const PipelineConfig& c, const std::string& only_section = "") {
	Sha256 h;
	for (const auto& f : detail::schema()) {
		if (f.section == "paths") continue;
		if (!only_section.empty() && f.section != only_section) continue;
		h.update(f.name() + "=" + f.show(c) + "\n");
	}
	return h.hex();
}

struct Deviation {
	std::string key, value, default_value;
	bool stated;
};

/// Keys whose value differs from the built-in default.
inline std::vector<Deviation> deviations(const PipelineConfig& c) {
	const PipelineConfig d;
	std::vector<Deviation> out;
	for (const auto& f : detail::schema())
		if (f.section != "paths" && f.show(c) != f.show(d)) out.push_back({f.name(), f.show(c), f.show(d), f.stated});
	return out;
}

} // namespace fasucm::pipeline
