#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fasucm/core/hash.hpp"
#include "fasucm/core/log.hpp"
#include "fasucm/core/parallel.hpp"
#include "fasucm/core/random.hpp"
#include "fasucm/dataset/manifest.hpp"
#include "fasucm/style/engine.hpp"

namespace fasucm::synth {

namespace fs = std::filesystem;
using dataset::DatasetManifest;
using dataset::SampleRecord;
using dataset::Label;
using dataset::Split;
using dataset::parse_attack_type;
using dataset::to_string;

inline constexpr const char* provenance_file = "provenance.json";
inline constexpr const char* bank_file = "bank.json";

/// One reference frame per spoof style of the source subject.
struct BankEntry {
	SampleRecord reference;
	style::StyleModel model;
};

struct StyleBank {
	std::string source_subject;
	std::uint64_t seed = 0;
	std::vector<BankEntry> styles;

	std::vector<std::string> style_ids() const {
		std::vector<std::string> out;
		for (const auto& e : styles) out.push_back(e.model.style_id);
		return out;
	}

	/// SHA-256 over (style_id, model checksum) pairs in bank order.
	std::string hash() const {
		Sha256 h;
		for (const auto& e : styles) h.update(e.model.style_id + ":" + e.model.checksum() + "\n");
		return h.hex();
	}
};

/// Distinct spoof styles over the whole manifest, sorted.
inline std::vector<std::string> dataset_styles(const DatasetManifest& manifest) {
	std::set<std::string> s;
	for (const auto& r : manifest.records)
		if (r.label == Label::spoof) s.insert(r.style_id());
	return {s.begin(), s.end()};
}

/// Styles missing from `subject`'s spoof records.
inline std::vector<std::string> missing_styles(const DatasetManifest& manifest, const std::string& subject) {
	std::set<std::string> have;
	for (const auto& r : manifest.records)
		if (r.subject_id == subject && r.label == Label::spoof) have.insert(r.style_id());
	std::vector<std::string> out;
	for (const auto& s : dataset_styles(manifest))
		if (!have.count(s)) out.push_back(s);
	return out;
}

/// Resolves "random" to a subject covering every style, drawn with `seed`.
inline std::string resolve_bank_subject(const DatasetManifest& manifest, const std::string& subject,
                                        std::uint64_t seed) {
	const auto subjects = manifest.subjects();
	if (subject != "random") {
		if (!std::binary_search(subjects.begin(), subjects.end(), subject))
			throw ConfigError("bank subject '" + subject + "' is not in the manifest");
		return subject;
	}
	std::vector<std::string> complete;
	for (const auto& s : subjects)
		if (missing_styles(manifest, s).empty()) complete.push_back(s);
	if (complete.empty()) throw ConfigError("no subject has spoof frames for every style");
	Rng rng(derive_seed(seed, "bank-subject"));
	return complete[rng.below(complete.size())];
}

/// First frame of the lexicographically first video of each style of the
/// subject, ordered by style id.
inline std::vector<SampleRecord> select_references(const DatasetManifest& manifest, const std::string& subject) {
	const auto missing = missing_styles(manifest, subject);
	if (!missing.empty()) {
		std::string list;
		for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
		throw ConfigError("subject " + subject + " has no spoof frames for style(s): " + list);
	}
	std::map<std::string, SampleRecord> best;
	for (const auto& r : manifest.records) {
		if (r.subject_id != subject || r.label != Label::spoof) continue;
		auto [it, inserted] = best.emplace(r.style_id(), r);
		if (!inserted && std::tie(r.video_id, r.frame_index) < std::tie(it->second.video_id, it->second.frame_index))
			it->second = r;
	}
	if (best.empty()) throw EmptyInputError("manifest has no spoof records to take references from");
	std::vector<SampleRecord> out;
	for (auto& [id, r] : best) out.push_back(r);
	return out;
}

/// Content corpus for style training: live train frames of every subject
/// (all live frames if the manifest is unsplit), at most `limit` of them,
/// sampled with `seed` and kept in manifest order.
inline std::vector<ImageBuffer> style_corpus(const DatasetManifest& manifest, std::size_t limit, std::uint64_t seed) {
	std::vector<std::size_t> idx;
	for (std::size_t i = 0; i < manifest.records.size(); ++i) {
		const auto& r = manifest.records[i];
		if (r.label == Label::live && r.split != Split::test) idx.push_back(i);
	}
	if (idx.empty()) throw EmptyInputError("no live frames available for the style corpus");
	if (limit > 0 && idx.size() > limit) {
		Rng rng(derive_seed(seed, "style-corpus"));
		for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
		idx.resize(limit);
		std::sort(idx.begin(), idx.end());
	}
	std::vector<ImageBuffer> out;
	out.reserve(idx.size());
	for (auto i : idx) out.push_back(load_image(manifest.absolute(manifest.records[i])));
	return out;
}

struct BankSettings {
	style::StyleTrainConfig train;
	style::LossWeights weights;
	std::size_t corpus_limit = 0; // 0 keeps every eligible frame
};

/// Picks the references and trains one style model per reference, up to
/// `jobs` at a time. Model seeds derive from the bank seed and the style id,
/// so the bank does not depend on `jobs`.
inline StyleBank build_style_bank(const DatasetManifest& manifest, const std::string& subject, std::uint64_t seed,
                                  const BankSettings& settings, const perceptual::FeatureExtractor<float>& fx,
                                  std::size_t jobs = 1) {
	StyleBank bank;
	bank.seed = seed;
	bank.source_subject = resolve_bank_subject(manifest, subject, seed);
	const auto refs = select_references(manifest, bank.source_subject);
	const auto corpus = style_corpus(manifest, settings.corpus_limit, seed);
	log::info("style bank: subject " + bank.source_subject + ", " + std::to_string(refs.size()) + " styles, corpus " +
	          std::to_string(corpus.size()) + " images");
	bank.styles.resize(refs.size());
	parallel_for(refs.size(), jobs, [&](std::size_t i) {
		const auto& r = refs[i];
		style::StyleReference ref{r.style_id(), load_image(manifest.absolute(r)), to_string(r.attack_type)};
		auto config = settings.train;
		config.seed = derive_seed(seed, "style/" + ref.style_id);
		bank.styles[i] = {r, style::train_style_model(ref, corpus, settings.weights, config, fx)};
		const auto& trace = bank.styles[i].model.loss_trace;
		log::info("trained style " + ref.style_id + ", final loss " + text::fixed6(trace.empty() ? 0.0 : trace.back().total));
	});
	return bank;
}

inline void save_style_bank(const StyleBank& bank, const fs::path& dir,
                            const nlohmann::json& extra = nlohmann::json::object()) {
	fs::create_directories(dir);
	nlohmann::json styles = nlohmann::json::array();
	for (const auto& e : bank.styles) {
		const auto sidecar = style::save_style_model(e.model, dir, extra);
		styles.push_back({{"style_id", e.model.style_id},
		                  {"attack_type", e.model.attack_type},
		                  {"reference", e.reference},
		                  {"model", sidecar.filename().string()},
		                  {"checksum", e.model.checksum()}});
	}
	nlohmann::json j = {{"source_subject", bank.source_subject}, {"seed", bank.seed},
	                    {"styles", styles},                      {"bank_hash", bank.hash()}};
	for (auto& [k, v] : extra.items()) j[k] = v;
	std::ofstream out(dir / bank_file);
	if (!out) throw IoError("cannot write " + (dir / bank_file).string());
	out << j.dump(1) << '\n';
}

inline StyleBank load_style_bank(const fs::path& dir) {
	const auto path = dir / bank_file;
	if (!fs::exists(path)) throw ConfigError("no style bank at " + dir.string() + " (missing " + bank_file + ")");
	nlohmann::json j;
	try {
		std::ifstream in(path);
		j = nlohmann::json::parse(in);
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	StyleBank bank;
	try {
		bank.source_subject = j.at("source_subject");
		bank.seed = j.at("seed");
		for (const auto& s : j.at("styles"))
			bank.styles.push_back({s.at("reference").get<SampleRecord>(),
			                       style::load_style_model(dir / s.at("model").get<std::string>())});
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	if (j.contains("bank_hash") && j["bank_hash"] != bank.hash())
		throw ConfigError("style bank hash mismatch in " + path.string());
	return bank;
}

struct SyntheticItem {
	SampleRecord source;
	std::string style_id;
	std::string path; // relative to the output root
	bool operator==(const SyntheticItem&) const = default;
};

inline void to_json(nlohmann::json& j, const SyntheticItem& i) {
	j = {{"source", i.source}, {"style_id", i.style_id}, {"path", i.path}};
}
inline void from_json(const nlohmann::json& j, SyntheticItem& i) {
	i.source = j.at("source").get<SampleRecord>();
	i.style_id = j.at("style_id");
	i.path = j.at("path");
}

struct SyntheticSpoofSet {
	std::string subject_id;
	fs::path root;
	std::vector<SyntheticItem> items;
	std::string bank_hash;
	std::uint64_t seed = 0;
	double fraction = 0;
	std::size_t live_train = 0;
	std::map<std::string, std::string> attack_types; // style id -> attack type

	/// Spoof record for an item; the attack type comes from its style.
	SampleRecord record(const SyntheticItem& item) const {
		SampleRecord r;
		r.subject_id = subject_id;
		r.video_id = item.source.video_id + "." + item.style_id;
		r.frame_index = item.source.frame_index;
		r.label = Label::spoof;
		r.attack_type = parse_attack_type(attack_types.at(item.style_id));
		r.split = Split::train;
		r.path = item.path;
		return r;
	}
};

inline fs::path synthetic_root(const fs::path& root, const std::string& subject) {
	return root / subject / dataset::synthetic_dir;
}

/// round(fraction * n) * styles, the number of spoofs generate_spoofs makes.
inline std::size_t balanced_count(std::size_t live_train, double fraction, std::size_t styles) {
	return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(live_train))) * styles;
}

inline void save_provenance(const SyntheticSpoofSet& set, const nlohmann::json& extra = nlohmann::json::object()) {
	nlohmann::json attack = nlohmann::json::object();
	for (const auto& [k, v] : set.attack_types) attack[k] = v;
	nlohmann::json j = {{"subject_id", set.subject_id}, {"bank_hash", set.bank_hash}, {"seed", set.seed},
	                    {"fraction", set.fraction},     {"live_train", set.live_train}, {"attack_types", attack},
	                    {"items", set.items}};
	for (auto& [k, v] : extra.items()) j[k] = v;
	const auto path = synthetic_root(set.root, set.subject_id) / provenance_file;
	std::ofstream out(path);
	if (!out) throw IoError("cannot write " + path.string());
	out << j.dump(1) << '\n';
}

/// Reads <root>/<subject>/synthetic/provenance.json and checks that every
/// generated file exists.
inline SyntheticSpoofSet load_provenance(const fs::path& root, const std::string& subject) {
	const auto path = synthetic_root(root, subject) / provenance_file;
	if (!fs::exists(path)) throw ConfigError("no synthetic spoof set for subject " + subject + " at " + path.string());
	SyntheticSpoofSet set;
	set.root = root;
	try {
		std::ifstream in(path);
		const auto j = nlohmann::json::parse(in);
		set.subject_id = j.at("subject_id");
		set.bank_hash = j.at("bank_hash");
		set.seed = j.at("seed");
		set.fraction = j.at("fraction");
		set.live_train = j.at("live_train");
		for (auto& [k, v] : j.at("attack_types").items()) set.attack_types[k] = v.get<std::string>();
		set.items = j.at("items").get<std::vector<SyntheticItem>>();
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	if (set.subject_id != subject) throw ParseError(path.string() + ": subject mismatch");
	for (const auto& i : set.items)
		if (!fs::exists(root / i.path)) throw IoError("synthetic spoof listed but missing: " + (root / i.path).string());
	return set;
}

/// Resizes to the model's training size, stylizes and resizes back.
inline ImageBuffer stylize_at_training_size(const style::StyleModel& model, const ImageBuffer& img) {
	const std::size_t size = model.config.image_size;
	const auto out = style::stylize(model, style::fit_square(img, size));
	if (img.height() == size && img.width() == size) return out;
	return resize_bilinear(out, img.height(), img.width());
}

struct GenerateOptions {
	fs::path out_root; // defaults to the manifest root
	std::size_t jobs = 1;
	std::vector<std::string>* warnings = nullptr;
};

/// Stylizes round(fraction * n) sampled live train frames of `subject` with
/// every bank model. Outputs land in <root>/<subject>/synthetic/<style>/
/// <video>_<frame>.png with a provenance file beside them. Any failure
/// removes the subject's synthetic directory and rethrows.
inline SyntheticSpoofSet generate_spoofs(const std::string& subject, const StyleBank& bank,
                                         const DatasetManifest& manifest, double fraction, std::uint64_t seed,
                                         const GenerateOptions& options = {},
                                         const nlohmann::json& extra = nlohmann::json::object()) {
	if (bank.styles.empty()) throw ContractError("style bank is empty");
	std::size_t live_train = 0;
	for (const auto& r : manifest.records) {
		FASUCM_REQUIRE(r.split != Split::unassigned, "generate_spoofs needs a split manifest");
		if (r.subject_id == subject && r.label == Label::live && r.split == Split::train) ++live_train;
	}
	if (live_train == 0) throw EmptyInputError("subject " + subject + " has no live training frames");

	DatasetManifest own = manifest;
	std::erase_if(own.records, [&](const SampleRecord& r) { return r.subject_id != subject; });
	const auto sources = dataset::sample_style_sources(own, fraction, seed, options.warnings);

	const std::size_t n_styles = bank.styles.size();
	const std::size_t produced = sources.size() * n_styles;
	if (produced != live_train) {
		const std::string msg = "subject " + subject + ": " + std::to_string(produced) +
		                        " synthetic spoofs for " + std::to_string(live_train) +
		                        " live training frames; fraction = 1/" + std::to_string(n_styles) + " (" +
		                        text::fixed6(1.0 / static_cast<double>(n_styles)) + ") would balance the classes";
		log::warn(msg);
		if (options.warnings) options.warnings->push_back(msg);
	}

	SyntheticSpoofSet set;
	set.subject_id = subject;
	set.root = options.out_root.empty() ? manifest.root : options.out_root;
	set.bank_hash = bank.hash();
	set.seed = seed;
	set.fraction = fraction;
	set.live_train = live_train;
	for (const auto& e : bank.styles) set.attack_types[e.model.style_id] = e.model.attack_type;

	const fs::path dir = synthetic_root(set.root, subject);
	fs::remove_all(dir);
	set.items.resize(produced);
	for (std::size_t s = 0; s < sources.size(); ++s)
		for (std::size_t k = 0; k < n_styles; ++k) {
			const auto& src = sources[s];
			const auto& id = bank.styles[k].model.style_id;
			set.items[s * n_styles + k] = {
			    src, id,
			    fs::relative(dir / id / (src.video_id + "_" + std::to_string(src.frame_index) + ".png"), set.root)
			        .generic_string()};
		}

	std::exception_ptr error;
	try {
		parallel_for(sources.size(), options.jobs, [&](std::size_t s) {
			const auto img = load_image(manifest.absolute(sources[s]));
			for (std::size_t k = 0; k < n_styles; ++k)
				save_png(set.root / set.items[s * n_styles + k].path,
				         stylize_at_training_size(bank.styles[k].model, img));
		});
	} catch (...) {
		error = std::current_exception();
	}

	try {
		if (error) std::rethrow_exception(error);
		save_provenance(set, extra);
	} catch (...) {
		std::error_code ec;
		fs::remove_all(dir, ec);
		log::error("spoof generation for subject " + subject + " failed; removed " + dir.string());
		throw;
	}
	log::info("subject " + subject + ": " + std::to_string(produced) + " synthetic spoofs from " +
	          std::to_string(sources.size()) + " live frames");
	return set;
}

} // namespace fasucm::synth
