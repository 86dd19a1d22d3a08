#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "fasucm/core/error.hpp"

namespace fasucm::dataset {

enum class Label { live, spoof };
enum class AttackType { none, print, phone, monitor, tablet };
enum class Split { unassigned, train, test };

inline std::string to_string(Label l) { return l == Label::live ? "live" : "spoof"; }
inline std::string to_string(AttackType a) {
	switch (a) {
	case AttackType::none: return "none";
	case AttackType::print: return "print";
	case AttackType::phone: return "phone";
	case AttackType::monitor: return "monitor";
	case AttackType::tablet: return "tablet";
	}
	return "none";
}
inline std::string to_string(Split s) {
	switch (s) {
	case Split::train: return "train";
	case Split::test: return "test";
	default: return "unassigned";
	}
}

inline Label parse_label(const std::string& s) {
	if (s == "live") return Label::live;
	if (s == "spoof") return Label::spoof;
	throw ParseError("unknown label '" + s + "'");
}
inline AttackType parse_attack_type(const std::string& s) {
	for (auto a : {AttackType::none, AttackType::print, AttackType::phone, AttackType::monitor, AttackType::tablet})
		if (to_string(a) == s) return a;
	throw ParseError("unknown attack type '" + s + "'");
}
inline Split parse_split(const std::string& s) {
	for (auto v : {Split::unassigned, Split::train, Split::test})
		if (to_string(v) == s) return v;
	throw ParseError("unknown split '" + s + "'");
}

/// One stored face crop. `path` is relative to the manifest root.
struct SampleRecord {
	std::string subject_id;
	std::string video_id;
	std::uint64_t frame_index = 0;
	Label label = Label::live;
	AttackType attack_type = AttackType::none;
	Split split = Split::unassigned;
	std::string path;

	bool operator==(const SampleRecord&) const = default;

	auto key() const { return std::tie(subject_id, video_id, frame_index); }

	/// Spoof representation of a record: "<attack>" or "<attack>.<tag>" when
	/// the video id carries a ".<tag>" suffix. Live records have no style.
	std::string style_id() const {
		if (label == Label::live) return "";
		const auto dot = video_id.rfind('.');
		const std::string base = to_string(attack_type);
		return dot == std::string::npos ? base : base + video_id.substr(dot);
	}
};

inline void to_json(nlohmann::json& j, const SampleRecord& r) {
	j = {{"subject_id", r.subject_id},           {"video_id", r.video_id},
	     {"frame_index", r.frame_index},         {"label", to_string(r.label)},
	     {"attack_type", to_string(r.attack_type)}, {"split", to_string(r.split)},
	     {"path", r.path}};
}
inline void from_json(const nlohmann::json& j, SampleRecord& r) {
	r.subject_id = j.at("subject_id");
	r.video_id = j.at("video_id");
	r.frame_index = j.at("frame_index");
	r.label = parse_label(j.at("label"));
	r.attack_type = parse_attack_type(j.at("attack_type"));
	r.split = parse_split(j.value("split", "unassigned"));
	r.path = j.at("path");
	if ((r.label == Label::live) != (r.attack_type == AttackType::none))
		throw ParseError("record " + r.path + ": live records must have attack_type none and spoof records must not");
}

struct Tally {
	std::size_t live = 0, spoof = 0;
	bool operator==(const Tally&) const = default;
};

/// Subject-keyed catalogue of face crops.
struct DatasetManifest {
	std::filesystem::path root;
	std::uint64_t seed = 0;
	std::vector<SampleRecord> records;

	std::map<std::string, Tally> counts() const {
		std::map<std::string, Tally> out;
		for (const auto& r : records) {
			auto& t = out[r.subject_id];
			(r.label == Label::live ? t.live : t.spoof) += 1;
		}
		return out;
	}

	std::vector<std::string> subjects() const {
		std::set<std::string> s;
		for (const auto& r : records) s.insert(r.subject_id);
		return {s.begin(), s.end()};
	}

	std::vector<SampleRecord> select(const std::string& subject) const {
		std::vector<SampleRecord> out;
		for (const auto& r : records)
			if (r.subject_id == subject) out.push_back(r);
		return out;
	}

	std::filesystem::path absolute(const SampleRecord& r) const { return root / r.path; }

	bool operator==(const DatasetManifest&) const = default;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
	nlohmann::json counts = nlohmann::json::object();
	for (const auto& [s, t] : m.counts()) counts[s] = {{"live", t.live}, {"spoof", t.spoof}};
	j = {{"root", m.root.string()}, {"seed", m.seed}, {"records", m.records}, {"counts", counts}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
	m.root = j.at("root").get<std::string>();
	m.seed = j.at("seed");
	m.records = j.at("records").get<std::vector<SampleRecord>>();
	if (j.contains("counts")) {
		std::map<std::string, Tally> stated;
		for (auto& [s, t] : j["counts"].items()) stated[s] = {t.at("live"), t.at("spoof")};
		if (stated != m.counts()) throw ParseError("manifest counts disagree with its records");
	}
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
	if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
	std::ofstream out(path);
	if (!out) throw IoError("cannot write " + path.string());
	out << nlohmann::json(m).dump(1) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw IoError("cannot read manifest " + path.string());
	try {
		return nlohmann::json::parse(in).get<DatasetManifest>();
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
}

} // namespace fasucm::dataset
