#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fasucm/core/log.hpp"
#include "fasucm/core/random.hpp"
#include "fasucm/core/text.hpp"
#include "fasucm/dataset/crop.hpp"
#include "fasucm/dataset/records.hpp"

namespace fasucm::dataset {

namespace fs = std::filesystem;

/// Directory that holds generated spoofs inside a subject folder; never
/// part of the real-data manifest.
inline constexpr const char* synthetic_dir = "synthetic";

namespace detail {

inline std::vector<fs::path> sorted_entries(const fs::path& dir) {
	std::vector<fs::path> out;
	for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
	std::sort(out.begin(), out.end());
	return out;
}

inline void add_video(const fs::path& root, const fs::path& video_dir, const std::string& subject, Label label,
                      AttackType attack, std::vector<SampleRecord>& out) {
	if (!fs::is_directory(video_dir)) throw ParseError("expected a video directory at " + video_dir.string());
	for (const auto& frame : sorted_entries(video_dir)) {
		const std::string stem = frame.stem().string();
		if (!fs::is_regular_file(frame) || frame.extension() != ".png" || stem.empty() ||
		    !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); }))
			throw ParseError("expected <frame_index>.png, found " + frame.string());
		SampleRecord r;
		r.subject_id = subject;
		r.video_id = video_dir.filename().string();
		r.frame_index = std::stoull(stem);
		r.label = label;
		r.attack_type = attack;
		r.path = fs::relative(frame, root).generic_string();
		out.push_back(std::move(r));
	}
}

} // namespace detail

/// Catalogues a crop tree laid out as
///   root/<subject>/live/<video>/<frame>.png
///   root/<subject>/spoof/<attack_type>/<video>/<frame>.png
/// Records are ordered by (subject, video, frame). JSON files at the root and
/// `synthetic` folders are ignored.
inline DatasetManifest build_manifest(const fs::path& root, std::uint64_t seed) {
	if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
	DatasetManifest m;
	m.root = root;
	m.seed = seed;
	for (const auto& subject_dir : detail::sorted_entries(root)) {
		if (fs::is_regular_file(subject_dir) && subject_dir.extension() == ".json") continue;
		if (!fs::is_directory(subject_dir)) throw ParseError("unexpected file in dataset root: " + subject_dir.string());
		const std::string subject = subject_dir.filename().string();
		for (const auto& label_dir : detail::sorted_entries(subject_dir)) {
			const std::string name = label_dir.filename().string();
			if (name == synthetic_dir) continue;
			if (!fs::is_directory(label_dir) || (name != "live" && name != "spoof"))
				throw ParseError("expected live/ or spoof/ under subject, found " + label_dir.string());
			if (name == "live") {
				for (const auto& v : detail::sorted_entries(label_dir))
					detail::add_video(root, v, subject, Label::live, AttackType::none, m.records);
				continue;
			}
			for (const auto& attack_dir : detail::sorted_entries(label_dir)) {
				AttackType attack;
				try {
					attack = parse_attack_type(attack_dir.filename().string());
				} catch (const ParseError&) {
					throw ParseError("unknown attack type directory " + attack_dir.string());
				}
				if (attack == AttackType::none || !fs::is_directory(attack_dir))
					throw ParseError("invalid attack type directory " + attack_dir.string());
				for (const auto& v : detail::sorted_entries(attack_dir))
					detail::add_video(root, v, subject, Label::spoof, attack, m.records);
			}
		}
	}
	std::sort(m.records.begin(), m.records.end(),
	          [](const SampleRecord& a, const SampleRecord& b) { return a.key() < b.key(); });
	std::map<std::string, std::string> video_owner;
	for (std::size_t i = 0; i < m.records.size(); ++i) {
		const auto& r = m.records[i];
		if (i > 0 && m.records[i - 1].key() == r.key())
			throw DuplicateRecordError("duplicate frame " + std::to_string(r.frame_index) + " in video " + r.video_id +
			                           " (" + m.records[i - 1].path + ", " + r.path + ")");
		auto [it, inserted] = video_owner.emplace(r.video_id, r.subject_id + "/" + to_string(r.label));
		if (!inserted && it->second != r.subject_id + "/" + to_string(r.label))
			throw DuplicateRecordError("video id " + r.video_id + " appears under both " + it->second + " and " +
			                           r.subject_id + "/" + to_string(r.label));
	}
	return m;
}

struct IngestStats {
	std::size_t videos = 0, frames = 0, crops = 0, skipped = 0;
};

/// Harvests face crops from a source tree with the crop-tree layout, where
/// each <video> is a video file or a directory of still frames.
inline IngestStats ingest(const fs::path& src, const fs::path& out, const CropSpec& spec, std::size_t stride) {
	spec.validate();
	if (!fs::is_directory(src)) throw IoError("source is not a directory: " + src.string());
	const auto detector = make_detector(spec.detector);
	IngestStats stats;
	auto harvest = [&](const fs::path& video, const fs::path& dest) {
		const std::string video_id = fs::is_directory(video) ? video.filename().string() : video.stem().string();
		const auto frames = extract_frames(video, stride);
		++stats.videos;
		for (std::size_t i = 0; i < frames.size(); ++i) {
			++stats.frames;
			const auto face = detect_and_crop(frames[i], spec, *detector, &stats.skipped);
			if (!face) {
				log::debug("no face in " + video.string() + " frame " + std::to_string(i * stride));
				continue;
			}
			save_png(dest / video_id / (std::to_string(i * stride) + ".png"), *face);
			++stats.crops;
		}
	};
	for (const auto& subject_dir : detail::sorted_entries(src)) {
		if (!fs::is_directory(subject_dir)) continue;
		const fs::path subject_out = out / subject_dir.filename();
		for (const auto& label_dir : detail::sorted_entries(subject_dir)) {
			const std::string label = label_dir.filename().string();
			if (label == "live") {
				for (const auto& v : detail::sorted_entries(label_dir)) harvest(v, subject_out / "live");
			} else if (label == "spoof") {
				for (const auto& attack_dir : detail::sorted_entries(label_dir)) {
					parse_attack_type(attack_dir.filename().string());
					for (const auto& v : detail::sorted_entries(attack_dir))
						harvest(v, subject_out / "spoof" / attack_dir.filename());
				}
			} else {
				throw ParseError("expected live/ or spoof/ under subject, found " + label_dir.string());
			}
		}
	}
	if (stats.skipped > 0)
		log::info("ingest skipped " + std::to_string(stats.skipped) + " of " + std::to_string(stats.frames) +
		          " frames without a detected face");
	return stats;
}

/// Video-atomic holdout. For each (subject, label) the videos are shuffled
/// and moved to train until train holds at least `train_fraction` of the
/// frames; the rest become test.
inline DatasetManifest split_holdout(DatasetManifest manifest, double train_fraction, std::uint64_t seed,
                                     std::vector<std::string>* warnings = nullptr) {
	FASUCM_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
	std::map<std::pair<std::string, Label>, std::map<std::string, std::size_t>> videos;
	for (const auto& r : manifest.records) ++videos[{r.subject_id, r.label}][r.video_id];
	std::map<std::string, Split> assignment;
	for (const auto& [group, frames_by_video] : videos) {
		const std::string tag = group.first + "/" + to_string(group.second);
		std::vector<std::string> ids;
		std::size_t total = 0;
		for (const auto& [v, n] : frames_by_video) {
			ids.push_back(v);
			total += n;
		}
		if (ids.size() == 1) {
			assignment[ids[0]] = Split::train;
			const std::string msg = tag + " has a single video; it goes to train and the test side is empty";
			log::warn(msg);
			if (warnings) warnings->push_back(msg);
			continue;
		}
		Rng rng(derive_seed(seed, "split/" + tag));
		rng.shuffle(ids);
		std::size_t train = 0;
		const double need = train_fraction * static_cast<double>(total) - 1e-9 * static_cast<double>(total);
		for (const auto& v : ids) {
			const bool to_train = static_cast<double>(train) < need;
			assignment[v] = to_train ? Split::train : Split::test;
			if (to_train) train += frames_by_video.at(v);
		}
	}
	for (auto& r : manifest.records) r.split = assignment.at(r.video_id);
	manifest.seed = seed;
	return manifest;
}

/// Per subject, a seeded uniform sample without replacement of
/// round(fraction * n) live train records, returned in manifest order.
inline std::vector<SampleRecord> sample_style_sources(const DatasetManifest& manifest, double fraction,
                                                      std::uint64_t seed,
                                                      std::vector<std::string>* warnings = nullptr) {
	FASUCM_REQUIRE(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
	std::map<std::string, std::vector<std::size_t>> pool;
	for (const auto& s : manifest.subjects()) pool[s];
	for (std::size_t i = 0; i < manifest.records.size(); ++i) {
		const auto& r = manifest.records[i];
		FASUCM_REQUIRE(r.split != Split::unassigned, "sample_style_sources needs a split manifest");
		if (r.label == Label::live && r.split == Split::train) pool[r.subject_id].push_back(i);
	}
	std::vector<std::size_t> chosen;
	for (auto& [subject, idx] : pool) {
		if (idx.empty()) {
			const std::string msg = "subject " + subject + " has no live training records; skipped";
			log::warn(msg);
			if (warnings) warnings->push_back(msg);
			continue;
		}
		const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
		Rng rng(derive_seed(seed, "style-sources/" + subject));
		for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
		chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<long>(k));
	}
	std::sort(chosen.begin(), chosen.end());
	std::vector<SampleRecord> out;
	out.reserve(chosen.size());
	for (auto i : chosen) out.push_back(manifest.records[i]);
	return out;
}

} // namespace fasucm::dataset
