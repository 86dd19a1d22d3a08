#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fasucm/classifier/model.hpp"
#include "fasucm/dataset/records.hpp"
#include "fasucm/metrics/metrics.hpp"
#include "fasucm/synth/synth.hpp"

namespace fasucm::classifier {

using dataset::Label;
using dataset::Split;

/// Live train frames of the subject plus its synthetic spoofs. Real spoof
/// train frames are added only when `real_spoofs` is set (ablation).
inline LabeledSet subject_training_set(const dataset::DatasetManifest& manifest, const std::string& subject,
                                       const synth::SyntheticSpoofSet* synthetic, bool real_spoofs,
                                       std::size_t input_size) {
	LabeledSet data;
	for (const auto& r : manifest.records) {
		if (r.subject_id != subject || r.split != Split::train) continue;
		if (r.label == Label::live)
			data.add(preprocess(load_image(manifest.absolute(r)), input_size), live_index);
		else if (real_spoofs)
			data.add(preprocess(load_image(manifest.absolute(r)), input_size), spoof_index);
	}
	if (synthetic)
		for (const auto& item : synthetic->items)
			data.add(preprocess(load_image(synthetic->root / item.path), input_size), spoof_index);
	return data;
}

/// Builds the backbone, trains it on the subject's set and tags the model.
inline ClassifierModel train_subject_model(const std::string& subject, const LabeledSet& data,
                                           const TrainConfig& config, Backbone backbone = Backbone::spoof_modnet,
                                           const std::optional<std::pair<nlohmann::json, std::filesystem::path>>&
                                               external = std::nullopt) {
	ClassifierModel model;
	if (backbone == Backbone::spoof_modnet) {
		model = build_spoof_modnet(config.seed, config);
	} else {
		if (!external) throw ConfigError("external backbone needs a descriptor and a weights file");
		model = attach_external_backbone(external->first, external->second, config.seed, config);
	}
	model.subject_id = subject;
	train(model, data, config);
	return model;
}

/// Scores every test frame of the subject, live and real spoof.
inline std::vector<metrics::ScoreRecord> score_subject(const ClassifierModel& model,
                                                       const dataset::DatasetManifest& manifest,
                                                       const std::string& subject, double threshold) {
	std::vector<metrics::ScoreRecord> out;
	for (const auto& r : manifest.records) {
		if (r.subject_id != subject || r.split != Split::test) continue;
		const auto p = predict(model, preprocess(load_image(manifest.absolute(r)), model.input_size));
		out.push_back({r.subject_id, r.video_id, r.frame_index, r.label, p.p_spoof, metrics::decide(p.p_spoof, threshold)});
	}
	return out;
}

} // namespace fasucm::classifier
