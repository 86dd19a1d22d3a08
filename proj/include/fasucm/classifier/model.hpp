#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fasucm/core/hash.hpp"
#include "fasucm/core/log.hpp"
#include "fasucm/core/tensor_archive.hpp"
#include "fasucm/image/image.hpp"
#include "fasucm/nn/layers.hpp"
#include "fasucm/nn/optim.hpp"
#include "fasucm/nn/sequential.hpp"

namespace fasucm::classifier {

using Net = nn::Sequential<float>;

inline constexpr std::size_t live_index = 0;
inline constexpr std::size_t spoof_index = 1;

enum class Backbone { spoof_modnet, external_backbone };

inline std::string to_string(Backbone b) { return b == Backbone::spoof_modnet ? "spoof_modnet" : "external_backbone"; }
inline Backbone parse_backbone(const std::string& s) {
	if (s == "spoof_modnet") return Backbone::spoof_modnet;
	if (s == "external_backbone") return Backbone::external_backbone;
	throw ConfigError("unknown backbone '" + s + "' (expected spoof_modnet or external_backbone)");
}

struct TrainConfig {
	double learning_rate = 1e-4;
	std::size_t batch_size = 8;
	std::size_t epochs = 50;
	/// When non-zero, train for this many optimiser steps instead of `epochs`.
	std::size_t steps = 0;
	std::uint64_t seed = 0;
	double pool_dropout = 0.25;
	double dense_dropout = 0.5;
	bool augment = false;
	nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;
	double momentum = 0.9;
	/// External backbones only: also update the pretrained trunk.
	bool train_trunk = false;

	void validate() const {
		if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
		if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm needs batch statistics)");
		if (epochs == 0 && steps == 0) throw ConfigError("epochs must be positive");
		if (!(pool_dropout >= 0 && pool_dropout < 1) || !(dense_dropout >= 0 && dense_dropout < 1))
			throw ConfigError("dropout rates must lie in [0, 1)");
		if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
	}
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
	j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"epochs", c.epochs},
	     {"steps", c.steps},                 {"seed", c.seed},               {"pool_dropout", c.pool_dropout},
	     {"dense_dropout", c.dense_dropout}, {"augment", c.augment},         {"optimizer", nn::to_string(c.optimizer)},
	     {"momentum", c.momentum},           {"train_trunk", c.train_trunk}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
	c.learning_rate = j.at("learning_rate");
	c.batch_size = j.at("batch_size");
	c.epochs = j.at("epochs");
	c.steps = j.value("steps", std::size_t{0});
	c.seed = j.at("seed");
	c.pool_dropout = j.value("pool_dropout", 0.25);
	c.dense_dropout = j.value("dense_dropout", 0.5);
	c.augment = j.value("augment", false);
	c.optimizer = nn::optimizer_from_string(j.value("optimizer", "sgd"));
	c.momentum = j.value("momentum", 0.9);
	c.train_trunk = j.value("train_trunk", false);
}

/// Fine-tuning defaults for a pretrained external backbone.
inline TrainConfig external_finetune_defaults() {
	TrainConfig c;
	c.learning_rate = 0.01;
	c.batch_size = 100;
	c.steps = 4000;
	return c;
}

struct TrainFingerprint {
	std::string data_hash;
	TrainConfig config;
	std::uint64_t seed = 0;
	double final_loss = 0;
	std::vector<double> epoch_losses;
};

inline void to_json(nlohmann::json& j, const TrainFingerprint& f) {
	j = {{"data_hash", f.data_hash}, {"config", f.config},
	     {"seed", f.seed},           {"final_loss", f.final_loss},
	     {"epoch_losses", f.epoch_losses}};
}
inline void from_json(const nlohmann::json& j, TrainFingerprint& f) {
	f.data_hash = j.at("data_hash");
	f.config = j.at("config").get<TrainConfig>();
	f.seed = j.at("seed");
	f.final_loss = j.at("final_loss");
	f.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
}

struct Prediction {
	double p_live = 0, p_spoof = 0;
	/// Spoof when p_spoof >= threshold; equal probabilities resolve to spoof at 0.5.
	bool is_spoof(double threshold = 0.5) const { return p_spoof >= threshold; }
};

struct ClassifierModel {
	std::string subject_id;
	Backbone backbone = Backbone::spoof_modnet;
	std::size_t input_size = 32;
	Net net{"classifier"};
	/// Layer description of an external trunk (empty for Spoof-ModNet).
	nlohmann::json descriptor;
	TrainFingerprint fingerprint;

	std::string checksum() const {
		TensorArchive a;
		net.export_to(a);
		return a.checksum();
	}
};

// ---- architecture --------------------------------------------------------

/// Spoof-ModNet. Layer names follow the reference layer table; convolutions
/// use "same" zero padding and the final dense maps 64 features to 2 logits.
inline Net spoof_modnet_layers(double pool_dropout = 0.25, double dense_dropout = 0.5) {
	Net net("spoof_modnet");
	auto block = [&](int index, std::size_t in, std::size_t out) {
		const auto i = std::to_string(index);
		net.add<nn::Conv2d<float>>("conv2d_" + i, in, out, 3);
		net.add<nn::Relu<float>>("activation_" + i);
		net.add<nn::BatchNorm<float>>("batch_norm_" + i, out);
	};
	block(1, 3, 16);
	block(2, 16, 16);
	net.add<nn::MaxPool2<float>>("max_pool2d_1");
	net.add<nn::Dropout<float>>("dropout_1", pool_dropout);
	block(3, 16, 32);
	block(4, 32, 32);
	net.add<nn::MaxPool2<float>>("max_pool2d_2");
	net.add<nn::Dropout<float>>("dropout_2", pool_dropout);
	net.add<nn::Flatten<float>>("flatten_1");
	net.add<nn::Dense<float>>("dense_1", 2048, 64);
	net.add<nn::Relu<float>>("activation_5");
	net.add<nn::BatchNorm<float>>("batch_norm_5", 64);
	net.add<nn::Dropout<float>>("dropout_3", dense_dropout);
	net.add<nn::Dense<float>>("dense_2", 64, 2);
	net.add<nn::Softmax<float>>("activation_6");
	return net;
}

inline void initialize(Net& net, std::uint64_t seed) {
	Rng rng(seed);
	for (std::size_t i = 0; i < net.size(); ++i) {
		if (auto* conv = dynamic_cast<nn::Conv2d<float>*>(&net.layer(i))) conv->initialize(rng);
		if (auto* dense = dynamic_cast<nn::Dense<float>*>(&net.layer(i))) dense->initialize(rng);
	}
}

inline ClassifierModel build_spoof_modnet(std::uint64_t seed, const TrainConfig& config = {}) {
	ClassifierModel m;
	m.net = spoof_modnet_layers(config.pool_dropout, config.dense_dropout);
	initialize(m.net, seed);
	m.fingerprint.config = config;
	m.fingerprint.seed = seed;
	return m;
}

struct LayerAudit {
	std::string name;
	std::string kind;
	Shape output;
	std::size_t params = 0;
};

/// Per-layer output shape and parameter count (running statistics included)
/// for a single (1, 3, size, size) input.
inline std::vector<LayerAudit> audit(const Net& net, std::size_t input_size) {
	std::vector<LayerAudit> rows;
	Shape s{1, 3, input_size, input_size};
	for (std::size_t i = 0; i < net.size(); ++i) {
		s = net.layer(i).output_shape(s);
		rows.push_back({net.layer(i).name(), net.layer(i).kind(), s, net.layer(i).parameter_count()});
	}
	return rows;
}

// ---- external backbone ---------------------------------------------------

/// Builds a trunk from a JSON layer list, e.g.
///   {"name": "...", "input_size": 224, "layers": [
///     {"type": "conv", "name": "c1", "in": 3, "out": 16, "kernel": 3, "stride": 2},
///     {"type": "relu"}, {"type": "batch_norm", "channels": 16}, {"type": "maxpool"},
///     {"type": "dropout", "rate": 0.2}, {"type": "gap"}, {"type": "flatten"},
///     {"type": "dense", "in": 16, "out": 8}]}
/// The trunk output must be (n, features, 1, 1).
inline Net trunk_from_descriptor(const nlohmann::json& d) {
	Net net("trunk");
	if (!d.contains("layers") || !d["layers"].is_array()) throw ConfigError("backbone descriptor needs a layers array");
	std::size_t k = 0;
	for (const auto& l : d["layers"]) {
		const std::string type = l.at("type");
		const std::string name = l.value("name", type + "_" + std::to_string(++k));
		if (type == "conv")
			net.add<nn::Conv2d<float>>(name, l.at("in"), l.at("out"), l.at("kernel"), l.value("stride", 1));
		else if (type == "relu")
			net.add<nn::Relu<float>>(name);
		else if (type == "batch_norm")
			net.add<nn::BatchNorm<float>>(name, l.at("channels").get<std::size_t>());
		else if (type == "maxpool")
			net.add<nn::MaxPool2<float>>(name);
		else if (type == "dropout")
			net.add<nn::Dropout<float>>(name, l.at("rate").get<double>());
		else if (type == "gap")
			net.add<nn::GlobalAvgPool<float>>(name);
		else if (type == "flatten")
			net.add<nn::Flatten<float>>(name);
		else if (type == "dense")
			net.add<nn::Dense<float>>(name, l.at("in"), l.at("out"));
		else
			throw ConfigError("unknown backbone layer type '" + type + "'");
	}
	return net;
}

/// Loads a pretrained trunk and appends a fresh two-way head ("head").
inline ClassifierModel attach_external_backbone(const nlohmann::json& descriptor,
                                                const std::filesystem::path& pretrained_weights, std::uint64_t seed,
                                                const TrainConfig& config = external_finetune_defaults()) {
	if (!std::filesystem::exists(pretrained_weights))
		throw ConfigError("pretrained backbone weights not found: " + pretrained_weights.string());
	ClassifierModel m;
	m.backbone = Backbone::external_backbone;
	m.descriptor = descriptor;
	m.input_size = descriptor.value("input_size", std::size_t{224});
	Net trunk = trunk_from_descriptor(descriptor);
	try {
		trunk.import_from(TensorArchive::load(pretrained_weights));
	} catch (const ParseError& e) {
		throw ConfigError("pretrained weights " + pretrained_weights.string() + ": " + e.what());
	}
	const Shape features = trunk.output_shape({1, 3, m.input_size, m.input_size});
	if (features.h != 1 || features.w != 1)
		throw ConfigError("backbone trunk must end in a (features, 1, 1) map, got " + features.str());
	m.net = Net("classifier");
	m.net.append(std::make_unique<Net>(std::move(trunk)));
	Rng rng(seed);
	m.net.add<nn::Dense<float>>("head", features.c, 2).initialize(rng);
	m.net.add<nn::Softmax<float>>("head_softmax");
	m.fingerprint.config = config;
	m.fingerprint.seed = seed;
	return m;
}

// ---- data ----------------------------------------------------------------

/// Bilinear resize of a face crop to the classifier input, values in [0, 1].
inline ImageBuffer preprocess(const ImageBuffer& face, std::size_t size = 32) {
	FASUCM_REQUIRE(!face.empty(), "preprocess of an empty image");
	ImageBuffer out = face.height() == size && face.width() == size ? face : resize_bilinear(face, size, size);
	out.clamp();
	return out;
}

/// Preprocessed images with labels (0 live, 1 spoof).
struct LabeledSet {
	std::vector<ImageBuffer> images;
	std::vector<std::size_t> labels;

	void add(ImageBuffer image, std::size_t label) {
		images.push_back(std::move(image));
		labels.push_back(label);
	}
	std::size_t size() const { return images.size(); }

	std::string hash() const {
		Sha256 h;
		for (std::size_t i = 0; i < images.size(); ++i) {
			const std::uint64_t meta[3] = {images[i].height(), images[i].width(), labels[i]};
			h.update(meta, sizeof meta);
			h.update(images[i].values());
		}
		return h.hex();
	}
};

inline Tensor<float> stack(const std::vector<const ImageBuffer*>& images) {
	const auto& first = *images.front();
	Tensor<float> t(images.size(), 3, first.height(), first.width());
	for (std::size_t i = 0; i < images.size(); ++i) {
		FASUCM_REQUIRE(images[i]->height() == first.height() && images[i]->width() == first.width(),
		               "batch images must share one size");
		std::copy(images[i]->values().begin(), images[i]->values().end(), t.sample(i));
	}
	return t;
}

inline ImageBuffer mirror(const ImageBuffer& img) {
	ImageBuffer out(img.height(), img.width());
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 0; y < img.height(); ++y)
			for (std::size_t x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
	return out;
}

// ---- training ------------------------------------------------------------

/// Mean cross-entropy of logits against labels and its gradient w.r.t. the logits.
inline double cross_entropy(const Tensor<float>& logits, const std::vector<std::size_t>& labels, Tensor<float>* grad) {
	const std::size_t n = logits.shape().n, k = logits.shape().sample();
	if (grad) *grad = Tensor<float>(logits.shape());
	double total = 0;
	for (std::size_t i = 0; i < n; ++i) {
		const float* z = logits.sample(i);
		const double peak = *std::max_element(z, z + k);
		double denom = 0;
		for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - peak);
		total -= (z[labels[i]] - peak) - std::log(denom);
		if (!grad) continue;
		for (std::size_t j = 0; j < k; ++j) {
			const double p = std::exp(z[j] - peak) / denom;
			grad->sample(i)[j] = static_cast<float>((p - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n));
		}
	}
	return total / static_cast<double>(n);
}

class ClassifierDivergenceError : public DivergenceError {
public:
	ClassifierDivergenceError(std::size_t epoch, std::vector<double> trace)
	    : DivergenceError("classifier loss became non-finite in epoch " + std::to_string(epoch), epoch),
	      trace_(std::move(trace)) {}
	const std::vector<double>& trace() const { return trace_; }

private:
	std::vector<double> trace_;
};

namespace detail {

/// Index of the first layer that is trained: 0 for Spoof-ModNet or a
/// trainable trunk, the head otherwise.
inline std::size_t first_trained(const ClassifierModel& m, const TrainConfig& c) {
	return m.backbone == Backbone::external_backbone && !c.train_trunk ? 1 : 0;
}

} // namespace detail

/// Minimises two-class cross-entropy over `data`. Epoch order is reshuffled
/// from the seed; a trailing batch of one sample is dropped because batch
/// statistics are undefined for it.
inline void train(ClassifierModel& model, const LabeledSet& data, const TrainConfig& config) {
	config.validate();
	FASUCM_REQUIRE(data.size() > 0, "training set is empty");
	const bool has_live = std::count(data.labels.begin(), data.labels.end(), live_index) > 0;
	const bool has_spoof = std::count(data.labels.begin(), data.labels.end(), spoof_index) > 0;
	FASUCM_REQUIRE(has_live && has_spoof, "training needs both live and spoof samples");
	for (const auto& img : data.images)
		FASUCM_REQUIRE(img.height() == model.input_size && img.width() == model.input_size,
		               "training images must be preprocessed to " + std::to_string(model.input_size) + " px");

	const std::size_t logits_stop = model.net.size() - 1;
	const std::size_t start = detail::first_trained(model, config);

	// A frozen trunk is evaluated once; training then runs on its features.
	std::vector<Tensor<float>> frozen;
	if (start > 0) {
		for (const auto& img : data.images)
			frozen.push_back(model.net.forward_range(img.to_tensor<float>(), {}, nullptr, start));
	}

	std::vector<nn::Param<float>*> trained;
	for (std::size_t i = start; i < logits_stop; ++i)
		for (auto* p : model.net.layer(i).params()) trained.push_back(p);
	nn::OptimizerSettings settings;
	settings.kind = config.optimizer;
	settings.learning_rate = config.learning_rate;
	settings.momentum = config.momentum;
	nn::Optimizer<float> optimizer(trained, settings);

	Rng order_rng(derive_seed(config.seed, "classifier-order"));
	Rng dropout_rng(derive_seed(config.seed, "classifier-dropout"));
	Rng augment_rng(derive_seed(config.seed, "classifier-augment"));
	const nn::Pass pass{nn::Phase::training, &dropout_rng};

	std::vector<std::size_t> order(data.size());
	std::vector<double> epoch_losses;
	std::size_t steps = 0;
	const std::size_t target_steps = config.steps;
	for (std::size_t epoch = 0; target_steps > 0 ? steps < target_steps : epoch < config.epochs; ++epoch) {
		for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
		order_rng.shuffle(order);
		double loss_sum = 0;
		std::size_t batches = 0;
		for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
			if (target_steps > 0 && steps == target_steps) break;
			const std::size_t end = std::min(order.size(), b + config.batch_size);
			if (end - b < 2) break;
			std::vector<std::size_t> labels;
			Tensor<float> x;
			if (start > 0) {
				const Shape f = frozen.front().shape();
				x = Tensor<float>(end - b, f.c, f.h, f.w);
				for (std::size_t i = b; i < end; ++i) {
					std::copy_n(frozen[order[i]].data(), f.sample(), x.sample(i - b));
					labels.push_back(data.labels[order[i]]);
				}
			} else {
				std::vector<ImageBuffer> flipped;
				flipped.reserve(end - b);
				std::vector<const ImageBuffer*> batch;
				for (std::size_t i = b; i < end; ++i) {
					const ImageBuffer* img = &data.images[order[i]];
					if (config.augment && augment_rng.uniform() < 0.5) {
						flipped.push_back(mirror(*img));
						img = &flipped.back();
					}
					batch.push_back(img);
					labels.push_back(data.labels[order[i]]);
				}
				x = stack(batch);
			}
			nn::Cache<float> cache;
			cache.nested.resize(logits_stop);
			Tensor<float> h = x;
			for (std::size_t i = start; i < logits_stop; ++i) h = model.net.layer(i).forward(h, pass, &cache.nested[i]);
			Tensor<float> dlogits;
			const double loss = cross_entropy(h, labels, &dlogits);
			loss_sum += loss;
			++batches;
			if (!std::isfinite(loss)) {
				epoch_losses.push_back(loss);
				throw ClassifierDivergenceError(epoch, epoch_losses);
			}
			nn::Gradients<float> grads;
			for (std::size_t i = logits_stop; i-- > start;)
				dlogits = model.net.layer(i).backward(dlogits, cache.nested[i], &grads, i > start);
			optimizer.step(grads);
			for (std::size_t i = start; i < logits_stop; ++i) model.net.layer(i).absorb(cache.nested[i]);
			++steps;
		}
		if (batches == 0) break;
		epoch_losses.push_back(loss_sum / static_cast<double>(batches));
		log::debug("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(epoch_losses.back()));
	}
	model.fingerprint.data_hash = data.hash();
	model.fingerprint.config = config;
	model.fingerprint.seed = config.seed;
	model.fingerprint.epoch_losses = epoch_losses;
	model.fingerprint.final_loss = epoch_losses.empty() ? 0.0 : epoch_losses.back();
}

/// Class probabilities for one face crop (any size; it is preprocessed here).
inline Prediction predict(const ClassifierModel& model, const ImageBuffer& face) {
	const auto x = preprocess(face, model.input_size).to_tensor<float>();
	const auto logits = model.net.forward_range(x, {}, nullptr, model.net.size() - 1);
	const double a = logits[live_index], b = logits[spoof_index];
	const double peak = std::max(a, b);
	const double ea = std::exp(a - peak), eb = std::exp(b - peak);
	return {ea / (ea + eb), eb / (ea + eb)};
}

/// Fraction of `data` whose argmax decision matches its label.
inline double accuracy(const ClassifierModel& model, const LabeledSet& data) {
	std::size_t correct = 0;
	for (std::size_t i = 0; i < data.size(); ++i)
		correct += (predict(model, data.images[i]).is_spoof() ? spoof_index : live_index) == data.labels[i];
	return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

// ---- persistence ---------------------------------------------------------

/// Writes `<stem>.fta` and `<stem>.json`; returns the sidecar path.
inline std::filesystem::path save_classifier(const ClassifierModel& m, const std::filesystem::path& dir,
                                             const std::string& stem,
                                             const nlohmann::json& extra = nlohmann::json::object()) {
	std::filesystem::create_directories(dir);
	TensorArchive archive;
	m.net.export_to(archive);
	archive.save(dir / (stem + ".fta"));
	nlohmann::json j = {{"subject_id", m.subject_id},   {"backbone", to_string(m.backbone)},
	                    {"input_size", m.input_size},   {"descriptor", m.descriptor},
	                    {"config", m.fingerprint.config}, {"seed", m.fingerprint.seed},
	                    {"fingerprint", m.fingerprint}, {"archive", stem + ".fta"},
	                    {"checksum", archive.checksum()}};
	for (auto& [k, v] : extra.items()) j[k] = v;
	const auto sidecar = dir / (stem + ".json");
	std::ofstream out(sidecar);
	if (!out) throw IoError("cannot write " + sidecar.string());
	out << j.dump(1) << '\n';
	return sidecar;
}

inline ClassifierModel load_classifier(std::filesystem::path path) {
	if (path.extension() == ".fta") path.replace_extension(".json");
	if (!std::filesystem::exists(path)) throw ConfigError("classifier model not found: " + path.string());
	ClassifierModel m;
	std::string archive_name, checksum;
	try {
		std::ifstream in(path);
		const auto j = nlohmann::json::parse(in);
		m.subject_id = j.at("subject_id");
		m.backbone = parse_backbone(j.at("backbone"));
		m.input_size = j.at("input_size");
		m.descriptor = j.at("descriptor");
		m.fingerprint = j.at("fingerprint").get<TrainFingerprint>();
		archive_name = j.at("archive");
		checksum = j.value("checksum", "");
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	const auto& c = m.fingerprint.config;
	if (m.backbone == Backbone::spoof_modnet) {
		m.net = spoof_modnet_layers(c.pool_dropout, c.dense_dropout);
	} else {
		m.net = Net("classifier");
		Net trunk = trunk_from_descriptor(m.descriptor);
		const Shape f = trunk.output_shape({1, 3, m.input_size, m.input_size});
		m.net.append(std::make_unique<Net>(std::move(trunk)));
		m.net.add<nn::Dense<float>>("head", f.c, 2);
		m.net.add<nn::Softmax<float>>("head_softmax");
	}
	const auto archive = TensorArchive::load(path.parent_path() / archive_name);
	m.net.import_from(archive);
	if (!checksum.empty() && checksum != archive.checksum())
		throw ConfigError("classifier checksum mismatch for " + path.string());
	return m;
}

} // namespace fasucm::classifier
