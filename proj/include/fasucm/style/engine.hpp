#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fasucm/core/hash.hpp"
#include "fasucm/core/log.hpp"
#include "fasucm/core/random.hpp"
#include "fasucm/image/image.hpp"
#include "fasucm/nn/optim.hpp"
#include "fasucm/style/losses.hpp"
#include "fasucm/style/transform_net.hpp"

namespace fasucm::style {

struct StyleReference {
	std::string style_id;
	ImageBuffer image;
	std::string attack_type;
};

struct StyleTrainConfig {
	std::size_t iterations = 40000;
	std::size_t batch_size = 4;
	double learning_rate = 1e-3;
	std::uint64_t seed = 0;
	/// Corpus images and the reference are resized to image_size x image_size.
	std::size_t image_size = 256;
	std::size_t checkpoint_every = 100;
	TransformNetConfig net;
	LossLayers layers;
};

inline void to_json(nlohmann::json& j, const StyleTrainConfig& c) {
	j = {{"iterations", c.iterations},
	     {"batch_size", c.batch_size},
	     {"learning_rate", c.learning_rate},
	     {"seed", c.seed},
	     {"image_size", c.image_size},
	     {"checkpoint_every", c.checkpoint_every},
	     {"residual_blocks", c.net.residual_blocks},
	     {"base_channels", c.net.base_channels},
	     {"content_layer", c.layers.content},
	     {"style_layers", c.layers.style}};
}
inline void from_json(const nlohmann::json& j, StyleTrainConfig& c) {
	c.iterations = j.at("iterations");
	c.batch_size = j.at("batch_size");
	c.learning_rate = j.at("learning_rate");
	c.seed = j.at("seed");
	c.image_size = j.at("image_size");
	c.checkpoint_every = j.value("checkpoint_every", std::size_t{100});
	c.net.residual_blocks = j.at("residual_blocks");
	c.net.base_channels = j.at("base_channels");
	c.layers.content = j.at("content_layer");
	c.layers.style = j.at("style_layers").get<std::vector<std::string>>();
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
	j = {{"content", w.content}, {"style", w.style}, {"tv", w.tv}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
	w.content = j.at("content");
	w.style = j.at("style");
	w.tv = j.at("tv");
}

/// One recorded training iteration.
struct LossPoint {
	std::size_t iteration = 0;
	double total = 0, content = 0, style = 0, tv = 0;
};

inline void to_json(nlohmann::json& j, const LossPoint& p) {
	j = {{"iteration", p.iteration}, {"total", p.total}, {"content", p.content}, {"style", p.style}, {"tv", p.tv}};
}
inline void from_json(const nlohmann::json& j, LossPoint& p) {
	p.iteration = j.at("iteration");
	p.total = j.at("total");
	p.content = j.at("content");
	p.style = j.at("style");
	p.tv = j.at("tv");
}

/// A trained, immutable feed-forward style model.
struct StyleModel {
	std::string style_id;
	std::string attack_type;
	TransformNet<float> transform;
	StyleTrainConfig config;
	LossWeights weights;
	ImageBuffer reference; // resized reference, kept so style grams can be rebuilt
	std::string corpus_hash;
	std::string extractor_checksum;
	std::vector<LossPoint> loss_trace; // one entry per iteration

	/// SHA-256 over the transform weights.
	std::string checksum() const {
		TensorArchive a;
		transform.network().export_to(a);
		return a.checksum();
	}

	/// Loss entries at multiples of config.checkpoint_every (and the last one).
	std::vector<LossPoint> checkpoints() const {
		std::vector<LossPoint> out;
		for (const auto& p : loss_trace)
			if (p.iteration % std::max<std::size_t>(config.checkpoint_every, 1) == 0 || &p == &loss_trace.back())
				out.push_back(p);
		return out;
	}
};

/// Raised when training produces a non-finite loss; carries the model as of
/// the last checkpoint whose loss was finite.
class StyleDivergenceError : public DivergenceError {
public:
	StyleDivergenceError(std::size_t step, StyleModel checkpoint)
	    : DivergenceError("style training loss became non-finite at iteration " + std::to_string(step), step),
	      checkpoint_(std::move(checkpoint)) {}
	const StyleModel& checkpoint() const { return checkpoint_; }

private:
	StyleModel checkpoint_;
};

/// SHA-256 over the (resized) corpus pixels, in order.
inline std::string corpus_hash(const std::vector<ImageBuffer>& corpus) {
	Sha256 h;
	for (const auto& img : corpus) {
		const std::uint64_t dims[2] = {img.height(), img.width()};
		h.update(dims, sizeof dims);
		h.update(img.values());
	}
	return h.hex();
}

inline ImageBuffer fit_square(const ImageBuffer& img, std::size_t size) {
	if (img.height() == size && img.width() == size) return img;
	return resize_bilinear(img, size, size);
}

/// Trains a transform net so that its outputs minimise
/// alpha * content(out, input) + beta * style(out, ref) + gamma * tv(out).
/// Minibatches cycle through reshuffled epochs of the corpus. Deterministic
/// for a fixed seed, corpus order and config.
inline StyleModel train_style_model(const StyleReference& ref, const std::vector<ImageBuffer>& corpus,
                                    const LossWeights& weights, const StyleTrainConfig& config,
                                    const perceptual::FeatureExtractor<float>& fx) {
	if (corpus.empty()) throw EmptyInputError("style training corpus is empty");
	weights.validate();
	FASUCM_REQUIRE(config.batch_size >= 1, "batch_size must be >= 1");
	FASUCM_REQUIRE(config.image_size % TransformNet<float>::total_stride == 0 && config.image_size >= 32,
	               "image_size must be >= 32 and a multiple of 4");

	StyleModel model{ref.style_id, ref.attack_type, TransformNet<float>(config.net), config, weights,
	                 fit_square(ref.image, config.image_size), "", fx.checksum(), {}};
	std::vector<ImageBuffer> images;
	images.reserve(corpus.size());
	for (const auto& img : corpus) images.push_back(fit_square(img, config.image_size));
	model.corpus_hash = corpus_hash(images);

	Rng rng(derive_seed(config.seed, "style-init"));
	model.transform.initialize(rng);
	Rng order_rng(derive_seed(config.seed, "style-order"));

	StyleGrams<float> grams;
	if (weights.style > 0) grams = style_grams(fx, model.reference.to_tensor<float>(), config.layers.style);
	const PerceptualLoss<float> loss(fx, config.layers, weights, std::move(grams));

	// Content targets are fixed per corpus image; cache them when they fit.
	const std::size_t feature_bytes = 256 * (config.image_size / 4) * (config.image_size / 4) * sizeof(float);
	const bool cache_targets = weights.content > 0 && images.size() * feature_bytes <= (std::size_t{1} << 30);
	std::vector<Tensor<float>> targets(cache_targets ? images.size() : 0);

	nn::OptimizerSettings opt_settings;
	opt_settings.kind = nn::OptimizerKind::adam;
	opt_settings.learning_rate = config.learning_rate;
	auto params = model.transform.network().params();
	nn::Optimizer<float> optimizer(params, opt_settings);

	std::vector<std::size_t> order(images.size());
	std::size_t cursor = order.size();
	StyleModel last_good = model;
	const std::size_t width = config.image_size;
	for (std::size_t it = 1; it <= config.iterations; ++it) {
		Tensor<float> batch(config.batch_size, 3, width, width);
		Tensor<float> target;
		std::vector<Tensor<float>> target_parts;
		for (std::size_t b = 0; b < config.batch_size; ++b) {
			if (cursor == order.size()) {
				for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
				order_rng.shuffle(order);
				cursor = 0;
			}
			const std::size_t idx = order[cursor++];
			const auto src = images[idx].values();
			std::copy(src.begin(), src.end(), batch.sample(b));
			if (cache_targets) {
				if (targets[idx].empty()) targets[idx] = loss.content_target(images[idx].to_tensor<float>());
				target_parts.push_back(targets[idx]);
			}
		}
		if (weights.content > 0)
			target = cache_targets ? stack<float>(target_parts) : loss.content_target(batch);

		nn::Cache<float> cache;
		const Tensor<float> out = model.transform.forward(batch, &cache);
		const auto ev = loss.evaluate(out, target, true);
		const LossPoint point{it, ev.total, ev.content, ev.style, ev.tv};
		if (!std::isfinite(point.total)) {
			log::error("style '" + ref.style_id + "' diverged at iteration " + std::to_string(it));
			throw StyleDivergenceError(it, std::move(last_good));
		}
		nn::Gradients<float> grads;
		model.transform.backward(ev.grad, cache, grads);
		optimizer.step(grads);
		model.loss_trace.push_back(point);
		if (it % std::max<std::size_t>(config.checkpoint_every, 1) == 0) {
			last_good = model;
			log::debug("style '" + ref.style_id + "' iteration " + std::to_string(it) +
			           " loss " + std::to_string(point.total));
		}
	}
	return model;
}

/// Applies a style model. Inputs whose sides are not multiples of the net's
/// stride are reflect-padded and the result is cropped back.
inline ImageBuffer stylize(const StyleModel& model, const ImageBuffer& x) {
	FASUCM_REQUIRE(x.height() >= 32 && x.width() >= 32, "stylize input must be at least 32x32");
	constexpr std::size_t s = TransformNet<float>::total_stride;
	const std::size_t H = x.height(), W = x.width();
	const std::size_t Hp = (H + s - 1) / s * s, Wp = (W + s - 1) / s * s;
	Tensor<float> in(1, 3, Hp, Wp);
	auto reflect = [](std::size_t i, std::size_t n) { return i < n ? i : 2 * (n - 1) - i; };
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 0; y < Hp; ++y)
			for (std::size_t xx = 0; xx < Wp; ++xx) in.at(0, c, y, xx) = x.at(c, reflect(y, H), reflect(xx, W));
	const Tensor<float> out = model.transform.forward(in);
	ImageBuffer result(H, W);
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 0; y < H; ++y)
			for (std::size_t xx = 0; xx < W; ++xx) result.at(c, y, xx) = std::clamp(out.at(0, c, y, xx), 0.0f, 1.0f);
	return result;
}

struct DirectConfig {
	std::size_t steps = 500;
	double learning_rate = 0.01;
	LossLayers layers;
};

struct DirectResult {
	ImageBuffer image;
	std::vector<LossPoint> trace; // trace[k] is the loss before step k+1; the last entry is the final image
};

class DirectDivergenceError : public DivergenceError {
public:
	DirectDivergenceError(std::size_t step, std::vector<LossPoint> trace)
	    : DivergenceError("direct optimisation loss became non-finite at step " + std::to_string(step), step),
	      trace_(std::move(trace)) {}
	const std::vector<LossPoint>& trace() const { return trace_; }

private:
	std::vector<LossPoint> trace_;
};

/// Optimises the pixels of a working image, initialised at `content`, on the
/// same total loss the style models are trained on. Adam steps; pixels are
/// projected back onto [0, 1] after every step.
inline DirectResult optimize_direct(const ImageBuffer& content, const StyleReference& ref, const LossWeights& weights,
                                    const DirectConfig& config, const perceptual::FeatureExtractor<float>& fx) {
	weights.validate();
	StyleGrams<float> grams;
	if (weights.style > 0) grams = style_grams(fx, ref.image.to_tensor<float>(), config.layers.style);
	const PerceptualLoss<float> loss(fx, config.layers, weights, std::move(grams));
	const Tensor<float> x0 = content.to_tensor<float>();
	Tensor<float> target;
	if (weights.content > 0) target = loss.content_target(x0);

	nn::Param<float> pixels{"pixels", x0};
	nn::OptimizerSettings settings;
	settings.kind = nn::OptimizerKind::adam;
	settings.learning_rate = config.learning_rate;
	nn::Optimizer<float> optimizer({&pixels}, settings);

	DirectResult result;
	for (std::size_t step = 0; step <= config.steps; ++step) {
		const bool last = step == config.steps;
		const auto ev = loss.evaluate(pixels.value, target, !last);
		result.trace.push_back({step, ev.total, ev.content, ev.style, ev.tv});
		if (!std::isfinite(ev.total)) throw DirectDivergenceError(step, std::move(result.trace));
		if (last) break;
		nn::Gradients<float> grads;
		grads.of(pixels) = ev.grad;
		optimizer.step(grads);
		for (auto& v : pixels.value.values()) v = std::clamp(v, 0.0f, 1.0f);
	}
	result.image = ImageBuffer::from_tensor(pixels.value);
	return result;
}

/// Total loss of a single image under the configuration of `model`.
inline double perceptual_total(const ImageBuffer& image, const ImageBuffer& content, const ImageBuffer& reference,
                               const LossWeights& weights, const LossLayers& layers,
                               const perceptual::FeatureExtractor<float>& fx) {
	StyleGrams<float> grams;
	if (weights.style > 0) grams = style_grams(fx, reference.to_tensor<float>(), layers.style);
	const PerceptualLoss<float> loss(fx, layers, weights, std::move(grams));
	Tensor<float> target;
	if (weights.content > 0) target = loss.content_target(content.to_tensor<float>());
	return loss.evaluate(image.to_tensor<float>(), target, false).total;
}

// ---- persistence ---------------------------------------------------------

inline std::filesystem::path style_model_archive(const std::filesystem::path& dir, const std::string& style_id) {
	return dir / (style_id + ".fta");
}
inline std::filesystem::path style_model_sidecar(const std::filesystem::path& dir, const std::string& style_id) {
	return dir / (style_id + ".json");
}

/// Writes `<style_id>.fta` (weights + reference) and `<style_id>.json`.
/// Returns the sidecar path.
inline std::filesystem::path save_style_model(const StyleModel& model, const std::filesystem::path& dir,
                                              const nlohmann::json& extra = nlohmann::json::object()) {
	std::filesystem::create_directories(dir);
	TensorArchive archive;
	model.transform.network().export_to(archive);
	archive.put("reference", model.reference.to_tensor<float>());
	const auto archive_path = style_model_archive(dir, model.style_id);
	archive.save(archive_path);
	nlohmann::json j = {{"style_id", model.style_id},
	                    {"attack_type", model.attack_type},
	                    {"config", model.config},
	                    {"weights", model.weights},
	                    {"loss_trace", model.loss_trace},
	                    {"corpus_hash", model.corpus_hash},
	                    {"seed", model.config.seed},
	                    {"extractor_checksum", model.extractor_checksum},
	                    {"archive", archive_path.filename().string()},
	                    {"checksum", model.checksum()}};
	for (auto& [k, v] : extra.items()) j[k] = v;
	const auto sidecar = style_model_sidecar(dir, model.style_id);
	std::ofstream(sidecar) << j.dump(1) << '\n';
	return sidecar;
}

/// Loads a model from its sidecar (`.json`) or archive (`.fta`) path.
inline StyleModel load_style_model(std::filesystem::path path) {
	if (path.extension() == ".fta") path.replace_extension(".json");
	if (!std::filesystem::exists(path)) throw ConfigError("style model not found: " + path.string());
	nlohmann::json j;
	try {
		std::ifstream in(path);
		j = nlohmann::json::parse(in);
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	StyleModel m;
	try {
		m.style_id = j.at("style_id");
		m.attack_type = j.at("attack_type");
		m.config = j.at("config").get<StyleTrainConfig>();
		m.weights = j.at("weights").get<LossWeights>();
		m.loss_trace = j.at("loss_trace").get<std::vector<LossPoint>>();
		m.corpus_hash = j.at("corpus_hash");
		m.extractor_checksum = j.value("extractor_checksum", "");
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	m.transform = TransformNet<float>(m.config.net);
	const auto archive = TensorArchive::load(path.parent_path() / j.value("archive", m.style_id + ".fta"));
	m.transform.network().import_from(archive);
	if (!archive.contains("reference")) throw ParseError("missing tensor 'reference'");
	m.reference = ImageBuffer::from_tensor(archive.get("reference"));
	if (j.contains("checksum") && j["checksum"] != m.checksum())
		throw ConfigError("style model checksum mismatch for " + path.string());
	return m;
}

} // namespace fasucm::style
