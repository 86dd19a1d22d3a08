#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/core/tensor_archive.hpp"
#include "fasucm/nn/layers.hpp"
#include "fasucm/nn/sequential.hpp"

namespace fasucm::perceptual {

enum class LayerKind { conv3x3_relu, maxpool2x2 };

struct LayerSpec {
	std::string name; // "conv3_1" or "pool3"
	LayerKind kind;
	std::size_t channels;
};

/// The VGG19 convolutional trunk: 16 conv3x3+relu layers and 5 max-pools.
inline const std::vector<LayerSpec>& vgg19_layer_table() {
	static const std::vector<LayerSpec> table = [] {
		std::vector<LayerSpec> t;
		const std::array<std::pair<std::size_t, std::size_t>, 5> blocks = {{{2, 64}, {2, 128}, {4, 256}, {4, 512}, {4, 512}}};
		for (std::size_t b = 0; b < blocks.size(); ++b) {
			for (std::size_t i = 0; i < blocks[b].first; ++i)
				t.push_back({"conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1), LayerKind::conv3x3_relu,
				             blocks[b].second});
			t.push_back({"pool" + std::to_string(b + 1), LayerKind::maxpool2x2, blocks[b].second});
		}
		return t;
	}();
	return table;
}

/// Contents of the JSON manifest that accompanies a weights archive.
struct WeightsManifest {
	std::string source_uri;
	std::string checksum;
	std::array<double, 3> mean_rgb{0.485, 0.456, 0.406};
	std::vector<std::string> layer_names;
	std::string archive = "vgg19.fta";
};

inline void to_json(nlohmann::json& j, const WeightsManifest& m) {
	j = {{"source_uri", m.source_uri}, {"checksum", m.checksum}, {"mean_rgb", m.mean_rgb},
	     {"layer_names", m.layer_names}, {"archive", m.archive}};
}
inline void from_json(const nlohmann::json& j, WeightsManifest& m) {
	m.source_uri = j.value("source_uri", "");
	m.checksum = j.value("checksum", "");
	m.mean_rgb = j.at("mean_rgb").get<std::array<double, 3>>();
	m.layer_names = j.value("layer_names", std::vector<std::string>{});
	m.archive = j.value("archive", "vgg19.fta");
}

/// Activations captured during a differentiable forward pass.
template <class T>
struct FeatureTrace {
	nn::Cache<T> cache;
	std::size_t stop = 0;
	std::map<std::string, std::size_t> tap_layer; // tap name -> index of the producing layer
	std::map<std::string, Tensor<T>> maps;
};

/// VGG19-topology feature extractor with frozen weights. Immutable after
/// construction; every method is const and safe to call concurrently.
template <class T>
class FeatureExtractor {
public:
	FeatureExtractor() : FeatureExtractor(WeightsManifest{}) {}

	explicit FeatureExtractor(WeightsManifest manifest) : manifest_(std::move(manifest)), net_("vgg19") {
		std::size_t in = 3;
		for (const auto& spec : vgg19_layer_table()) {
			if (spec.kind == LayerKind::conv3x3_relu) {
				net_.template add<nn::Conv2d<T>>(spec.name, in, spec.channels, 3);
				const std::string relu = "relu" + spec.name.substr(4);
				net_.template add<nn::Relu<T>>(relu);
				in = spec.channels;
			} else {
				net_.template add<nn::MaxPool2<T>>(spec.name);
			}
		}
		for (auto* p : net_.params()) p->trainable = false;
	}

	const std::vector<LayerSpec>& layer_table() const { return vgg19_layer_table(); }
	const WeightsManifest& manifest() const { return manifest_; }
	const std::string& checksum() const { return checksum_; }
	const nn::Sequential<T>& network() const { return net_; }
	std::array<double, 3> mean_rgb() const { return manifest_.mean_rgb; }

	/// Resolves a tap ("relu3_3", "conv3_3" meaning its activation, or "pool2")
	/// to the index of the layer producing it.
	std::size_t tap_index(const std::string& tap) const {
		std::string name = tap;
		if (name.rfind("conv", 0) == 0) name = "relu" + name.substr(4);
		const std::size_t i = net_.index_of(name);
		if (i == net_.size()) throw ContractError("unknown feature tap '" + tap + "'");
		return i;
	}

	/// Smallest spatial size for which every requested tap is at least 1x1.
	std::size_t min_input_size(const std::set<std::string>& taps) const {
		std::size_t deepest = 0;
		for (const auto& t : taps) deepest = std::max(deepest, tap_index(t));
		std::size_t size = 1;
		for (std::size_t i = 0; i <= deepest; ++i)
			if (net_.layer(i).kind() == "maxpool2") size *= 2;
		return size;
	}

	/// Inference-only activations at `taps` for a (n, 3, h, w) batch in [0, 1].
	std::map<std::string, Tensor<T>> features(const Tensor<T>& x, const std::set<std::string>& taps) const {
		return run(x, taps, false).maps;
	}

	/// Forward pass that records what `backward` needs.
	FeatureTrace<T> trace(const Tensor<T>& x, const std::set<std::string>& taps) const { return run(x, taps, true); }

	/// Gradient w.r.t. the [0, 1] input given gradients at the traced taps.
	Tensor<T> backward(const FeatureTrace<T>& trace, const std::map<std::string, Tensor<T>>& tap_grads) const {
		std::map<std::size_t, Tensor<T>> injected;
		for (const auto& [name, g] : tap_grads) {
			auto it = trace.tap_layer.find(name);
			FASUCM_REQUIRE(it != trace.tap_layer.end(), "gradient for untraced tap '" + name + "'");
			auto& slot = injected[it->second];
			if (slot.empty())
				slot = g;
			else
				slot += g;
		}
		// Mean subtraction has an identity Jacobian.
		return net_.backward_injected(Tensor<T>{}, trace.cache, nullptr, trace.stop, true, injected);
	}

	/// Replace weights from an archive; the first missing or mis-shaped tensor is reported.
	void load_weights(const TensorArchive& archive) {
		net_.import_from(archive);
		checksum_ = archive.checksum();
	}

private:
	FeatureTrace<T> run(const Tensor<T>& x, const std::set<std::string>& taps, bool record) const {
		FASUCM_REQUIRE(x.shape().c == 3, "feature extractor expects 3-channel input");
		FASUCM_REQUIRE(!taps.empty(), "no feature taps requested");
		FeatureTrace<T> tr;
		std::map<std::size_t, std::vector<std::string>> wanted;
		for (const auto& t : taps) {
			const std::size_t i = tap_index(t);
			tr.tap_layer[t] = i;
			wanted[i].push_back(t);
			tr.stop = std::max(tr.stop, i + 1);
		}
		const std::size_t need = min_input_size(taps);
		FASUCM_REQUIRE(x.shape().h >= need && x.shape().w >= need,
		               "input " + std::to_string(x.shape().h) + "x" + std::to_string(x.shape().w) +
		                   " too small for requested taps (need >= " + std::to_string(need) + ")");
		Tensor<T> centred = x;
		const std::size_t plane = x.shape().plane();
		for (std::size_t n = 0; n < x.shape().n; ++n)
			for (std::size_t c = 0; c < 3; ++c) {
				T* p = centred.channel(n, c);
				const T m = static_cast<T>(manifest_.mean_rgb[c]);
				for (std::size_t i = 0; i < plane; ++i) p[i] -= m;
			}
		nn::Pass pass;
		pass.record = record;
		net_.forward_range(centred, pass, record ? &tr.cache : nullptr, tr.stop,
		                   [&](std::size_t i, const Tensor<T>& out) {
			                   if (auto it = wanted.find(i); it != wanted.end())
				                   for (const auto& name : it->second) tr.maps[name] = out;
		                   });
		return tr;
	}

	WeightsManifest manifest_;
	nn::Sequential<T> net_;
	std::string checksum_;
};

inline std::filesystem::path archive_path(const std::filesystem::path& manifest_path, const WeightsManifest& m) {
	return manifest_path.parent_path() / m.archive;
}

/// Loads a weights manifest and its tensor archive into an extractor.
template <class T = float>
FeatureExtractor<T> load_backbone(const std::filesystem::path& manifest_path) {
	if (!std::filesystem::exists(manifest_path))
		throw ConfigError("weights manifest not found: " + manifest_path.string());
	std::ifstream in(manifest_path);
	WeightsManifest manifest;
	try {
		manifest = nlohmann::json::parse(in).get<WeightsManifest>();
	} catch (const nlohmann::json::exception& e) {
		throw ParseError(manifest_path.string() + ": " + e.what());
	}
	const auto archive = TensorArchive::load(archive_path(manifest_path, manifest));
	FeatureExtractor<T> fx(manifest);
	fx.load_weights(archive);
	if (!manifest.checksum.empty() && manifest.checksum != fx.checksum())
		throw ConfigError("weights checksum mismatch for " + manifest_path.string() + ": manifest says " +
		                  manifest.checksum + ", archive hashes to " + fx.checksum());
	return fx;
}

/// Writes a seeded He-initialised VGG19 trunk. Used for hermetic tests and
/// desk-scale runs where pretrained weights are not available.
inline std::filesystem::path write_random_weights(const std::filesystem::path& dir, std::uint64_t seed) {
	std::filesystem::create_directories(dir);
	FeatureExtractor<float> fx;
	TensorArchive archive;
	Rng rng(seed);
	auto net = fx.network();
	for (std::size_t i = 0; i < net.size(); ++i)
		if (auto* conv = dynamic_cast<nn::Conv2d<float>*>(&net.layer(i))) conv->initialize(rng);
	net.export_to(archive);
	WeightsManifest m;
	m.source_uri = "random:he-normal?seed=" + std::to_string(seed);
	m.checksum = archive.checksum();
	for (const auto& spec : vgg19_layer_table()) m.layer_names.push_back(spec.name);
	archive.save(dir / m.archive);
	const auto manifest_path = dir / "vgg19.json";
	std::ofstream(manifest_path) << nlohmann::json(m).dump(2) << '\n';
	return manifest_path;
}

/// Gram matrix of sample `index`: G = F F^T / (C H W) with F the C x (H W) unrolled map.
///
/// Spatial positions are accumulated in a canonical (lexicographic) order and
/// only the lower triangle is computed, so the result is bit-identical under
/// any permutation of positions and exactly symmetric.
template <class T>
nn::RowMatrix<T> gram(const Tensor<T>& f, std::size_t index = 0) {
	const Shape s = f.shape();
	FASUCM_REQUIRE(s.c >= 1 && s.h >= 1 && s.w >= 1, "gram of an empty feature map");
	const std::size_t C = s.c, P = s.plane();
	const T* src = f.sample(index);
	std::vector<std::size_t> order(P);
	for (std::size_t k = 0; k < P; ++k) order[k] = k;
	std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
		for (std::size_t c = 0; c < C; ++c) {
			const T va = src[c * P + a], vb = src[c * P + b];
			if (va != vb) return va < vb;
		}
		return false;
	});
	nn::RowMatrix<T> F(C, P);
	for (std::size_t c = 0; c < C; ++c)
		for (std::size_t k = 0; k < P; ++k) F(c, k) = src[c * P + order[k]];
	nn::RowMatrix<T> g = nn::RowMatrix<T>::Zero(C, C);
	g.template selfadjointView<Eigen::Lower>().rankUpdate(F, T(1) / static_cast<T>(C * P));
	g.template triangularView<Eigen::StrictlyUpper>() = g.transpose();
	return g;
}

} // namespace fasucm::perceptual
