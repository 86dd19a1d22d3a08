#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/perceptual/backbone.hpp"

namespace fasucm::style {

/// Relative weights of the content, style and total-variation terms.
struct LossWeights {
	double content = 1.0;
	double style = 5.0;
	double tv = 1e-4;

	void validate() const {
		FASUCM_REQUIRE(content >= 0 && style >= 0 && tv >= 0, "loss weights must be non-negative");
		FASUCM_REQUIRE(content > 0 || style > 0 || tv > 0, "loss weights must not all be zero");
	}
};

/// Feature taps feeding the content and style terms.
struct LossLayers {
	std::string content = "relu3_3";
	std::vector<std::string> style = {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
};

template <class T>
using GramMatrix = nn::RowMatrix<T>;

template <class T>
using StyleGrams = std::map<std::string, GramMatrix<T>>;

/// A loss value and, when requested, its gradient w.r.t. the input image batch.
template <class T>
struct LossGrad {
	T value = 0;
	Tensor<T> grad;
};

/// Gram targets of a single style image.
template <class T>
StyleGrams<T> style_grams(const perceptual::FeatureExtractor<T>& fx, const Tensor<T>& style_image,
                          const std::vector<std::string>& layers) {
	const auto maps = fx.features(style_image, {layers.begin(), layers.end()});
	StyleGrams<T> grams;
	for (const auto& l : layers) grams[l] = perceptual::gram(maps.at(l));
	return grams;
}

namespace detail {

/// Content term on precomputed features; returns the gradient w.r.t. `features`.
template <class T>
LossGrad<T> content_term(const Tensor<T>& features, const Tensor<T>& target, bool want_grad) {
	FASUCM_REQUIRE(features.shape() == target.shape(), "content features and target differ in shape");
	const T per_sample = static_cast<T>(features.shape().sample());
	const T n = static_cast<T>(features.shape().n);
	LossGrad<T> out;
	if (want_grad) out.grad = Tensor<T>(features.shape());
	for (std::size_t i = 0; i < features.size(); ++i) {
		const T d = features[i] - target[i];
		out.value += d * d;
		if (want_grad) out.grad[i] = T(2) * d / (per_sample * n);
	}
	out.value /= per_sample * n;
	return out;
}

/// Style term for one layer: mean over the batch of ||gram(F) - target||_F^2.
template <class T>
LossGrad<T> style_term(const Tensor<T>& features, const GramMatrix<T>& target, bool want_grad) {
	const Shape s = features.shape();
	FASUCM_REQUIRE(target.rows() == static_cast<long>(s.c), "style gram size differs from feature channels");
	const T n = static_cast<T>(s.n);
	LossGrad<T> out;
	if (want_grad) out.grad = Tensor<T>(s);
	for (std::size_t i = 0; i < s.n; ++i) {
		const GramMatrix<T> diff = perceptual::gram(features, i) - target;
		out.value += diff.squaredNorm() / n;
		if (want_grad) {
			nn::ConstMatrixMap<T> F(features.sample(i), s.c, s.plane());
			nn::MatrixMap<T> dF(out.grad.sample(i), s.c, s.plane());
			dF.noalias() = (T(4) / (static_cast<T>(s.c * s.plane()) * n)) * diff * F;
		}
	}
	return out;
}

} // namespace detail

/// Total variation: squared neighbour differences over all channels divided
/// by H * W, averaged over the batch.
template <class T>
LossGrad<T> tv_loss_grad(const Tensor<T>& x, bool want_grad = true) {
	const Shape s = x.shape();
	FASUCM_REQUIRE(s.h >= 2 && s.w >= 2, "tv_loss needs H, W >= 2");
	const T norm = static_cast<T>(s.plane() * s.n);
	LossGrad<T> out;
	if (want_grad) out.grad = Tensor<T>(s);
	for (std::size_t n = 0; n < s.n; ++n)
		for (std::size_t c = 0; c < s.c; ++c) {
			const T* p = x.channel(n, c);
			T* g = want_grad ? out.grad.channel(n, c) : nullptr;
			for (std::size_t yy = 0; yy < s.h; ++yy)
				for (std::size_t xx = 0; xx < s.w; ++xx) {
					const std::size_t i = yy * s.w + xx;
					if (xx + 1 < s.w) {
						const T d = p[i + 1] - p[i];
						out.value += d * d;
						if (g) {
							g[i + 1] += T(2) * d / norm;
							g[i] -= T(2) * d / norm;
						}
					}
					if (yy + 1 < s.h) {
						const T d = p[i + s.w] - p[i];
						out.value += d * d;
						if (g) {
							g[i + s.w] += T(2) * d / norm;
							g[i] -= T(2) * d / norm;
						}
					}
				}
		}
	out.value /= norm;
	return out;
}

template <class T>
T tv_loss(const Tensor<T>& x) {
	return tv_loss_grad(x, false).value;
}

/// Mean squared feature difference at `layer`, averaged over C * H * W.
template <class T>
LossGrad<T> content_loss_grad(const Tensor<T>& yhat, const Tensor<T>& y, const perceptual::FeatureExtractor<T>& fx,
                              const std::string& layer, bool want_grad = true) {
	FASUCM_REQUIRE(yhat.shape() == y.shape(), "content_loss inputs differ in shape");
	const auto target = fx.features(y, {layer}).at(layer);
	if (!want_grad) return detail::content_term(fx.features(yhat, {layer}).at(layer), target, false);
	const auto tr = fx.trace(yhat, {layer});
	auto term = detail::content_term(tr.maps.at(layer), target, true);
	term.grad = fx.backward(tr, {{layer, term.grad}});
	return term;
}

template <class T>
T content_loss(const Tensor<T>& yhat, const Tensor<T>& y, const perceptual::FeatureExtractor<T>& fx,
               const std::string& layer) {
	return content_loss_grad(yhat, y, fx, layer, false).value;
}

/// Sum over `layers` of squared Frobenius distances between Gram matrices.
template <class T>
LossGrad<T> style_loss_grad(const Tensor<T>& yhat, const StyleGrams<T>& grams,
                            const perceptual::FeatureExtractor<T>& fx, const std::vector<std::string>& layers,
                            bool want_grad = true) {
	for (const auto& l : layers)
		if (!grams.count(l)) throw ContractError("style grams missing layer '" + l + "'");
	const std::set<std::string> taps(layers.begin(), layers.end());
	LossGrad<T> out;
	if (!want_grad) {
		const auto maps = fx.features(yhat, taps);
		for (const auto& l : layers) out.value += detail::style_term(maps.at(l), grams.at(l), false).value;
		return out;
	}
	const auto tr = fx.trace(yhat, taps);
	std::map<std::string, Tensor<T>> tap_grads;
	for (const auto& l : layers) {
		auto term = detail::style_term(tr.maps.at(l), grams.at(l), true);
		out.value += term.value;
		tap_grads[l] = std::move(term.grad);
	}
	out.grad = fx.backward(tr, tap_grads);
	return out;
}

template <class T>
T style_loss(const Tensor<T>& yhat, const StyleGrams<T>& grams, const perceptual::FeatureExtractor<T>& fx,
             const std::vector<std::string>& layers) {
	return style_loss_grad(yhat, grams, fx, layers, false).value;
}

/// Breakdown of a weighted perceptual loss evaluation.
template <class T>
struct PerceptualEvaluation {
	T total = 0, content = 0, style = 0, tv = 0;
	Tensor<T> grad;
};

/// alpha * content + beta * style + gamma * tv against fixed style grams and
/// content features of the target, sharing one feature-extractor pass.
/// Terms with zero weight are neither evaluated nor traced.
template <class T>
class PerceptualLoss {
public:
	PerceptualLoss(const perceptual::FeatureExtractor<T>& fx, LossLayers layers, LossWeights weights,
	               StyleGrams<T> grams)
	    : fx_(&fx), layers_(std::move(layers)), weights_(weights), grams_(std::move(grams)) {
		weights_.validate();
		if (weights_.style > 0)
			for (const auto& l : layers_.style)
				if (!grams_.count(l)) throw ContractError("style grams missing layer '" + l + "'");
	}

	const LossLayers& layers() const { return layers_; }
	const LossWeights& weights() const { return weights_; }
	const StyleGrams<T>& grams() const { return grams_; }

	/// Content-layer features used as the content target of `images`.
	Tensor<T> content_target(const Tensor<T>& images) const {
		return fx_->features(images, {layers_.content}).at(layers_.content);
	}

	PerceptualEvaluation<T> evaluate(const Tensor<T>& yhat, const Tensor<T>& content_target, bool want_grad) const {
		PerceptualEvaluation<T> ev;
		std::set<std::string> taps;
		if (weights_.content > 0) taps.insert(layers_.content);
		if (weights_.style > 0) taps.insert(layers_.style.begin(), layers_.style.end());
		if (!taps.empty()) {
			const auto tr = want_grad ? fx_->trace(yhat, taps) : perceptual::FeatureTrace<T>{};
			const auto maps = want_grad ? std::map<std::string, Tensor<T>>{} : fx_->features(yhat, taps);
			const auto& fm = want_grad ? tr.maps : maps;
			std::map<std::string, Tensor<T>> tap_grads;
			auto add_grad = [&](const std::string& l, Tensor<T> g, double w) {
				g *= static_cast<T>(w);
				auto& slot = tap_grads[l];
				if (slot.empty())
					slot = std::move(g);
				else
					slot += g;
			};
			if (weights_.content > 0) {
				auto term = detail::content_term(fm.at(layers_.content), content_target, want_grad);
				ev.content = term.value;
				if (want_grad) add_grad(layers_.content, std::move(term.grad), weights_.content);
			}
			if (weights_.style > 0) {
				for (const auto& l : layers_.style) {
					auto term = detail::style_term(fm.at(l), grams_.at(l), want_grad);
					ev.style += term.value;
					if (want_grad) add_grad(l, std::move(term.grad), weights_.style);
				}
			}
			if (want_grad) ev.grad = fx_->backward(tr, tap_grads);
		}
		if (weights_.tv > 0) {
			auto term = tv_loss_grad(yhat, want_grad);
			ev.tv = term.value;
			if (want_grad) {
				term.grad *= static_cast<T>(weights_.tv);
				if (ev.grad.empty())
					ev.grad = std::move(term.grad);
				else
					ev.grad += term.grad;
			}
		}
		if (want_grad && ev.grad.empty()) ev.grad = Tensor<T>(yhat.shape());
		ev.total = static_cast<T>(weights_.content) * ev.content + static_cast<T>(weights_.style) * ev.style +
		           static_cast<T>(weights_.tv) * ev.tv;
		return ev;
	}

private:
	const perceptual::FeatureExtractor<T>* fx_;
	LossLayers layers_;
	LossWeights weights_;
	StyleGrams<T> grams_;
};

} // namespace fasucm::style
