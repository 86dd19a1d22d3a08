#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "fasucm/nn/layers.hpp"
#include "fasucm/nn/sequential.hpp"

namespace fasucm::style {

struct TransformNetConfig {
	std::size_t residual_blocks = 5;
	std::size_t base_channels = 32;
};

/// Image-to-image network: 9x9 stem, two stride-2 downsampling convs,
/// residual blocks, two nearest-neighbour x2 upsampling convs and a 9x9
/// output conv. Every conv except the output is followed by instance
/// normalisation; all convs use reflect padding.
///
/// The output is sigmoid(z + logit(x)) with z the output conv. Instance
/// normalisation discards each channel's global mean and scale, so without
/// the input term absolute colour could not be reproduced.
template <class T>
class TransformNet {
public:
	static constexpr std::size_t total_stride = 4;

	explicit TransformNet(TransformNetConfig config = {}) : config_(config), net_("transform") {
		FASUCM_REQUIRE(config_.base_channels >= 1, "transform net needs at least one base channel");
		const std::size_t b = config_.base_channels;
		const auto reflect = nn::Padding::reflect;
		auto conv_block = [&](nn::Sequential<T>& seq, const std::string& name, std::size_t in, std::size_t out,
		                      std::size_t k, std::size_t stride, bool relu) {
			seq.template add<nn::Conv2d<T>>(name + "_conv", in, out, k, stride, reflect);
			seq.template add<nn::InstanceNorm<T>>(name + "_norm", out);
			if (relu) seq.template add<nn::Relu<T>>(name + "_relu");
		};
		conv_block(net_, "down1", 3, b, 9, 1, true);
		conv_block(net_, "down2", b, 2 * b, 3, 2, true);
		conv_block(net_, "down3", 2 * b, 4 * b, 3, 2, true);
		for (std::size_t r = 0; r < config_.residual_blocks; ++r) {
			nn::Sequential<T> body("body");
			conv_block(body, "a", 4 * b, 4 * b, 3, 1, true);
			conv_block(body, "b", 4 * b, 4 * b, 3, 1, false);
			net_.template add<nn::Residual<T>>("res" + std::to_string(r + 1), std::move(body));
		}
		net_.template add<nn::Upsample2<T>>("up1_resize");
		conv_block(net_, "up1", 4 * b, 2 * b, 3, 1, true);
		net_.template add<nn::Upsample2<T>>("up2_resize");
		conv_block(net_, "up2", 2 * b, b, 3, 1, true);
		net_.template add<nn::Conv2d<T>>("out_conv", b, 3, 9, 1, reflect);
	}

	const TransformNetConfig& config() const { return config_; }
	nn::Sequential<T>& network() { return net_; }
	const nn::Sequential<T>& network() const { return net_; }

	void initialize(Rng& rng) {
		for (auto& [name, p] : net_.named_params()) {
			if (name.ends_with("_conv.weight")) {
				const Shape s = p->value.shape();
				nn::kaiming_normal(p->value, s.c * s.h * s.w, rng);
			}
		}
	}

	/// (n, 3, h, w) -> (n, 3, h, w); h and w must be multiples of total_stride.
	Tensor<T> forward(const Tensor<T>& x, nn::Cache<T>* cache = nullptr) const {
		check_input(x.shape());
		nn::Pass pass;
		pass.phase = cache ? nn::Phase::training : nn::Phase::inference;
		pass.record = cache != nullptr;
		Tensor<T> y = net_.forward(x, pass, cache);
		constexpr T eps = T(1e-3);
		for (std::size_t i = 0; i < y.size(); ++i) {
			const T p = std::clamp(x[i], eps, T(1) - eps);
			y[i] = T(1) / (T(1) + std::exp(-(y[i] + std::log(p / (T(1) - p)))));
		}
		if (cache) cache->tensors = {y};
		return y;
	}

	/// Accumulates parameter gradients for dy = dL/d(output).
	void backward(const Tensor<T>& dy, const nn::Cache<T>& cache, nn::Gradients<T>& grads) const {
		const Tensor<T>& y = cache.tensors.at(0);
		Tensor<T> dz = dy;
		for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= y[i] * (T(1) - y[i]);
		net_.backward(dz, cache, &grads, false);
	}

	std::size_t parameter_count() const { return net_.parameter_count(); }

	static void check_input(const Shape& s) {
		FASUCM_REQUIRE(s.c == 3, "transform net expects 3-channel input");
		FASUCM_REQUIRE(s.h % total_stride == 0 && s.w % total_stride == 0 && s.h > 0 && s.w > 0,
		               "transform net input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
		                   " is not a multiple of " + std::to_string(total_stride));
	}

private:
	TransformNetConfig config_;
	nn::Sequential<T> net_;
};

} // namespace fasucm::style
