#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "fasucm/nn/kernels.hpp"
#include "fasucm/nn/layer.hpp"

namespace fasucm::nn {

template <class T>
class Conv2d final : public Layer<T> {
public:
	Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
	       Padding mode = Padding::zero)
	    : Layer<T>(std::move(name)), stride_(stride), pad_(kernel / 2), mode_(mode),
	      weight_{"weight", Tensor<T>(out, in, kernel, kernel)}, bias_{"bias", Tensor<T>(1, out, 1, 1)} {}

	std::string kind() const override { return "conv2d"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

	std::size_t in_channels() const { return weight_.value.shape().c; }
	std::size_t out_channels() const { return weight_.value.shape().n; }
	std::size_t kernel() const { return weight_.value.shape().h; }
	std::size_t stride() const { return stride_; }

	Param<T>& weight() { return weight_; }
	Param<T>& bias() { return bias_; }
	const Param<T>& weight() const { return weight_; }
	const Param<T>& bias() const { return bias_; }

	void initialize(Rng& rng) {
		kaiming_normal(weight_.value, in_channels() * kernel() * kernel(), rng);
		bias_.value.fill(T(0));
	}

	Shape output_shape(const Shape& in) const override {
		FASUCM_REQUIRE(in.c == in_channels(), this->name() + ": expected " + std::to_string(in_channels()) +
		                                          " input channels, got " + std::to_string(in.c));
		const ConvGeometry g{in.c, in.h, in.w, kernel(), stride_, pad_, mode_};
		return {in.n, out_channels(), g.out_height(), g.out_width()};
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		output_shape(x.shape());
		if (cache) cache->tensors = {x};
		return conv2d_forward(x, weight_.value, bias_.value, stride_, pad_, mode_);
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		Tensor<T>* dw = grads && weight_.trainable ? &grads->of(weight_) : nullptr;
		Tensor<T>* db = grads && bias_.trainable ? &grads->of(bias_) : nullptr;
		return conv2d_backward(cache.tensors.at(0), weight_.value, dy, stride_, pad_, mode_, dw, db, input_grad);
	}

	std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

private:
	std::size_t stride_, pad_;
	Padding mode_;
	Param<T> weight_, bias_;
};

template <class T>
class Relu final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "relu"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
	Shape output_shape(const Shape& in) const override { return in; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		Tensor<T> y = x;
		for (auto& v : y.values()) v = v > T(0) || v != v ? v : T(0); // NaN propagates
		if (cache) cache->tensors = {y};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		const auto& y = cache.tensors.at(0);
		Tensor<T> dx = dy;
		for (std::size_t i = 0; i < dx.size(); ++i)
			if (!(y[i] > T(0))) dx[i] = T(0);
		return dx;
	}
};

/// Logistic output squashing images into (0, 1).
template <class T>
class Sigmoid final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "sigmoid"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }
	Shape output_shape(const Shape& in) const override { return in; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		Tensor<T> y = x;
		for (auto& v : y.values()) v = T(1) / (T(1) + std::exp(-v));
		if (cache) cache->tensors = {y};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		const auto& y = cache.tensors.at(0);
		Tensor<T> dx = dy;
		for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (T(1) - y[i]);
		return dx;
	}
};

/// Channel-wise softmax over (n, k, 1, 1) logits.
template <class T>
class Softmax final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "softmax"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }
	Shape output_shape(const Shape& in) const override { return in; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		Tensor<T> y = x;
		const std::size_t k = x.shape().sample();
		for (std::size_t n = 0; n < x.shape().n; ++n) {
			T* row = y.sample(n);
			const T peak = *std::max_element(row, row + k);
			T total = 0;
			for (std::size_t i = 0; i < k; ++i) total += row[i] = std::exp(row[i] - peak);
			for (std::size_t i = 0; i < k; ++i) row[i] /= total;
		}
		if (cache) cache->tensors = {y};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		const auto& y = cache.tensors.at(0);
		Tensor<T> dx(dy.shape());
		const std::size_t k = dy.shape().sample();
		for (std::size_t n = 0; n < dy.shape().n; ++n) {
			T dot = 0;
			for (std::size_t i = 0; i < k; ++i) dot += dy.sample(n)[i] * y.sample(n)[i];
			for (std::size_t i = 0; i < k; ++i) dx.sample(n)[i] = y.sample(n)[i] * (dy.sample(n)[i] - dot);
		}
		return dx;
	}
};

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
template <class T>
class MaxPool2 final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "maxpool2"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2>(*this); }
	Shape output_shape(const Shape& in) const override {
		FASUCM_REQUIRE(in.h >= 2 && in.w >= 2, this->name() + ": input " + in.str() + " too small to pool");
		return {in.n, in.c, in.h / 2, in.w / 2};
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		const Shape out = output_shape(x.shape());
		Tensor<T> y(out);
		if (cache) {
			cache->indices.assign(out.count(), 0);
			cache->tensors.clear();
		}
		const std::size_t W = x.shape().w;
		std::size_t o = 0;
		for (std::size_t nc = 0; nc < out.n * out.c; ++nc) {
			const T* plane = x.data() + nc * x.shape().plane();
			for (std::size_t oy = 0; oy < out.h; ++oy) {
				for (std::size_t ox = 0; ox < out.w; ++ox, ++o) {
					std::size_t best = 2 * oy * W + 2 * ox;
					for (std::size_t k : {best + 1, best + W, best + W + 1})
						if (plane[k] > plane[best]) best = k;
					y[o] = plane[best];
					if (cache) cache->indices[o] = static_cast<std::uint32_t>(nc * x.shape().plane() + best);
				}
			}
		}
		if (cache) store_input_shape(*cache, x.shape());
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		Tensor<T> dx(shape_from(cache));
		for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.indices[o]] += dy[o];
		return dx;
	}

private:
	static void store_input_shape(Cache<T>& cache, const Shape& s) {
		cache.nested.clear();
		Cache<T> meta;
		meta.indices = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
		                static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
		cache.nested.push_back(std::move(meta));
	}
	static Shape shape_from(const Cache<T>& cache) {
		const auto& d = cache.nested.at(0).indices;
		return {d[0], d[1], d[2], d[3]};
	}
};

/// Nearest-neighbour 2x upsampling.
template <class T>
class Upsample2 final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "upsample2"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Upsample2>(*this); }
	Shape output_shape(const Shape& in) const override { return {in.n, in.c, in.h * 2, in.w * 2}; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>*) const override {
		Tensor<T> y(output_shape(x.shape()));
		const std::size_t H = x.shape().h, W = x.shape().w;
		for (std::size_t nc = 0; nc < x.shape().n * x.shape().c; ++nc) {
			const T* src = x.data() + nc * H * W;
			T* dst = y.data() + nc * 4 * H * W;
			for (std::size_t yy = 0; yy < 2 * H; ++yy)
				for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[yy * 2 * W + xx] = src[(yy / 2) * W + xx / 2];
		}
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>&, Gradients<T>*, bool) const override {
		const Shape s = dy.shape();
		Tensor<T> dx(s.n, s.c, s.h / 2, s.w / 2);
		const std::size_t H = s.h / 2, W = s.w / 2;
		for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
			const T* src = dy.data() + nc * s.plane();
			T* dst = dx.data() + nc * H * W;
			for (std::size_t yy = 0; yy < s.h; ++yy)
				for (std::size_t xx = 0; xx < s.w; ++xx) dst[(yy / 2) * W + xx / 2] += src[yy * s.w + xx];
		}
		return dx;
	}
};

/// Per-sample, per-channel normalisation with a learned affine transform.
template <class T>
class InstanceNorm final : public Layer<T> {
public:
	InstanceNorm(std::string name, std::size_t channels, T epsilon = T(1e-5))
	    : Layer<T>(std::move(name)), epsilon_(epsilon), gamma_{"gamma", Tensor<T>(1, channels, 1, 1, T(1))},
	      beta_{"beta", Tensor<T>(1, channels, 1, 1)} {}

	std::string kind() const override { return "instance_norm"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<InstanceNorm>(*this); }
	Shape output_shape(const Shape& in) const override {
		FASUCM_REQUIRE(in.c == gamma_.value.size(), this->name() + ": channel mismatch");
		return in;
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		output_shape(x.shape());
		const Shape s = x.shape();
		const std::size_t m = s.plane();
		Tensor<T> xhat(s), inv_std(s.n, s.c, 1, 1), y(s);
		for (std::size_t n = 0; n < s.n; ++n) {
			for (std::size_t c = 0; c < s.c; ++c) {
				const T* in = x.channel(n, c);
				T mean = 0;
				for (std::size_t i = 0; i < m; ++i) mean += in[i];
				mean /= static_cast<T>(m);
				T var = 0;
				for (std::size_t i = 0; i < m; ++i) var += (in[i] - mean) * (in[i] - mean);
				var /= static_cast<T>(m);
				const T is = T(1) / std::sqrt(var + epsilon_);
				inv_std.at(n, c, 0, 0) = is;
				T* xh = xhat.channel(n, c);
				T* out = y.channel(n, c);
				const T g = gamma_.value[c], b = beta_.value[c];
				for (std::size_t i = 0; i < m; ++i) {
					xh[i] = (in[i] - mean) * is;
					out[i] = g * xh[i] + b;
				}
			}
		}
		if (cache) cache->tensors = {std::move(xhat), std::move(inv_std)};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		const auto& xhat = cache.tensors.at(0);
		const auto& inv_std = cache.tensors.at(1);
		const Shape s = dy.shape();
		const std::size_t m = s.plane();
		Tensor<T>* dgamma = grads ? &grads->of(gamma_) : nullptr;
		Tensor<T>* dbeta = grads ? &grads->of(beta_) : nullptr;
		Tensor<T> dx;
		if (input_grad) dx = Tensor<T>(s);
		for (std::size_t n = 0; n < s.n; ++n) {
			for (std::size_t c = 0; c < s.c; ++c) {
				const T* g = dy.channel(n, c);
				const T* xh = xhat.channel(n, c);
				T sum_g = 0, sum_gx = 0;
				for (std::size_t i = 0; i < m; ++i) {
					sum_g += g[i];
					sum_gx += g[i] * xh[i];
				}
				if (dgamma) (*dgamma)[c] += sum_gx;
				if (dbeta) (*dbeta)[c] += sum_g;
				if (!input_grad) continue;
				const T scale = gamma_.value[c] * inv_std.at(n, c, 0, 0) / static_cast<T>(m);
				T* out = dx.channel(n, c);
				for (std::size_t i = 0; i < m; ++i)
					out[i] = scale * (static_cast<T>(m) * g[i] - sum_g - xh[i] * sum_gx);
			}
		}
		return dx;
	}

	std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }

private:
	T epsilon_;
	Param<T> gamma_, beta_;
};

/// Batch normalisation over (n, h, w) per channel. Running mean/variance are
/// non-trainable parameters updated with `momentum` (Keras convention).
template <class T>
class BatchNorm final : public Layer<T> {
public:
	BatchNorm(std::string name, std::size_t channels, T momentum = T(0.99), T epsilon = T(1e-3))
	    : Layer<T>(std::move(name)), momentum_(momentum), epsilon_(epsilon),
	      gamma_{"gamma", Tensor<T>(1, channels, 1, 1, T(1))}, beta_{"beta", Tensor<T>(1, channels, 1, 1)},
	      mean_{"running_mean", Tensor<T>(1, channels, 1, 1), false},
	      var_{"running_var", Tensor<T>(1, channels, 1, 1, T(1)), false} {}

	std::string kind() const override { return "batch_norm"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }
	Shape output_shape(const Shape& in) const override {
		FASUCM_REQUIRE(in.c == gamma_.value.size(), this->name() + ": channel mismatch");
		return in;
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass& pass, Cache<T>* cache) const override {
		output_shape(x.shape());
		const Shape s = x.shape();
		const std::size_t m = s.n * s.plane();
		Tensor<T> mean(1, s.c, 1, 1), var(1, s.c, 1, 1);
		if (pass.training()) {
			FASUCM_REQUIRE(m > 1, this->name() + ": batch statistics need more than one value per channel");
			for (std::size_t c = 0; c < s.c; ++c) {
				T mu = 0;
				for (std::size_t n = 0; n < s.n; ++n)
					for (std::size_t i = 0; i < s.plane(); ++i) mu += x.channel(n, c)[i];
				mu /= static_cast<T>(m);
				T v = 0;
				for (std::size_t n = 0; n < s.n; ++n)
					for (std::size_t i = 0; i < s.plane(); ++i) v += (x.channel(n, c)[i] - mu) * (x.channel(n, c)[i] - mu);
				mean[c] = mu;
				var[c] = v / static_cast<T>(m);
			}
		} else {
			mean = mean_.value;
			var = var_.value;
		}
		Tensor<T> xhat(s), y(s), inv_std(1, s.c, 1, 1);
		for (std::size_t c = 0; c < s.c; ++c) {
			inv_std[c] = T(1) / std::sqrt(var[c] + epsilon_);
			for (std::size_t n = 0; n < s.n; ++n) {
				const T* in = x.channel(n, c);
				T* xh = xhat.channel(n, c);
				T* out = y.channel(n, c);
				for (std::size_t i = 0; i < s.plane(); ++i) {
					xh[i] = (in[i] - mean[c]) * inv_std[c];
					out[i] = gamma_.value[c] * xh[i] + beta_.value[c];
				}
			}
		}
		if (cache) {
			cache->tensors = {std::move(xhat), std::move(inv_std), std::move(mean), std::move(var)};
			cache->indices = {pass.training() ? 1u : 0u};
		}
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		const auto& xhat = cache.tensors.at(0);
		const auto& inv_std = cache.tensors.at(1);
		const bool batch_stats = cache.indices.at(0) == 1;
		const Shape s = dy.shape();
		const T m = static_cast<T>(s.n * s.plane());
		Tensor<T>* dgamma = grads ? &grads->of(gamma_) : nullptr;
		Tensor<T>* dbeta = grads ? &grads->of(beta_) : nullptr;
		Tensor<T> dx;
		if (input_grad) dx = Tensor<T>(s);
		for (std::size_t c = 0; c < s.c; ++c) {
			T sum_g = 0, sum_gx = 0;
			for (std::size_t n = 0; n < s.n; ++n)
				for (std::size_t i = 0; i < s.plane(); ++i) {
					sum_g += dy.channel(n, c)[i];
					sum_gx += dy.channel(n, c)[i] * xhat.channel(n, c)[i];
				}
			if (dgamma) (*dgamma)[c] += sum_gx;
			if (dbeta) (*dbeta)[c] += sum_g;
			if (!input_grad) continue;
			const T g = gamma_.value[c] * inv_std[c];
			for (std::size_t n = 0; n < s.n; ++n)
				for (std::size_t i = 0; i < s.plane(); ++i) {
					const T d = dy.channel(n, c)[i];
					dx.channel(n, c)[i] =
					    batch_stats ? g * (d - sum_g / m - xhat.channel(n, c)[i] * sum_gx / m) : g * d;
				}
		}
		return dx;
	}

	void absorb(const Cache<T>& cache) override {
		if (cache.indices.empty() || cache.indices[0] != 1) return;
		const auto& mean = cache.tensors.at(2);
		const auto& var = cache.tensors.at(3);
		for (std::size_t c = 0; c < mean.size(); ++c) {
			mean_.value[c] = momentum_ * mean_.value[c] + (T(1) - momentum_) * mean[c];
			var_.value[c] = momentum_ * var_.value[c] + (T(1) - momentum_) * var[c];
		}
	}

	std::vector<Param<T>*> params() override { return {&gamma_, &beta_, &mean_, &var_}; }

private:
	T momentum_, epsilon_;
	Param<T> gamma_, beta_, mean_, var_;
};

/// Inverted dropout; identity at inference.
template <class T>
class Dropout final : public Layer<T> {
public:
	Dropout(std::string name, double rate) : Layer<T>(std::move(name)), rate_(rate) {
		FASUCM_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
	}
	std::string kind() const override { return "dropout"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
	Shape output_shape(const Shape& in) const override { return in; }
	double rate() const { return rate_; }

	Tensor<T> forward(const Tensor<T>& x, const Pass& pass, Cache<T>* cache) const override {
		if (!pass.training() || rate_ == 0.0) {
			if (cache) cache->tensors.clear();
			return x;
		}
		FASUCM_REQUIRE(pass.rng != nullptr, this->name() + ": training pass without an rng");
		Tensor<T> mask(x.shape());
		const T keep = static_cast<T>(1.0 / (1.0 - rate_));
		for (auto& v : mask.values()) v = pass.rng->uniform() < rate_ ? T(0) : keep;
		Tensor<T> y = x;
		for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
		if (cache) cache->tensors = {std::move(mask)};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		if (cache.tensors.empty()) return dy;
		Tensor<T> dx = dy;
		for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= cache.tensors[0][i];
		return dx;
	}

private:
	double rate_;
};

template <class T>
class Flatten final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "flatten"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }
	Shape output_shape(const Shape& in) const override { return {in.n, in.sample(), 1, 1}; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		if (cache) {
			cache->indices = {static_cast<std::uint32_t>(x.shape().c), static_cast<std::uint32_t>(x.shape().h),
			                  static_cast<std::uint32_t>(x.shape().w)};
		}
		return x.reshaped(output_shape(x.shape()));
	}
	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		return dy.reshaped({dy.shape().n, cache.indices.at(0), cache.indices.at(1), cache.indices.at(2)});
	}
};

/// Spatial average per channel: (n, c, h, w) -> (n, c, 1, 1).
template <class T>
class GlobalAvgPool final : public Layer<T> {
public:
	using Layer<T>::Layer;
	std::string kind() const override { return "global_avg_pool"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
	Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		const Shape s = x.shape();
		Tensor<T> y(s.n, s.c, 1, 1);
		for (std::size_t n = 0; n < s.n; ++n)
			for (std::size_t c = 0; c < s.c; ++c) {
				T sum = 0;
				for (std::size_t i = 0; i < s.plane(); ++i) sum += x.channel(n, c)[i];
				y.at(n, c, 0, 0) = sum / static_cast<T>(s.plane());
			}
		if (cache) cache->indices = {static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
		return y;
	}
	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>*, bool) const override {
		const std::size_t h = cache.indices.at(0), w = cache.indices.at(1);
		Tensor<T> dx(dy.shape().n, dy.shape().c, h, w);
		for (std::size_t n = 0; n < dy.shape().n; ++n)
			for (std::size_t c = 0; c < dy.shape().c; ++c) {
				const T g = dy.at(n, c, 0, 0) / static_cast<T>(h * w);
				std::fill_n(dx.channel(n, c), h * w, g);
			}
		return dx;
	}
};

/// Fully connected layer on (n, in, 1, 1) inputs; weight is (out, in, 1, 1).
template <class T>
class Dense final : public Layer<T> {
public:
	Dense(std::string name, std::size_t in, std::size_t out)
	    : Layer<T>(std::move(name)), weight_{"weight", Tensor<T>(out, in, 1, 1)}, bias_{"bias", Tensor<T>(1, out, 1, 1)} {}

	std::string kind() const override { return "dense"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }
	std::size_t in_features() const { return weight_.value.shape().c; }
	std::size_t out_features() const { return weight_.value.shape().n; }
	Param<T>& weight() { return weight_; }
	Param<T>& bias() { return bias_; }

	void initialize(Rng& rng) {
		glorot_uniform(weight_.value, in_features(), out_features(), rng);
		bias_.value.fill(T(0));
	}

	Shape output_shape(const Shape& in) const override {
		FASUCM_REQUIRE(in.sample() == in_features(), this->name() + ": expected " + std::to_string(in_features()) +
		                                                 " inputs, got " + std::to_string(in.sample()));
		return {in.n, out_features(), 1, 1};
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass&, Cache<T>* cache) const override {
		const Shape out = output_shape(x.shape());
		Tensor<T> y(out);
		ConstMatrixMap<T> in(x.data(), x.shape().n, in_features());
		ConstMatrixMap<T> w(weight_.value.data(), out_features(), in_features());
		MatrixMap<T> o(y.data(), out.n, out_features());
		o.noalias() = in * w.transpose();
		o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_features());
		if (cache) cache->tensors = {x};
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		const auto& x = cache.tensors.at(0);
		const std::size_t n = dy.shape().n;
		ConstMatrixMap<T> g(dy.data(), n, out_features());
		ConstMatrixMap<T> in(x.data(), n, in_features());
		if (grads) {
			MatrixMap<T> dw(grads->of(weight_).data(), out_features(), in_features());
			dw.noalias() += g.transpose() * in;
			Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(grads->of(bias_).data(), out_features());
			db += g.colwise().sum();
		}
		if (!input_grad) return {};
		Tensor<T> dx(x.shape());
		MatrixMap<T> d(dx.data(), n, in_features());
		d.noalias() = g * ConstMatrixMap<T>(weight_.value.data(), out_features(), in_features());
		return dx;
	}

	std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

private:
	Param<T> weight_, bias_;
};

} // namespace fasucm::nn
