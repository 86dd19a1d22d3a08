#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fasucm/core/tensor_archive.hpp"
#include "fasucm/nn/layer.hpp"

namespace fasucm::nn {

/// Ordered chain of layers; itself a layer so chains nest (residual bodies).
template <class T>
class Sequential : public Layer<T> {
public:
	explicit Sequential(std::string name = "net") : Layer<T>(std::move(name)) {}
	Sequential(const Sequential& other) : Layer<T>(other) {
		for (const auto& l : other.layers_) layers_.push_back(l->clone());
	}
	Sequential& operator=(const Sequential& other) {
		if (this != &other) *this = Sequential(other);
		return *this;
	}
	Sequential(Sequential&&) noexcept = default;
	Sequential& operator=(Sequential&&) noexcept = default;

	std::string kind() const override { return "sequential"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sequential>(*this); }
	Sequential* nested_sequential() override { return this; }

	template <class L, class... Args>
	L& add(Args&&... args) {
		auto layer = std::make_unique<L>(std::forward<Args>(args)...);
		L& ref = *layer;
		layers_.push_back(std::move(layer));
		return ref;
	}
	void append(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

	std::size_t size() const { return layers_.size(); }
	Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
	const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

	/// Index of the layer called `name`, or size() when absent.
	std::size_t index_of(const std::string& name) const {
		for (std::size_t i = 0; i < layers_.size(); ++i)
			if (layers_[i]->name() == name) return i;
		return layers_.size();
	}

	Shape output_shape(const Shape& in) const override {
		Shape s = in;
		for (const auto& l : layers_) s = l->output_shape(s);
		return s;
	}

	Tensor<T> forward(const Tensor<T>& x, const Pass& pass, Cache<T>* cache) const override {
		return forward_range(x, pass, cache, layers_.size());
	}

	/// Runs layers [0, stop). `observe(i, output)` is invoked after each layer.
	template <class Observer>
	Tensor<T> forward_range(const Tensor<T>& x, const Pass& pass, Cache<T>* cache, std::size_t stop,
	                        Observer&& observe) const {
		if (cache) cache->nested.assign(stop, Cache<T>{});
		Tensor<T> h = x;
		for (std::size_t i = 0; i < stop; ++i) {
			h = layers_[i]->forward(h, pass, cache ? &cache->nested[i] : nullptr);
			observe(i, h);
		}
		return h;
	}
	Tensor<T> forward_range(const Tensor<T>& x, const Pass& pass, Cache<T>* cache, std::size_t stop) const {
		return forward_range(x, pass, cache, stop, [](std::size_t, const Tensor<T>&) {});
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		return backward_range(dy, cache, grads, cache.nested.size(), input_grad);
	}

	/// Back-propagates `dy`, the gradient w.r.t. the output of layer stop-1.
	Tensor<T> backward_range(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads, std::size_t stop,
	                         bool input_grad) const {
		return backward_injected(dy, cache, grads, stop, input_grad, {});
	}

	/// As backward_range, additionally adding `extra[i]` to the gradient of
	/// layer i's output before stepping through layer i.
	Tensor<T> backward_injected(Tensor<T> dy, const Cache<T>& cache, Gradients<T>* grads, std::size_t stop,
	                            bool input_grad, const std::map<std::size_t, Tensor<T>>& extra) const {
		for (std::size_t i = stop; i-- > 0;) {
			if (auto it = extra.find(i); it != extra.end()) {
				if (dy.empty())
					dy = it->second;
				else
					dy += it->second;
			}
			const bool need_dx = i > 0 || input_grad;
			dy = layers_[i]->backward(dy, cache.nested.at(i), grads, need_dx);
		}
		return dy;
	}

	std::vector<Param<T>*> params() override {
		std::vector<Param<T>*> out;
		for (auto& l : layers_)
			for (auto* p : l->params()) out.push_back(p);
		return out;
	}

	/// Parameters with qualified names ("conv1.weight", "res1.conv_a.weight").
	std::vector<std::pair<std::string, Param<T>*>> named_params() {
		std::vector<std::pair<std::string, Param<T>*>> out;
		for (auto& l : layers_) {
			if (auto* nested = l->nested_sequential()) {
				for (auto& [n, p] : nested->named_params()) out.emplace_back(l->name() + "." + n, p);
			} else {
				for (auto* p : l->params()) out.emplace_back(l->name() + "." + p->name, p);
			}
		}
		return out;
	}

	void absorb(const Cache<T>& cache) override {
		for (std::size_t i = 0; i < cache.nested.size() && i < layers_.size(); ++i) layers_[i]->absorb(cache.nested[i]);
	}

	void export_to(TensorArchive& archive, const std::string& prefix = "") const {
		for (auto& [n, p] : const_cast<Sequential*>(this)->named_params())
			archive.put(prefix + n, p->value.template cast<float>());
	}

	/// Loads every parameter from `archive`; errors name the first missing or mis-shaped tensor.
	void import_from(const TensorArchive& archive, const std::string& prefix = "") {
		for (auto& [n, p] : named_params()) {
			const std::string key = prefix + n;
			if (!archive.contains(key)) throw ParseError("missing tensor '" + key + "'");
			const auto& t = archive.get(key);
			if (!(t.shape() == p->value.shape()))
				throw ParseError("tensor '" + key + "' has shape " + t.shape().str() + ", expected " +
				                 p->value.shape().str());
			p->value = t.template cast<T>();
		}
	}

private:
	std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// y = x + body(x)
template <class T>
class Residual final : public Layer<T> {
public:
	Residual(std::string name, Sequential<T> body) : Layer<T>(std::move(name)), body_(std::move(body)) {}

	std::string kind() const override { return "residual"; }
	std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Residual>(*this); }
	Shape output_shape(const Shape& in) const override {
		const Shape out = body_.output_shape(in);
		FASUCM_REQUIRE(out == in, this->name() + ": residual body must preserve shape");
		return in;
	}
	Sequential<T>& body() { return body_; }
	Sequential<T>* nested_sequential() override { return &body_; }

	Tensor<T> forward(const Tensor<T>& x, const Pass& pass, Cache<T>* cache) const override {
		if (cache) cache->nested.assign(1, Cache<T>{});
		Tensor<T> y = body_.forward(x, pass, cache ? &cache->nested[0] : nullptr);
		y += x;
		return y;
	}

	Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                   bool input_grad) const override {
		Tensor<T> dx = body_.backward(dy, cache.nested.at(0), grads, input_grad);
		if (!input_grad) return {};
		dx += dy;
		return dx;
	}

	std::vector<Param<T>*> params() override { return body_.params(); }
	void absorb(const Cache<T>& cache) override { body_.absorb(cache.nested.at(0)); }

private:
	Sequential<T> body_;
};

} // namespace fasucm::nn
