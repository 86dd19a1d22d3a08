#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fasucm/core/random.hpp"
#include "fasucm/core/tensor.hpp"

namespace fasucm::nn {

template <class T>
class Sequential;

/// A named parameter tensor. Non-trainable parameters (running statistics)
/// are counted and serialised but never receive gradients.
template <class T>
struct Param {
	std::string name;
	Tensor<T> value;
	bool trainable = true;
};

enum class Phase { inference, training };

/// Per-call execution options. `rng` drives dropout masks in training.
struct Pass {
	Phase phase = Phase::inference;
	Rng* rng = nullptr;
	bool record = false;

	bool training() const { return phase == Phase::training; }
};

/// Whatever a layer's forward call saves for its backward call.
template <class T>
struct Cache {
	std::vector<Tensor<T>> tensors;
	std::vector<std::uint32_t> indices;
	std::vector<Cache> nested;
};

/// Accumulated parameter gradients, keyed by parameter identity.
template <class T>
class Gradients {
public:
	Tensor<T>& of(const Param<T>& p) {
		auto it = grads_.find(&p);
		if (it == grads_.end()) it = grads_.emplace(&p, Tensor<T>(p.value.shape())).first;
		return it->second;
	}
	const Tensor<T>* find(const Param<T>& p) const {
		auto it = grads_.find(&p);
		return it == grads_.end() ? nullptr : &it->second;
	}
	void zero() {
		for (auto& [_, g] : grads_) g.fill(T(0));
	}

private:
	std::map<const Param<T>*, Tensor<T>> grads_;
};

template <class T>
class Layer {
public:
	explicit Layer(std::string name) : name_(std::move(name)) {}
	virtual ~Layer() = default;

	const std::string& name() const { return name_; }
	virtual std::string kind() const = 0;
	virtual std::unique_ptr<Layer> clone() const = 0;
	virtual Shape output_shape(const Shape& in) const = 0;

	/// Forward pass. When `cache` is non-null it receives what backward needs.
	virtual Tensor<T> forward(const Tensor<T>& x, const Pass& pass, Cache<T>* cache) const = 0;

	/// Backward pass. Parameter gradients are accumulated into `grads` when it
	/// is non-null; the input gradient is returned when `input_grad` is set.
	virtual Tensor<T> backward(const Tensor<T>& dy, const Cache<T>& cache, Gradients<T>* grads,
	                           bool input_grad) const = 0;

	virtual std::vector<Param<T>*> params() { return {}; }
	/// Container layers expose their inner chain for qualified parameter naming.
	virtual Sequential<T>* nested_sequential() { return nullptr; }
	std::vector<const Param<T>*> const_params() const {
		auto ps = const_cast<Layer*>(this)->params();
		return {ps.begin(), ps.end()};
	}

	/// Fold statistics gathered during a training forward pass into the layer
	/// (batch-norm running averages).
	virtual void absorb(const Cache<T>&) {}

	std::size_t parameter_count() const {
		std::size_t n = 0;
		for (const auto* p : const_params()) n += p->value.size();
		return n;
	}

private:
	std::string name_;
};

template <class T>
void kaiming_normal(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
	const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
	for (auto& v : w.values()) v = static_cast<T>(rng.normal() * std);
}

template <class T>
void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
	const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
	for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

} // namespace fasucm::nn
