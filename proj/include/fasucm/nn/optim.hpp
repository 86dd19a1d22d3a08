#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/nn/layer.hpp"

namespace fasucm::nn {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
inline OptimizerKind optimizer_from_string(const std::string& s) {
	if (s == "sgd") return OptimizerKind::sgd;
	if (s == "adam") return OptimizerKind::adam;
	throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerSettings {
	OptimizerKind kind = OptimizerKind::sgd;
	double learning_rate = 1e-3;
	double momentum = 0.9; // sgd
	double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8; // adam
};

/// First-order optimiser over a fixed parameter list. Only trainable
/// parameters with an accumulated gradient are touched.
template <class T>
class Optimizer {
public:
	Optimizer(std::vector<Param<T>*> params, OptimizerSettings settings)
	    : params_(std::move(params)), settings_(settings) {
		FASUCM_REQUIRE(settings_.learning_rate > 0, "learning rate must be positive");
	}

	void step(const Gradients<T>& grads) {
		++t_;
		for (auto* p : params_) {
			if (!p->trainable) continue;
			const Tensor<T>* g = grads.find(*p);
			if (!g) continue;
			auto& state = state_[p];
			if (state.first.empty()) {
				state.first = Tensor<T>(p->value.shape());
				state.second = Tensor<T>(p->value.shape());
			}
			if (settings_.kind == OptimizerKind::sgd)
				sgd(*p, *g, state.first);
			else
				adam(*p, *g, state.first, state.second);
		}
	}

	std::size_t steps() const { return t_; }

private:
	void sgd(Param<T>& p, const Tensor<T>& g, Tensor<T>& velocity) const {
		const T lr = static_cast<T>(settings_.learning_rate), mu = static_cast<T>(settings_.momentum);
		for (std::size_t i = 0; i < p.value.size(); ++i) {
			velocity[i] = mu * velocity[i] - lr * g[i];
			p.value[i] += velocity[i];
		}
	}

	void adam(Param<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) const {
		const double b1 = settings_.beta1, b2 = settings_.beta2;
		const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
		const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
		const T step = static_cast<T>(settings_.learning_rate * std::sqrt(correction2) / correction1);
		const T eps = static_cast<T>(settings_.epsilon * std::sqrt(correction2));
		for (std::size_t i = 0; i < p.value.size(); ++i) {
			m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1 - b1) * g[i];
			v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1 - b2) * g[i] * g[i];
			p.value[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
		}
	}

	std::vector<Param<T>*> params_;
	OptimizerSettings settings_;
	std::map<const Param<T>*, std::pair<Tensor<T>, Tensor<T>>> state_;
	std::size_t t_ = 0;
};

} // namespace fasucm::nn
