#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fasucm/nn/layers.hpp"
#include "fasucm/nn/optim.hpp"
#include "fasucm/nn/sequential.hpp"

using namespace fasucm;
using namespace fasucm::nn;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
	Tensor<double> t(s);
	for (auto& v : t.values()) v = rng.normal() * scale;
	return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
	double s = 0;
	for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
	return s;
}

double rel_error(double a, double b, double floor) {
	return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference check of dx and all trainable parameter gradients of
/// `layer` for the scalar probe L = <w, f(x)>.
void expect_gradients_match(Layer<double>& layer, Tensor<double> x, Phase phase = Phase::inference,
                            double tol = 1e-6) {
	Rng rng(77);
	const Shape out = layer.output_shape(x.shape());
	const Tensor<double> w = random_tensor(out, rng);
	auto probe = [&]() {
		Rng drop(5);
		Pass pass{phase, &drop, false};
		return dot(w, layer.forward(x, pass, nullptr));
	};
	Rng drop(5);
	Pass pass{phase, &drop, true};
	Cache<double> cache;
	layer.forward(x, pass, &cache);
	Gradients<double> grads;
	const Tensor<double> dx = layer.backward(w, cache, &grads, true);

	const double h = 1e-5;
	for (std::size_t i = 0; i < x.size(); ++i) {
		const double saved = x[i];
		x[i] = saved + h;
		const double up = probe();
		x[i] = saved - h;
		const double down = probe();
		x[i] = saved;
		EXPECT_LT(rel_error(dx[i], (up - down) / (2 * h), 1e-4), tol) << layer.name() << " dx[" << i << "]";
	}
	for (auto* p : layer.params()) {
		if (!p->trainable) continue;
		const Tensor<double>& g = grads.of(*p);
		for (std::size_t i = 0; i < p->value.size(); ++i) {
			const double saved = p->value[i];
			p->value[i] = saved + h;
			const double up = probe();
			p->value[i] = saved - h;
			const double down = probe();
			p->value[i] = saved;
			EXPECT_LT(rel_error(g[i], (up - down) / (2 * h), 1e-4), tol) << layer.name() << "." << p->name << "[" << i << "]";
		}
	}
}

} // namespace

TEST(Conv2d, ZeroPaddedGradients) {
	Rng rng(1);
	Conv2d<double> conv("c", 2, 3, 3, 1);
	conv.initialize(rng);
	for (auto& v : conv.bias().value.values()) v = rng.normal();
	expect_gradients_match(conv, random_tensor({2, 2, 5, 4}, rng));
}

TEST(Conv2d, StridedReflectGradients) {
	Rng rng(2);
	Conv2d<double> conv("c", 3, 2, 3, 2, Padding::reflect);
	conv.initialize(rng);
	expect_gradients_match(conv, random_tensor({1, 3, 6, 6}, rng));
}

TEST(Conv2d, LargeKernelReflectGradients) {
	Rng rng(3);
	Conv2d<double> conv("c", 1, 2, 9, 1, Padding::reflect);
	conv.initialize(rng);
	expect_gradients_match(conv, random_tensor({1, 1, 10, 10}, rng));
}

TEST(Conv2d, WideOutputGradients) {
	// More than eight output channels at stride 1 takes the unfolded GEMM path.
	Rng rng(31);
	for (auto mode : {Padding::zero, Padding::reflect}) {
		Conv2d<double> conv("c", 2, 10, 3, 1, mode);
		conv.initialize(rng);
		for (auto& v : conv.bias().value.values()) v = rng.normal();
		expect_gradients_match(conv, random_tensor({2, 2, 5, 6}, rng));
	}
}

TEST(Conv2d, BothPathsMatchNaiveReflectConvolution) {
	auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
	Rng rng(32);
	for (std::size_t cout : {3u, 12u}) {
		Conv2d<double> conv("c", 2, cout, 5, 1, Padding::reflect);
		conv.initialize(rng);
		for (auto& v : conv.bias().value.values()) v = rng.normal();
		const auto x = random_tensor({2, 2, 6, 7}, rng);
		const auto y = conv.forward(x, {}, nullptr);
		const auto& w = conv.weight().value;
		double worst = 0;
		for (std::size_t n = 0; n < 2; ++n)
			for (std::size_t o = 0; o < cout; ++o)
				for (int i = 0; i < 6; ++i)
					for (int j = 0; j < 7; ++j) {
						double s = conv.bias().value[o];
						for (std::size_t c = 0; c < 2; ++c)
							for (int ky = 0; ky < 5; ++ky)
								for (int kx = 0; kx < 5; ++kx)
									s += w.at(o, c, ky, kx) * x.at(n, c, reflect(i + ky - 2, 6), reflect(j + kx - 2, 7));
						worst = std::max(worst, std::abs(y.at(n, o, i, j) - s));
					}
		EXPECT_LT(worst, 1e-12) << "cout " << cout;
	}
}

TEST(Conv2d, SamePaddingPreservesSize) {
	Conv2d<float> conv("c", 3, 16, 3);
	EXPECT_EQ(conv.output_shape({1, 3, 32, 32}), (Shape{1, 16, 32, 32}));
	EXPECT_EQ(conv.parameter_count(), 448u);
}

TEST(Conv2d, MatchesDirectConvolution) {
	Rng rng(4);
	Conv2d<double> conv("c", 2, 2, 3);
	conv.initialize(rng);
	const auto x = random_tensor({1, 2, 4, 4}, rng);
	const auto y = conv.forward(x, {}, nullptr);
	const auto& w = conv.weight().value;
	for (std::size_t o = 0; o < 2; ++o)
		for (int i = 0; i < 4; ++i)
			for (int j = 0; j < 4; ++j) {
				double s = 0;
				for (std::size_t c = 0; c < 2; ++c)
					for (int ky = 0; ky < 3; ++ky)
						for (int kx = 0; kx < 3; ++kx) {
							const int yy = i + ky - 1, xx = j + kx - 1;
							if (yy < 0 || yy >= 4 || xx < 0 || xx >= 4) continue;
							s += w.at(o, c, ky, kx) * x.at(0, c, yy, xx);
						}
				EXPECT_NEAR(y.at(0, o, i, j), s, 1e-12);
			}
}

TEST(Layers, ElementwiseGradients) {
	Rng rng(5);
	Relu<double> relu("r");
	expect_gradients_match(relu, random_tensor({2, 2, 3, 3}, rng));
	Sigmoid<double> sig("s");
	expect_gradients_match(sig, random_tensor({1, 3, 3, 3}, rng));
	Softmax<double> soft("sm");
	expect_gradients_match(soft, random_tensor({3, 4, 1, 1}, rng));
	Upsample2<double> up("u");
	expect_gradients_match(up, random_tensor({1, 2, 3, 2}, rng));
	MaxPool2<double> pool("p");
	expect_gradients_match(pool, random_tensor({2, 2, 4, 6}, rng));
	GlobalAvgPool<double> gap("g");
	expect_gradients_match(gap, random_tensor({2, 3, 3, 2}, rng));
	Flatten<double> flat("f");
	expect_gradients_match(flat, random_tensor({2, 3, 2, 2}, rng));
}

TEST(Layers, NormalisationGradients) {
	Rng rng(6);
	InstanceNorm<double> in("in", 3);
	for (auto* p : in.params()) for (auto& v : p->value.values()) v = rng.normal();
	expect_gradients_match(in, random_tensor({2, 3, 4, 4}, rng));
	BatchNorm<double> bn("bn", 3);
	for (auto* p : bn.params()) if (p->trainable) for (auto& v : p->value.values()) v = rng.normal();
	expect_gradients_match(bn, random_tensor({4, 3, 2, 2}, rng), Phase::training);
	expect_gradients_match(bn, random_tensor({4, 3, 2, 2}, rng), Phase::inference);
}

TEST(Layers, DenseAndDropoutGradients) {
	Rng rng(7);
	Dense<double> dense("d", 6, 4);
	dense.initialize(rng);
	expect_gradients_match(dense, random_tensor({3, 6, 1, 1}, rng));
	Dropout<double> drop("drop", 0.5);
	expect_gradients_match(drop, random_tensor({2, 5, 1, 1}, rng), Phase::training);
}

TEST(Sequential, ResidualChainGradients) {
	Rng rng(8);
	Sequential<double> body("body");
	body.add<Conv2d<double>>("a", 2, 2, 3, 1, Padding::reflect).initialize(rng);
	body.add<InstanceNorm<double>>("na", 2);
	body.add<Relu<double>>("ra");
	Sequential<double> net("net");
	net.add<Conv2d<double>>("in", 1, 2, 3).initialize(rng);
	net.add<Residual<double>>("res", body);
	net.add<Sigmoid<double>>("out");
	expect_gradients_match(net, random_tensor({1, 1, 5, 5}, rng), Phase::inference, 1e-5);
	const auto names = net.named_params();
	ASSERT_EQ(names.size(), 6u);
	EXPECT_EQ(names[2].first, "res.a.weight");
}

TEST(Sequential, CopyIsDeep) {
	Sequential<float> a;
	a.add<Dense<float>>("d", 2, 2);
	Sequential<float> b = a;
	b.params()[0]->value[0] = 5.0f;
	EXPECT_EQ(a.params()[0]->value[0], 0.0f);
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
	BatchNorm<double> bn("bn", 1, 0.9);
	Tensor<double> x(4, 1, 1, 1);
	for (int i = 0; i < 4; ++i) x[i] = i; // mean 1.5, biased var 1.25
	Cache<double> cache;
	bn.forward(x, Pass{Phase::training, nullptr, true}, &cache);
	bn.absorb(cache);
	auto ps = bn.params();
	EXPECT_NEAR(ps[2]->value[0], 0.15, 1e-12);
	EXPECT_NEAR(ps[3]->value[0], 0.9 + 0.1 * 1.25, 1e-12);
}

TEST(Optimizer, SgdMomentumStep) {
	Param<double> p{"w", Tensor<double>(1, 1, 1, 1, 1.0)};
	Gradients<double> g;
	g.of(p)[0] = 2.0;
	Optimizer<double> opt({&p}, {OptimizerKind::sgd, 0.1, 0.9});
	opt.step(g);
	EXPECT_NEAR(p.value[0], 0.8, 1e-12);
	opt.step(g);
	EXPECT_NEAR(p.value[0], 0.8 - 0.18 - 0.2, 1e-12);
}

TEST(Optimizer, AdamFirstStepIsLearningRate) {
	Param<double> p{"w", Tensor<double>(1, 1, 1, 1, 1.0)};
	Gradients<double> g;
	g.of(p)[0] = 3.0;
	OptimizerSettings s;
	s.kind = OptimizerKind::adam;
	s.learning_rate = 0.01;
	Optimizer<double> opt({&p}, s);
	opt.step(g);
	EXPECT_NEAR(p.value[0], 0.99, 1e-6);
}

TEST(Optimizer, SkipsFrozenParameters) {
	Param<double> p{"w", Tensor<double>(1, 1, 1, 1, 1.0), false};
	Gradients<double> g;
	g.of(p)[0] = 3.0;
	Optimizer<double> opt({&p}, {});
	opt.step(g);
	EXPECT_EQ(p.value[0], 1.0);
}
