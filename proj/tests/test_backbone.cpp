#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>

#include "fasucm/perceptual/backbone.hpp"

namespace fs = std::filesystem;
using namespace fasucm;
using namespace fasucm::perceptual;

namespace {

const fs::path& weights() {
	static const fs::path path = [] {
		const auto dir = fs::temp_directory_path() / "fasucm_backbone_weights";
		fs::remove_all(dir);
		return write_random_weights(dir, 11);
	}();
	return path;
}

const FeatureExtractor<float>& extractor() {
	static const FeatureExtractor<float> fx = load_backbone<float>(weights());
	return fx;
}

} // namespace

TEST(Backbone, TopologyMatchesVgg19Trunk) {
	const auto& table = vgg19_layer_table();
	std::size_t convs = 0, pools = 0;
	std::vector<std::size_t> plan;
	for (const auto& l : table) {
		if (l.kind == LayerKind::conv3x3_relu) {
			++convs;
			plan.push_back(l.channels);
		} else {
			++pools;
		}
	}
	EXPECT_EQ(convs, 16u);
	EXPECT_EQ(pools, 5u);
	const std::vector<std::size_t> expected = {64, 64, 128, 128, 256, 256, 256, 256,
	                                           512, 512, 512, 512, 512, 512, 512, 512};
	EXPECT_EQ(plan, expected);
}

TEST(Backbone, FirstKernelShape) {
	const auto& fx = extractor();
	const auto& conv = dynamic_cast<const nn::Conv2d<float>&>(fx.network().layer(0));
	EXPECT_EQ(conv.weight().value.shape(), (Shape{64, 3, 3, 3}));
}

TEST(Backbone, ChecksumIsDeterministic) {
	const auto a = load_backbone<float>(weights());
	const auto b = load_backbone<float>(weights());
	EXPECT_EQ(a.checksum(), b.checksum());
	EXPECT_EQ(a.checksum().size(), 64u);
}

TEST(Backbone, TruncatedArchiveNamesLayer) {
	const auto dir = fs::temp_directory_path() / "fasucm_backbone_trunc";
	fs::remove_all(dir);
	const auto manifest = write_random_weights(dir, 3);
	const auto archive = dir / "vgg19.fta";
	fs::resize_file(archive, fs::file_size(archive) / 3);
	try {
		load_backbone<float>(manifest);
		FAIL() << "expected failure";
	} catch (const ParseError& e) {
		EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos) << e.what();
	}
}

TEST(Backbone, ShapeMismatchNamesFirstOffendingLayer) {
	const auto dir = fs::temp_directory_path() / "fasucm_backbone_shape";
	fs::remove_all(dir);
	const auto manifest = write_random_weights(dir, 3);
	auto archive = TensorArchive::load(dir / "vgg19.fta");
	archive.put("conv2_1.weight", Tensor<float>(128, 32, 3, 3));
	archive.save(dir / "vgg19.fta");
	// drop checksum so the shape check is reached
	auto j = nlohmann::json::parse(std::ifstream(manifest));
	j["checksum"] = "";
	std::ofstream(manifest) << j.dump();
	try {
		load_backbone<float>(manifest);
		FAIL() << "expected failure";
	} catch (const ParseError& e) {
		EXPECT_NE(std::string(e.what()).find("conv2_1.weight"), std::string::npos) << e.what();
	}
}

TEST(Backbone, MissingFileIsConfigError) {
	EXPECT_THROW(load_backbone<float>("/nonexistent/vgg19.json"), ConfigError);
}

TEST(Backbone, Relu33OfA256InputIs256x64x64) {
	const Tensor<float> x(1, 3, 256, 256, 0.5f);
	const auto maps = extractor().features(x, {"relu3_3"});
	EXPECT_EQ(maps.at("relu3_3").shape(), (Shape{1, 256, 64, 64}));
}

TEST(Backbone, PoolSizesFor224Input) {
	const Tensor<float> x(1, 3, 224, 224, 0.25f);
	const auto maps = extractor().features(x, {"pool1", "pool2", "pool3", "pool4", "pool5"});
	const std::size_t expected[] = {112, 56, 28, 14, 7};
	for (int i = 0; i < 5; ++i) {
		const auto& s = maps.at("pool" + std::to_string(i + 1)).shape();
		EXPECT_EQ(s.h, expected[i]);
		EXPECT_EQ(s.w, expected[i]);
	}
}

TEST(Backbone, ZeroInputIsFinite) {
	const Tensor<float> x(1, 3, 32, 32, 0.0f);
	const auto maps = extractor().features(x, {"relu1_2", "relu4_3", "pool5"});
	for (const auto& [_, m] : maps)
		for (float v : m.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Backbone, IdenticalBatchItemsGiveIdenticalMaps) {
	Rng rng(2);
	Tensor<float> one(1, 3, 32, 32);
	for (auto& v : one.values()) v = static_cast<float>(rng.uniform());
	const std::vector<Tensor<float>> items = {one, one};
	const auto maps = extractor().features(stack<float>(items), {"relu2_2"});
	const auto& m = maps.at("relu2_2");
	EXPECT_TRUE(std::equal(m.sample(0), m.sample(0) + m.shape().sample(), m.sample(1)));
}

TEST(Backbone, UnknownTapIsContractError) {
	const Tensor<float> x(1, 3, 32, 32);
	EXPECT_THROW(extractor().features(x, {"relu9_9"}), ContractError);
}

TEST(Backbone, TooSmallInputIsContractError) {
	const Tensor<float> x(1, 3, 4, 4);
	EXPECT_THROW(extractor().features(x, {"relu4_3"}), ContractError);
	EXPECT_EQ(extractor().min_input_size({"relu4_3"}), 8u);
	EXPECT_EQ(extractor().min_input_size({"pool5"}), 32u);
}

TEST(Gram, ConstantMapClosedForm) {
	// C=2, H=W=2, all entries v: every entry is v^2 * (H W) / (C H W) = v^2 / 2
	const double v = 1.5;
	const Tensor<double> f(1, 2, 2, 2, v);
	const auto g = gram(f);
	for (int i = 0; i < 2; ++i)
		for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(g(i, j), v * v / 2);
}

TEST(Gram, SingleChannelIsMeanOfSquares) {
	Tensor<double> f(1, 1, 2, 3);
	double sq = 0;
	for (std::size_t i = 0; i < f.size(); ++i) {
		f[i] = 0.3 * i - 0.5;
		sq += f[i] * f[i];
	}
	const auto g = gram(f);
	ASSERT_EQ(g.rows(), 1);
	EXPECT_NEAR(g(0, 0), sq / 6, 1e-15);
}

TEST(Gram, RandomMapIsSymmetricPsd) {
	Rng rng(12);
	Tensor<double> f(1, 4, 3, 3);
	for (auto& v : f.values()) v = rng.normal();
	const auto g = gram(f);
	EXPECT_EQ((g - g.transpose()).norm(), 0.0);
	Eigen::SelfAdjointEigenSolver<nn::RowMatrix<double>> es(g);
	EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
}
