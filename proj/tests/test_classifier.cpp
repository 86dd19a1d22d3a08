#include <gtest/gtest.h>

#include <filesystem>

#include "fasucm/classifier/model.hpp"

using namespace fasucm;
using namespace fasucm::classifier;
namespace fs = std::filesystem;

namespace {

/// Noise images whose colour balance depends on the class: live leans red,
/// spoof leans blue.
ImageBuffer toy_image(std::size_t label, std::size_t size, Rng& rng) {
	ImageBuffer img(size, size);
	const float bias[2][3] = {{0.65f, 0.45f, 0.35f}, {0.35f, 0.45f, 0.65f}};
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 0; y < size; ++y)
			for (std::size_t x = 0; x < size; ++x)
				img.at(c, y, x) = std::clamp(bias[label][c] + static_cast<float>(rng.uniform(-0.25, 0.25)), 0.0f, 1.0f);
	return img;
}

LabeledSet toy_set(std::size_t per_class, std::uint64_t seed, std::size_t size = 32) {
	Rng rng(seed);
	LabeledSet set;
	for (std::size_t i = 0; i < per_class; ++i) {
		set.add(toy_image(live_index, size, rng), live_index);
		set.add(toy_image(spoof_index, size, rng), spoof_index);
	}
	return set;
}

nlohmann::json tiny_descriptor() {
	return {{"name", "tiny"},
	        {"input_size", 224},
	        {"layers",
	         {{{"type", "conv"}, {"name", "c1"}, {"in", 3}, {"out", 8}, {"kernel", 3}, {"stride", 4}},
	          {{"type", "relu"}},
	          {{"type", "gap"}}}}};
}

fs::path tiny_weights(const fs::path& dir) {
	fs::create_directories(dir);
	auto trunk = trunk_from_descriptor(tiny_descriptor());
	Rng rng(11);
	dynamic_cast<nn::Conv2d<float>&>(trunk.layer(0)).initialize(rng);
	TensorArchive a;
	trunk.export_to(a);
	a.save(dir / "tiny.fta");
	return dir / "tiny.fta";
}

} // namespace

TEST(SpoofModNet, ParameterAuditMatchesLayerTable) {
	const auto m = build_spoof_modnet(1);
	const auto rows = audit(m.net, 32);
	const std::vector<std::pair<std::string, std::size_t>> expected = {
	    {"conv2d_1", 448},     {"batch_norm_1", 64}, {"conv2d_2", 2320}, {"batch_norm_2", 64},
	    {"conv2d_3", 4640},    {"batch_norm_3", 128}, {"conv2d_4", 9248}, {"batch_norm_4", 128},
	    {"dense_1", 131136},   {"batch_norm_5", 256}, {"dense_2", 130}};
	std::size_t total = 0, matched = 0;
	for (const auto& r : rows) {
		total += r.params;
		for (const auto& [name, count] : expected)
			if (r.name == name) {
				EXPECT_EQ(r.params, count) << name;
				++matched;
			}
	}
	EXPECT_EQ(matched, expected.size());
	EXPECT_EQ(total, 148562u);
	EXPECT_EQ(m.net.parameter_count(), 148562u);
}

TEST(SpoofModNet, ForwardShapesMatchLayerTable) {
	const auto m = build_spoof_modnet(2);
	const std::map<std::string, Shape> expected = {
	    {"conv2d_1", {1, 16, 32, 32}},    {"batch_norm_2", {1, 16, 32, 32}}, {"max_pool2d_1", {1, 16, 16, 16}},
	    {"conv2d_3", {1, 32, 16, 16}},    {"max_pool2d_2", {1, 32, 8, 8}},   {"flatten_1", {1, 2048, 1, 1}},
	    {"dense_1", {1, 64, 1, 1}},       {"dropout_3", {1, 64, 1, 1}},      {"dense_2", {1, 2, 1, 1}},
	    {"activation_6", {1, 2, 1, 1}}};
	// Real forward pass, not just the shape arithmetic.
	Rng rng(3);
	Tensor<float> h = toy_image(0, 32, rng).to_tensor<float>();
	for (std::size_t i = 0; i < m.net.size(); ++i) {
		h = m.net.layer(i).forward(h, {}, nullptr);
		if (auto it = expected.find(m.net.layer(i).name()); it != expected.end())
			EXPECT_EQ(h.shape(), it->second) << it->first;
	}
	EXPECT_EQ(m.net.size(), 23u);
}

TEST(Preprocess, ShapeConstantAndRoundTrip) {
	const auto out = preprocess(ImageBuffer(256, 256, 0.5f));
	EXPECT_EQ(out.height(), 32u);
	EXPECT_EQ(out.width(), 32u);
	ImageBuffer constant(256, 256, 0.3f);
	const auto flat = preprocess(constant);
	for (float v : flat.values()) EXPECT_NEAR(v, 0.3f, 1e-6);
	// Smooth random image: random 8x8 field upsampled to 32x32.
	Rng rng(5);
	ImageBuffer coarse(8, 8);
	for (auto& v : coarse.values()) v = static_cast<float>(rng.uniform());
	const auto small = resize_bilinear(coarse, 32, 32);
	const auto back = preprocess(resize_bilinear(small, 256, 256));
	double mae = 0;
	for (std::size_t i = 0; i < back.values().size(); ++i) mae += std::abs(back.values()[i] - small.values()[i]);
	EXPECT_LT(mae / static_cast<double>(back.values().size()), 0.02);
}

TEST(Preprocess, RoundTripOfNoiseMatchesSeparableKernel) {
	// Up by 8 then down by 8 samples each source pixel through the kernel
	// (1/32, 15/16, 1/32) along each axis.
	Rng rng(6);
	ImageBuffer noise(32, 32);
	for (auto& v : noise.values()) v = static_cast<float>(rng.uniform());
	const auto back = preprocess(resize_bilinear(noise, 256, 256));
	const double k[3] = {1.0 / 32, 15.0 / 16, 1.0 / 32};
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 1; y < 31; ++y)
			for (std::size_t x = 1; x < 31; ++x) {
				double expect = 0;
				for (int dy = -1; dy <= 1; ++dy)
					for (int dx = -1; dx <= 1; ++dx)
						expect += k[dy + 1] * k[dx + 1] * noise.at(c, y + dy, x + dx);
				EXPECT_NEAR(back.at(c, y, x), expect, 1e-5);
			}
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
	Rng rng(8);
	Tensor<float> logits(4, 2, 1, 1);
	for (auto& v : logits.values()) v = static_cast<float>(rng.uniform(-2, 2));
	const std::vector<std::size_t> labels = {0, 1, 1, 0};
	Tensor<float> grad;
	cross_entropy(logits, labels, &grad);
	for (std::size_t i = 0; i < logits.size(); ++i) {
		auto plus = logits, minus = logits;
		plus[i] += 1e-2f;
		minus[i] -= 1e-2f;
		const double fd = (cross_entropy(plus, labels, nullptr) - cross_entropy(minus, labels, nullptr)) / 2e-2;
		EXPECT_NEAR(grad[i], fd, 1e-4);
	}
}

TEST(Train, SeparableToySetReachesHighAccuracy) {
	const auto data = toy_set(200, 1);
	auto m = build_spoof_modnet(4);
	TrainConfig config;
	config.seed = 4;
	train(m, data, config);
	EXPECT_EQ(m.fingerprint.epoch_losses.size(), 50u);
	EXPECT_GT(accuracy(m, data), 0.95);
	EXPECT_GT(accuracy(m, toy_set(50, 99)), 0.95);
}

TEST(Train, LossDecreasesOverFirstEpochs) {
	const auto data = toy_set(40, 2);
	int decreasing = 0;
	for (std::uint64_t seed = 0; seed < 20; ++seed) {
		auto m = build_spoof_modnet(seed);
		TrainConfig config;
		config.epochs = 5;
		config.seed = seed;
		train(m, data, config);
		decreasing += m.fingerprint.epoch_losses.back() < m.fingerprint.epoch_losses.front();
	}
	EXPECT_GE(decreasing, 19);
}

TEST(Train, DeterministicForFixedSeed) {
	const auto data = toy_set(12, 3);
	TrainConfig config;
	config.epochs = 3;
	config.seed = 17;
	auto a = build_spoof_modnet(17), b = build_spoof_modnet(17);
	train(a, data, config);
	train(b, data, config);
	EXPECT_EQ(a.fingerprint.final_loss, b.fingerprint.final_loss);
	EXPECT_EQ(a.checksum(), b.checksum());
	auto c = build_spoof_modnet(17);
	config.seed = 18;
	train(c, data, config);
	EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Train, RejectsSingleClassAndBadConfig) {
	auto data = toy_set(4, 4);
	LabeledSet live_only;
	for (std::size_t i = 0; i < data.size(); ++i)
		if (data.labels[i] == live_index) live_only.add(data.images[i], live_index);
	auto m = build_spoof_modnet(0);
	EXPECT_THROW(train(m, live_only, {}), ContractError);
	TrainConfig bad;
	bad.learning_rate = -1;
	EXPECT_THROW(train(m, data, bad), ConfigError);
}

TEST(Train, DivergenceReportsTrace) {
	auto data = toy_set(4, 5);
	data.images[0].at(0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
	auto m = build_spoof_modnet(0);
	TrainConfig config;
	config.epochs = 2;
	try {
		train(m, data, config);
		FAIL();
	} catch (const ClassifierDivergenceError& e) {
		EXPECT_FALSE(e.trace().empty());
	}
}

TEST(Predict, ProbabilitiesSumToOne) {
	const auto m = build_spoof_modnet(6);
	Rng rng(6);
	for (int i = 0; i < 1000; ++i) {
		ImageBuffer img(32, 32);
		for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
		const auto p = predict(m, img);
		EXPECT_NEAR(p.p_live + p.p_spoof, 1.0, 1e-6);
		EXPECT_GE(p.p_live, 0.0);
		EXPECT_LE(p.p_spoof, 1.0);
	}
}

TEST(Predict, TieGoesToSpoof) {
	auto m = build_spoof_modnet(7);
	auto& head = dynamic_cast<nn::Dense<float>&>(m.net.layer(m.net.index_of("dense_2")));
	head.weight().value.fill(0.0f);
	head.bias().value.fill(0.0f);
	const auto p = predict(m, ImageBuffer(32, 32, 0.4f));
	EXPECT_EQ(p.p_live, 0.5);
	EXPECT_TRUE(p.is_spoof());
}

TEST(Predict, OverfitModelIsConfidentOnItsTrainingImages) {
	const auto data = toy_set(4, 9);
	auto m = build_spoof_modnet(9);
	TrainConfig config;
	config.optimizer = nn::OptimizerKind::adam;
	config.learning_rate = 1e-3;
	config.epochs = 250;
	config.batch_size = 4;
	config.pool_dropout = config.dense_dropout = 0.0;
	m = build_spoof_modnet(9, config);
	train(m, data, config);
	for (std::size_t i = 0; i < data.size(); ++i) {
		const auto p = predict(m, data.images[i]);
		EXPECT_GT(data.labels[i] == live_index ? p.p_live : p.p_spoof, 0.9);
	}
}

TEST(ExternalBackbone, MissingWeightsIsConfigError) {
	EXPECT_THROW(attach_external_backbone(tiny_descriptor(), "/no/such/weights.fta", 1), ConfigError);
}

TEST(ExternalBackbone, UntrainedModelKeepsPretrainedTrunk) {
	const auto dir = fs::temp_directory_path() / "fasucm_backbone";
	const auto weights = tiny_weights(dir);
	auto m = attach_external_backbone(tiny_descriptor(), weights, 3);
	EXPECT_EQ(m.input_size, 224u);
	const auto pretrained = TensorArchive::load(weights);
	auto* trunk = m.net.layer(0).nested_sequential();
	ASSERT_NE(trunk, nullptr);
	TensorArchive now;
	trunk->export_to(now);
	EXPECT_EQ(now.checksum(), pretrained.checksum());
	EXPECT_EQ(m.net.layer(1).name(), "head");
	// Inference routes a 256 px crop to the 224 px input.
	const auto p = predict(m, ImageBuffer(256, 256, 0.5f));
	EXPECT_NEAR(p.p_live + p.p_spoof, 1.0, 1e-6);
}

TEST(ExternalBackbone, HeadFineTuneSeparatesToySet) {
	const auto dir = fs::temp_directory_path() / "fasucm_backbone";
	const auto weights = tiny_weights(dir);
	auto m = attach_external_backbone(tiny_descriptor(), weights, 3);
	Rng rng(12);
	LabeledSet data;
	for (int i = 0; i < 100; ++i) {
		const std::size_t label = static_cast<std::size_t>(i % 2);
		data.add(preprocess(toy_image(label, 256, rng), m.input_size), label);
	}
	auto config = external_finetune_defaults();
	config.steps = 200;
	config.batch_size = 20;
	train(m, data, config);
	EXPECT_GT(accuracy(m, data), 0.9);
	TensorArchive now;
	m.net.layer(0).nested_sequential()->export_to(now);
	EXPECT_EQ(now.checksum(), TensorArchive::load(weights).checksum());
}

TEST(ModelIo, RoundTrip) {
	const auto dir = fs::temp_directory_path() / "fasucm_classifier_io";
	fs::remove_all(dir);
	auto m = build_spoof_modnet(21);
	m.subject_id = "s9";
	TrainConfig config;
	config.epochs = 1;
	train(m, toy_set(8, 21), config);
	const auto path = save_classifier(m, dir, "s9");
	const auto back = load_classifier(path);
	EXPECT_EQ(back.subject_id, "s9");
	EXPECT_EQ(back.checksum(), m.checksum());
	EXPECT_EQ(back.fingerprint.data_hash, m.fingerprint.data_hash);
	const ImageBuffer probe(32, 32, 0.25f);
	EXPECT_EQ(predict(back, probe).p_spoof, predict(m, probe).p_spoof);
	EXPECT_THROW(load_classifier(dir / "missing.json"), ConfigError);

	const auto weights = tiny_weights(dir / "w");
	const auto ext = attach_external_backbone(tiny_descriptor(), weights, 2);
	const auto ext_back = load_classifier(save_classifier(ext, dir, "ext"));
	EXPECT_EQ(ext_back.checksum(), ext.checksum());
	EXPECT_EQ(ext_back.backbone, Backbone::external_backbone);
}
