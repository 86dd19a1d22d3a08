#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fasucm/core/hash.hpp"
#include "fasucm/core/random.hpp"
#include "fasucm/core/tensor_archive.hpp"
#include "fasucm/core/text.hpp"
#include "fasucm/image/image.hpp"

namespace fs = std::filesystem;
using namespace fasucm;

namespace {

fs::path scratch(const std::string& name) {
	auto p = fs::temp_directory_path() / ("fasucm_core_" + name);
	fs::remove_all(p);
	fs::create_directories(p);
	return p;
}

} // namespace

TEST(Rng, SameSeedSameStream) {
	Rng a(42), b(42), c(43);
	for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
	EXPECT_NE(Rng(42).next(), c.next());
}

TEST(Rng, BelowStaysInRange) {
	Rng r(1);
	for (int i = 0; i < 10000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Rng, ShuffleIsAPermutation) {
	Rng r(3);
	std::vector<int> v(50);
	std::iota(v.begin(), v.end(), 0);
	r.shuffle(v);
	auto sorted = v;
	std::sort(sorted.begin(), sorted.end());
	for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Hash, KnownSha256) {
	EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Text, EditDistance) {
	EXPECT_EQ(text::edit_distance("batchsz", "batch"), 2u);
	EXPECT_EQ(text::edit_distance("", "abc"), 3u);
	EXPECT_EQ(text::fixed6(0.22), "0.220000");
	EXPECT_EQ(text::fixed6(-0.0000001), "0.000000");
}

TEST(TensorArchive, SaveLoadPreservesContentAndChecksum) {
	const auto dir = scratch("archive");
	TensorArchive a;
	Tensor<float> t(2, 3, 1, 1);
	for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.5f;
	a.put("layer.weight", t);
	a.put("layer.bias", Tensor<float>(1, 3, 1, 1, 1.0f));
	a.save(dir / "a.fta");
	const auto b = TensorArchive::load(dir / "a.fta");
	EXPECT_EQ(b.get("layer.weight"), t);
	EXPECT_EQ(a.checksum(), b.checksum());
	EXPECT_EQ(b.entries().front().first, "layer.weight");
}

TEST(TensorArchive, TruncatedFileNamesTensor) {
	const auto dir = scratch("trunc");
	TensorArchive a;
	a.put("first", Tensor<float>(1, 4, 1, 1));
	a.put("second", Tensor<float>(1, 64, 1, 1));
	a.save(dir / "a.fta");
	fs::resize_file(dir / "a.fta", fs::file_size(dir / "a.fta") - 16);
	try {
		TensorArchive::load(dir / "a.fta");
		FAIL() << "expected a parse error";
	} catch (const ParseError& e) {
		EXPECT_NE(std::string(e.what()).find("second"), std::string::npos) << e.what();
	}
}

TEST(TensorArchive, MissingFileIsConfigError) {
	EXPECT_THROW(TensorArchive::load("/nonexistent/x.fta"), ConfigError);
}

TEST(Image, ResizeOfConstantIsConstant) {
	ImageBuffer img(256, 256, 0.37f);
	const auto small = resize_bilinear(img, 32, 32);
	ASSERT_EQ(small.height(), 32u);
	for (float v : small.values()) EXPECT_FLOAT_EQ(v, 0.37f);
}

TEST(Image, PngRoundTripIsQuantised) {
	const auto dir = scratch("png");
	ImageBuffer img(5, 7);
	Rng r(9);
	for (auto& v : img.values()) v = static_cast<float>(r.uniform());
	save_png(dir / "x.png", img);
	const auto back = load_image(dir / "x.png");
	ASSERT_EQ(back.height(), 5u);
	ASSERT_EQ(back.width(), 7u);
	for (std::size_t i = 0; i < img.values().size(); ++i)
		EXPECT_NEAR(back.values()[i], img.values()[i], 0.5 / 255 + 1e-6);
	EXPECT_EQ(back, quantize8(img));
}

TEST(Image, CropRejectsOutOfBounds) {
	ImageBuffer img(10, 10);
	EXPECT_THROW(crop(img, Box{5, 5, 6, 2}), ContractError);
	EXPECT_EQ(crop(img, Box{5, 5, 5, 2}).width(), 5u);
}
