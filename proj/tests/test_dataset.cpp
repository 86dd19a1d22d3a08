#include <gtest/gtest.h>

#include <opencv2/videoio.hpp>

#include <filesystem>
#include <fstream>

#include "fasucm/dataset/manifest.hpp"

namespace fs = std::filesystem;
using namespace fasucm;
using namespace fasucm::dataset;

namespace {

fs::path scratch(const std::string& name) {
	const auto dir = fs::temp_directory_path() / ("fasucm_dataset_" + name);
	fs::remove_all(dir);
	fs::create_directories(dir);
	return dir;
}

fs::path write_video(const fs::path& path, int frames) {
	cv::VideoWriter w(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), 10, cv::Size(32, 24));
	for (int i = 0; i < frames; ++i) w.write(cv::Mat(24, 32, CV_8UC3, cv::Scalar(i, 2 * i, 60)));
	return path;
}

void touch_frame(const fs::path& path) { save_png(path, ImageBuffer(4, 4, 0.5f)); }

/// root/<s>/live/<s>_l<v>/<f>.png and root/<s>/spoof/print/<s>_p<v>/<f>.png
fs::path crop_tree(const std::string& name, int subjects, int videos, int frames) {
	const auto root = scratch(name);
	for (int s = 0; s < subjects; ++s) {
		const std::string sid = "s" + std::to_string(s);
		for (int v = 0; v < videos; ++v)
			for (int f = 0; f < frames; ++f) {
				touch_frame(root / sid / "live" / (sid + "_l" + std::to_string(v)) / (std::to_string(f) + ".png"));
				touch_frame(root / sid / "spoof" / "print" / (sid + "_p" + std::to_string(v)) /
				            (std::to_string(f) + ".png"));
			}
	}
	return root;
}

DatasetManifest equal_videos(int videos, int frames, Label label = Label::live) {
	DatasetManifest m;
	for (int v = 0; v < videos; ++v)
		for (int f = 0; f < frames; ++f) {
			SampleRecord r;
			r.subject_id = "a";
			r.video_id = "v" + std::to_string(v);
			r.frame_index = static_cast<std::uint64_t>(f);
			r.label = label;
			r.attack_type = label == Label::live ? AttackType::none : AttackType::print;
			r.path = r.video_id + "/" + std::to_string(f) + ".png";
			m.records.push_back(r);
		}
	return m;
}

std::size_t count_split(const DatasetManifest& m, Split s) {
	return static_cast<std::size_t>(
	    std::count_if(m.records.begin(), m.records.end(), [&](const SampleRecord& r) { return r.split == s; }));
}

} // namespace

TEST(ExtractFrames, StrideSelectsEveryNthFrame) {
	const auto dir = scratch("video");
	const auto video = write_video(dir / "clip.avi", 100);
	EXPECT_EQ(extract_frames(video, 1).size(), 100u);
	EXPECT_EQ(extract_frames(video, 7).size(), 15u); // frames 0, 7, ..., 98
	EXPECT_THROW(extract_frames(video, 0), ContractError);
}

TEST(ExtractFrames, ErrorsNameThePath) {
	const auto dir = scratch("badvideo");
	std::ofstream(dir / "junk.avi") << "not a video";
	try {
		extract_frames(dir / "junk.avi", 1);
		FAIL();
	} catch (const IoError& e) {
		EXPECT_NE(std::string(e.what()).find("junk.avi"), std::string::npos);
	}
	fs::create_directories(dir / "empty");
	EXPECT_THROW(extract_frames(dir / "empty", 1), EmptyInputError);
}

TEST(ExtractFrames, DirectoryOfStills) {
	const auto dir = scratch("stills");
	for (int i = 0; i < 10; ++i) touch_frame(dir / (std::to_string(100 + i) + ".png"));
	EXPECT_EQ(extract_frames(dir, 3).size(), 4u);
}

TEST(DetectAndCrop, CentredFaceGivesSquareCropWithMargin) {
	ImageBuffer img(300, 300, 0.2f);
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 100; y < 200; ++y)
			for (std::size_t x = 100; x < 200; ++x) img.at(c, y, x) = 0.8f;
	ForegroundDetector det;
	const auto box = det.detect(img);
	ASSERT_TRUE(box);
	EXPECT_EQ(*box, (Box{100, 100, 100, 100}));
	EXPECT_EQ(crop_region(*box, 0.1, 300, 300), (Box{90, 90, 120, 120}));
	const auto out = detect_and_crop(img, {256, 0.1, "foreground"}, det);
	ASSERT_TRUE(out);
	EXPECT_EQ(out->height(), 256u);
	EXPECT_EQ(out->width(), 256u);
	// The border is background: 10 of 120 source pixels on each side.
	EXPECT_NEAR(out->at(0, 5, 128), 0.2f, 1e-6);
	EXPECT_NEAR(out->at(0, 128, 128), 0.8f, 1e-6);
}

TEST(DetectAndCrop, BlankImageIsSkipped) {
	std::size_t skipped = 0;
	FullFrameDetector det;
	EXPECT_FALSE(detect_and_crop(ImageBuffer(64, 64, 0.0f), {}, det, &skipped));
	EXPECT_FALSE(detect_and_crop(ImageBuffer(64, 64, 0.7f), {}, ForegroundDetector(), &skipped));
	EXPECT_EQ(skipped, 2u);
}

TEST(DetectAndCrop, BoxAtCornerIsClamped) {
	// 40x40 face at the top-left corner of a 200x100 frame, margin 0.25:
	// grown box is [-10, 50) on both axes, clamped to [0, 50).
	EXPECT_EQ(crop_region({0, 0, 40, 40}, 0.25, 100, 200), (Box{0, 0, 50, 50}));
	// Non-square box is squared on its centre before growing: centre (190, 90), side 20.
	EXPECT_EQ(crop_region({185, 80, 10, 20}, 0.1, 100, 200), (Box{178, 78, 22, 22}));
	ImageBuffer img(100, 200, 0.1f);
	for (std::size_t c = 0; c < 3; ++c)
		for (std::size_t y = 0; y < 40; ++y)
			for (std::size_t x = 0; x < 40; ++x) img.at(c, y, x) = 0.9f;
	const auto out = detect_and_crop(img, {256, 0.25, "foreground"}, ForegroundDetector());
	ASSERT_TRUE(out);
	EXPECT_EQ(out->height(), 256u);
	EXPECT_EQ(out->width(), 256u);
}

TEST(DetectAndCrop, SpecAndDetectorValidation) {
	EXPECT_THROW((CropSpec{0, 0.1, "full-frame"}.validate()), ConfigError);
	EXPECT_THROW((CropSpec{256, 1.0, "full-frame"}.validate()), ConfigError);
	EXPECT_THROW(make_detector("nope"), ConfigError);
	EXPECT_THROW(make_detector("cascade:/no/such/model.xml"), ConfigError);
	EXPECT_EQ(make_detector("full-frame")->id(), "full-frame");
}

TEST(BuildManifest, EmptyRoot) {
	EXPECT_TRUE(build_manifest(scratch("empty"), 1).records.empty());
}

TEST(BuildManifest, TwoSubjectsTally) {
	const auto root = crop_tree("tally", 2, 1, 3);
	const auto m = build_manifest(root, 4);
	ASSERT_EQ(m.records.size(), 12u);
	const auto counts = m.counts();
	ASSERT_EQ(counts.size(), 2u);
	for (const auto& [s, t] : counts) EXPECT_EQ(t, (Tally{3, 3}));
	for (std::size_t i = 1; i < m.records.size(); ++i) EXPECT_LT(m.records[i - 1].key(), m.records[i].key());
	EXPECT_EQ(m.records[0].path, "s0/live/s0_l0/0.png");
	EXPECT_EQ(m.records[3].attack_type, AttackType::print);
	EXPECT_TRUE(fs::exists(m.absolute(m.records[5])));
}

TEST(BuildManifest, FrameOrderIsNumeric) {
	const auto root = scratch("numeric");
	for (int f : {10, 2, 1}) touch_frame(root / "a" / "live" / "v" / (std::to_string(f) + ".png"));
	const auto m = build_manifest(root, 0);
	ASSERT_EQ(m.records.size(), 3u);
	EXPECT_EQ(m.records[0].frame_index, 1u);
	EXPECT_EQ(m.records[1].frame_index, 2u);
	EXPECT_EQ(m.records[2].frame_index, 10u);
}

TEST(BuildManifest, DuplicateFrameRejected) {
	const auto root = scratch("dup");
	touch_frame(root / "a" / "live" / "v" / "1.png");
	touch_frame(root / "a" / "live" / "v" / "01.png");
	EXPECT_THROW(build_manifest(root, 0), DuplicateRecordError);
}

TEST(BuildManifest, MalformedLayoutNamesPath) {
	const auto root = scratch("malformed");
	touch_frame(root / "a" / "spoof" / "hologram" / "v" / "0.png");
	try {
		build_manifest(root, 0);
		FAIL();
	} catch (const ParseError& e) {
		EXPECT_NE(std::string(e.what()).find("hologram"), std::string::npos);
	}
	const auto root2 = scratch("malformed2");
	touch_frame(root2 / "a" / "live" / "v" / "frame.png");
	EXPECT_THROW(build_manifest(root2, 0), ParseError);
}

TEST(BuildManifest, IdempotentAndRoundTrips) {
	const auto root = crop_tree("idem", 2, 2, 2);
	const auto a = build_manifest(root, 9);
	fs::create_directories(root / "s0" / "synthetic" / "print");
	touch_frame(root / "s0" / "synthetic" / "print" / "x_0.png");
	save_manifest(a, root / "manifest.json");
	const auto b = build_manifest(root, 9);
	EXPECT_EQ(a, b);
	EXPECT_EQ(load_manifest(root / "manifest.json"), a);
}

TEST(Ingest, HarvestsVideosAndStills) {
	const auto src = scratch("ingest_src");
	fs::create_directories(src / "s1" / "live");
	fs::create_directories(src / "s1" / "spoof" / "phone");
	write_video(src / "s1" / "live" / "s1_live.avi", 20);
	for (int i = 0; i < 6; ++i) {
		ImageBuffer frame(40, 30, 0.3f);
		frame.at(0, 10, 10) = 0.9f;
		save_png(src / "s1" / "spoof" / "phone" / "s1_ph.a" / (std::to_string(i) + ".png"), frame);
	}
	save_png(src / "s1" / "spoof" / "phone" / "s1_ph.a" / "9.png", ImageBuffer(40, 30, 0.3f)); // blank frame
	const auto out = scratch("ingest_out");
	const auto stats = ingest(src, out, {32, 0.1, "full-frame"}, 2);
	EXPECT_EQ(stats.videos, 2u);
	EXPECT_EQ(stats.frames, 14u);
	EXPECT_EQ(stats.skipped, 1u);
	const auto m = build_manifest(out, 0);
	ASSERT_EQ(m.records.size(), 13u);
	EXPECT_EQ(load_image(m.absolute(m.records[0])).height(), 32u);
	std::set<std::string> styles;
	for (const auto& r : m.records) styles.insert(r.style_id());
	EXPECT_EQ(styles, (std::set<std::string>{"", "phone.a"}));
}

TEST(SplitHoldout, SeventyThirtyOnTenVideos) {
	const auto m = split_holdout(equal_videos(10, 5), 0.7, 3);
	std::set<std::string> train, test;
	for (const auto& r : m.records) (r.split == Split::train ? train : test).insert(r.video_id);
	EXPECT_EQ(train.size(), 7u);
	EXPECT_EQ(test.size(), 3u);
	for (const auto& v : train) EXPECT_FALSE(test.count(v));
	EXPECT_EQ(count_split(m, Split::unassigned), 0u);
}

TEST(SplitHoldout, HalfOnTwoVideosAndDeterminism) {
	const auto a = split_holdout(equal_videos(2, 4), 0.5, 8);
	EXPECT_EQ(count_split(a, Split::train), 4u);
	EXPECT_EQ(count_split(a, Split::test), 4u);
	EXPECT_EQ(split_holdout(equal_videos(2, 4), 0.5, 8), a);
}

TEST(SplitHoldout, SingleVideoGoesToTrainWithWarning) {
	std::vector<std::string> warnings;
	const auto m = split_holdout(equal_videos(1, 4), 0.7, 1, &warnings);
	EXPECT_EQ(count_split(m, Split::train), 4u);
	ASSERT_EQ(warnings.size(), 1u);
	EXPECT_NE(warnings[0].find("a/live"), std::string::npos);
}

TEST(SplitHoldout, MinimalTrainSideProperty) {
	// Unequal videos: the train side reaches the fraction and dropping its
	// last-assigned video would fall below it.
	Rng rng(4);
	for (int trial = 0; trial < 50; ++trial) {
		DatasetManifest m;
		const int videos = 2 + static_cast<int>(rng.below(8));
		std::map<std::string, std::size_t> sizes;
		for (int v = 0; v < videos; ++v) {
			const int frames = 1 + static_cast<int>(rng.below(20));
			sizes["v" + std::to_string(v)] = frames;
			for (int f = 0; f < frames; ++f)
				m.records.push_back({"a", "v" + std::to_string(v), static_cast<std::uint64_t>(f), Label::live,
				                     AttackType::none, Split::unassigned, "x"});
		}
		const double frac = rng.uniform(0.1, 0.9);
		const auto s = split_holdout(m, frac, static_cast<std::uint64_t>(trial));
		const double total = static_cast<double>(s.records.size());
		const double train = static_cast<double>(count_split(s, Split::train));
		EXPECT_GE(train, frac * total - 1e-9 * total);
		std::size_t largest = 0;
		std::set<std::string> train_videos;
		for (const auto& r : s.records)
			if (r.split == Split::train) train_videos.insert(r.video_id);
		bool some_removal_drops_below = false;
		for (const auto& v : train_videos) {
			largest = std::max(largest, sizes[v]);
			some_removal_drops_below |= train - static_cast<double>(sizes[v]) < frac * total - 1e-9 * total;
		}
		EXPECT_TRUE(some_removal_drops_below);
	}
}

TEST(SampleStyleSources, SizesAndDeterminism) {
	auto m = split_holdout(equal_videos(20, 10), 0.999, 2);
	// 0.999 of 200 frames needs all 20 videos on the train side.
	EXPECT_EQ(count_split(m, Split::train), 200u);
	const auto a = sample_style_sources(m, 0.10, 5);
	EXPECT_EQ(a.size(), 20u);
	EXPECT_EQ(sample_style_sources(m, 0.10, 5), a);
	EXPECT_NE(sample_style_sources(m, 0.10, 6), a);
	EXPECT_EQ(sample_style_sources(m, 1.0, 5).size(), 200u);
	std::set<std::tuple<std::string, std::string, std::uint64_t>> seen;
	for (const auto& r : a) EXPECT_TRUE(seen.insert({r.subject_id, r.video_id, r.frame_index}).second);
}

TEST(SampleStyleSources, OnlyLiveTrainAndSkipsEmptySubjects) {
	auto live = equal_videos(4, 5);
	auto spoof = equal_videos(4, 5, Label::spoof);
	for (auto& r : spoof.records) {
		r.subject_id = "b";
		r.video_id = "p" + r.video_id;
	}
	live.records.insert(live.records.end(), spoof.records.begin(), spoof.records.end());
	const auto m = split_holdout(live, 0.5, 1);
	std::vector<std::string> warnings;
	const auto picked = sample_style_sources(m, 0.5, 1, &warnings);
	EXPECT_EQ(picked.size(), 5u);
	for (const auto& r : picked) {
		EXPECT_EQ(r.label, Label::live);
		EXPECT_EQ(r.split, Split::train);
	}
	ASSERT_EQ(warnings.size(), 1u);
	EXPECT_THROW(sample_style_sources(equal_videos(2, 2), 0.5, 1), ContractError);
}

TEST(Records, StyleIdentity) {
	SampleRecord r{"s", "s_p3.b", 0, Label::spoof, AttackType::monitor, Split::train, "x"};
	EXPECT_EQ(r.style_id(), "monitor.b");
	r.video_id = "s_p3";
	EXPECT_EQ(r.style_id(), "monitor");
}
