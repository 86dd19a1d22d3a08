#pragma once

#include <opencv2/imgproc.hpp>
#include <opencv2/objdetect.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/image/image.hpp"

namespace fasucm::dataset {

/// Pluggable face detector returning the most prominent face box, if any.
class FaceDetector {
public:
	virtual ~FaceDetector() = default;
	virtual std::string id() const = 0;
	virtual std::optional<Box> detect(const ImageBuffer& image) const = 0;
};

/// Treats the whole frame as the face; uniform (blank) frames have no face.
class FullFrameDetector final : public FaceDetector {
public:
	std::string id() const override { return "full-frame"; }
	std::optional<Box> detect(const ImageBuffer& image) const override {
		if (image.empty()) return std::nullopt;
		const auto v = image.values();
		const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
		if (*hi - *lo < 1.0f / 255.0f) return std::nullopt;
		return Box{0, 0, static_cast<int>(image.width()), static_cast<int>(image.height())};
	}
};

/// Bounding box of pixels that differ from the top-left corner colour by more
/// than `threshold` in any channel. Suited to synthetic faces on flat backgrounds.
class ForegroundDetector final : public FaceDetector {
public:
	explicit ForegroundDetector(float threshold = 0.1f) : threshold_(threshold) {}
	std::string id() const override { return "foreground"; }
	std::optional<Box> detect(const ImageBuffer& image) const override {
		int x0 = static_cast<int>(image.width()), y0 = static_cast<int>(image.height()), x1 = -1, y1 = -1;
		for (std::size_t y = 0; y < image.height(); ++y)
			for (std::size_t x = 0; x < image.width(); ++x) {
				bool differs = false;
				for (std::size_t c = 0; c < 3; ++c) differs |= std::abs(image.at(c, y, x) - image.at(c, 0, 0)) > threshold_;
				if (!differs) continue;
				x0 = std::min(x0, static_cast<int>(x));
				y0 = std::min(y0, static_cast<int>(y));
				x1 = std::max(x1, static_cast<int>(x));
				y1 = std::max(y1, static_cast<int>(y));
			}
		if (x1 < 0) return std::nullopt;
		return Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
	}

private:
	float threshold_;
};

/// OpenCV Haar/LBP cascade; the largest detection wins.
class CascadeDetector final : public FaceDetector {
public:
	explicit CascadeDetector(const std::filesystem::path& model) : model_(model) {
		if (!std::filesystem::exists(model) || !classifier_.load(model.string()))
			throw ConfigError("cascade detector model unavailable: " + model.string());
	}
	std::string id() const override { return "cascade:" + model_.string(); }
	std::optional<Box> detect(const ImageBuffer& image) const override {
		cv::Mat gray;
		cv::cvtColor(to_bgr8(image), gray, cv::COLOR_BGR2GRAY);
		std::vector<cv::Rect> faces;
		const_cast<cv::CascadeClassifier&>(classifier_).detectMultiScale(gray, faces);
		if (faces.empty()) return std::nullopt;
		const auto best = *std::max_element(faces.begin(), faces.end(),
		                                    [](const cv::Rect& a, const cv::Rect& b) { return a.area() < b.area(); });
		return Box{best.x, best.y, best.width, best.height};
	}

private:
	std::filesystem::path model_;
	cv::CascadeClassifier classifier_;
};

/// "full-frame", "foreground" or "cascade:<model.xml>".
inline std::unique_ptr<FaceDetector> make_detector(const std::string& id) {
	if (id == "full-frame") return std::make_unique<FullFrameDetector>();
	if (id == "foreground") return std::make_unique<ForegroundDetector>();
	if (id.rfind("cascade:", 0) == 0) return std::make_unique<CascadeDetector>(id.substr(8));
	throw ConfigError("unknown face detector '" + id + "' (expected full-frame, foreground or cascade:<xml>)");
}

struct CropSpec {
	std::size_t output_size = 256;
	double margin = 0.1;
	std::string detector = "full-frame";

	void validate() const {
		if (output_size == 0) throw ConfigError("crop output_size must be positive");
		if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("crop margin must lie in [0, 1)");
	}
};

/// Crop rectangle for a detection: the box is squared about its centre (side =
/// larger dimension), grown by margin * side on every side, then clamped to
/// the image.
inline Box crop_region(const Box& face, double margin, std::size_t image_h, std::size_t image_w) {
	const double side = std::max(face.width, face.height);
	const double cx = face.x + face.width / 2.0, cy = face.y + face.height / 2.0;
	const double half = side * (0.5 + margin);
	const long x0 = std::max(0L, std::lround(cx - half));
	const long y0 = std::max(0L, std::lround(cy - half));
	const long x1 = std::min(static_cast<long>(image_w), std::lround(cx + half));
	const long y1 = std::min(static_cast<long>(image_h), std::lround(cy + half));
	return Box{static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(std::max(1L, x1 - x0)),
	           static_cast<int>(std::max(1L, y1 - y0))};
}

/// Square face crop of spec.output_size, or nullopt when no face is found
/// (`skipped` is incremented then).
inline std::optional<ImageBuffer> detect_and_crop(const ImageBuffer& image, const CropSpec& spec,
                                                  const FaceDetector& detector, std::size_t* skipped = nullptr) {
	spec.validate();
	FASUCM_REQUIRE(!image.empty(), "detect_and_crop on an empty image");
	const auto face = detector.detect(image);
	if (!face) {
		if (skipped) ++*skipped;
		return std::nullopt;
	}
	const Box region = crop_region(*face, spec.margin, image.height(), image.width());
	return resize_bilinear(crop(image, region), spec.output_size, spec.output_size);
}

inline bool is_image_file(const std::filesystem::path& p) {
	auto ext = p.extension().string();
	std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
	return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

/// Frames 0, stride, 2*stride, ... of a video file, or of a directory of
/// still images taken in file-name order.
inline std::vector<ImageBuffer> extract_frames(const std::filesystem::path& video, std::size_t stride) {
	FASUCM_REQUIRE(stride >= 1, "frame stride must be >= 1");
	std::vector<ImageBuffer> frames;
	if (std::filesystem::is_directory(video)) {
		std::vector<std::filesystem::path> files;
		for (const auto& e : std::filesystem::directory_iterator(video))
			if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
		std::sort(files.begin(), files.end());
		for (std::size_t i = 0; i < files.size(); i += stride) frames.push_back(load_image(files[i]));
	} else {
		if (!std::filesystem::exists(video)) throw IoError("video not found: " + video.string());
		cv::VideoCapture cap(video.string());
		if (!cap.isOpened()) throw IoError("cannot decode video " + video.string());
		cv::Mat frame;
		for (std::size_t i = 0; cap.read(frame); ++i)
			if (i % stride == 0) frames.push_back(from_bgr8(frame));
	}
	if (frames.empty()) throw EmptyInputError("no frames in " + video.string());
	return frames;
}

} // namespace fasucm::dataset
