#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/core/tensor.hpp"

namespace fasucm {

/// Planar RGB image with values in [0, 1]. Stored on disk as 8-bit sRGB PNG.
class ImageBuffer {
public:
	static constexpr std::size_t channels = 3;

	ImageBuffer() = default;
	ImageBuffer(std::size_t height, std::size_t width, float fill = 0.0f)
	    : height_(height), width_(width), values_(channels * height * width, fill) {}

	std::size_t height() const { return height_; }
	std::size_t width() const { return width_; }
	bool empty() const { return values_.empty(); }

	float& at(std::size_t c, std::size_t y, std::size_t x) { return values_[(c * height_ + y) * width_ + x]; }
	float at(std::size_t c, std::size_t y, std::size_t x) const {
		return values_[(c * height_ + y) * width_ + x];
	}
	std::span<float> values() { return values_; }
	std::span<const float> values() const { return values_; }

	bool in_range() const {
		return std::all_of(values_.begin(), values_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
	}

	void clamp() {
		for (auto& v : values_) v = std::clamp(v, 0.0f, 1.0f);
	}

	template <class T>
	Tensor<T> to_tensor() const {
		Tensor<T> t(1, channels, height_, width_);
		std::transform(values_.begin(), values_.end(), t.data(), [](float v) { return static_cast<T>(v); });
		return t;
	}

	/// Sample `index` of an (n, 3, h, w) tensor; values are clamped to [0, 1].
	template <class T>
	static ImageBuffer from_tensor(const Tensor<T>& t, std::size_t index = 0) {
		FASUCM_REQUIRE(t.shape().c == channels, "image tensor must have 3 channels");
		ImageBuffer img(t.shape().h, t.shape().w);
		const T* src = t.sample(index);
		for (std::size_t i = 0; i < img.values_.size(); ++i)
			img.values_[i] = std::clamp(static_cast<float>(src[i]), 0.0f, 1.0f);
		return img;
	}

	bool operator==(const ImageBuffer&) const = default;

private:
	std::size_t height_ = 0, width_ = 0;
	std::vector<float> values_;
};

struct Box {
	int x = 0, y = 0, width = 0, height = 0;
	bool operator==(const Box&) const = default;
};

/// Bilinear resampling with pixel-centre alignment.
inline ImageBuffer resize_bilinear(const ImageBuffer& src, std::size_t out_h, std::size_t out_w) {
	FASUCM_REQUIRE(!src.empty() && out_h > 0 && out_w > 0, "resize of empty image");
	ImageBuffer dst(out_h, out_w);
	const double sy = static_cast<double>(src.height()) / out_h;
	const double sx = static_cast<double>(src.width()) / out_w;
	const auto max_y = static_cast<double>(src.height() - 1);
	const auto max_x = static_cast<double>(src.width() - 1);
	for (std::size_t y = 0; y < out_h; ++y) {
		const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, max_y);
		const auto y0 = static_cast<std::size_t>(fy);
		const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
		const float ay = static_cast<float>(fy - y0);
		for (std::size_t x = 0; x < out_w; ++x) {
			const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, max_x);
			const auto x0 = static_cast<std::size_t>(fx);
			const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
			const float ax = static_cast<float>(fx - x0);
			for (std::size_t c = 0; c < ImageBuffer::channels; ++c) {
				const float top = src.at(c, y0, x0) * (1 - ax) + src.at(c, y0, x1) * ax;
				const float bottom = src.at(c, y1, x0) * (1 - ax) + src.at(c, y1, x1) * ax;
				dst.at(c, y, x) = top * (1 - ay) + bottom * ay;
			}
		}
	}
	return dst;
}

inline ImageBuffer crop(const ImageBuffer& src, const Box& box) {
	FASUCM_REQUIRE(box.x >= 0 && box.y >= 0 && box.width > 0 && box.height > 0 &&
	                   static_cast<std::size_t>(box.x + box.width) <= src.width() &&
	                   static_cast<std::size_t>(box.y + box.height) <= src.height(),
	               "crop box outside image");
	ImageBuffer out(box.height, box.width);
	for (std::size_t c = 0; c < ImageBuffer::channels; ++c)
		for (int y = 0; y < box.height; ++y)
			for (int x = 0; x < box.width; ++x) out.at(c, y, x) = src.at(c, box.y + y, box.x + x);
	return out;
}

/// BGR 8-bit OpenCV matrix to an ImageBuffer.
inline ImageBuffer from_bgr8(const cv::Mat& mat) {
	FASUCM_REQUIRE(mat.type() == CV_8UC3, "expected an 8-bit 3-channel matrix");
	ImageBuffer img(mat.rows, mat.cols);
	for (int y = 0; y < mat.rows; ++y) {
		const auto* row = mat.ptr<cv::Vec3b>(y);
		for (int x = 0; x < mat.cols; ++x)
			for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
	}
	return img;
}

inline cv::Mat to_bgr8(const ImageBuffer& img) {
	cv::Mat mat(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
	for (int y = 0; y < mat.rows; ++y) {
		auto* row = mat.ptr<cv::Vec3b>(y);
		for (int x = 0; x < mat.cols; ++x)
			for (int c = 0; c < 3; ++c)
				row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
	}
	return mat;
}

/// Round-trip through 8-bit quantisation, i.e. what a PNG write/read would produce.
inline ImageBuffer quantize8(const ImageBuffer& img) { return from_bgr8(to_bgr8(img)); }

inline ImageBuffer load_image(const std::filesystem::path& path) {
	cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
	if (mat.empty()) throw IoError("cannot decode image " + path.string());
	return from_bgr8(mat);
}

inline void save_png(const std::filesystem::path& path, const ImageBuffer& img) {
	if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
	if (!cv::imwrite(path.string(), to_bgr8(img))) throw IoError("cannot write " + path.string());
}

} // namespace fasucm
