#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "fasucm/core/random.hpp"
#include "fasucm/dataset/records.hpp"
#include "fasucm/image/image.hpp"

// Procedural face videos for smoke tests. Live frames are rendered faces;
// spoof frames are rendered faces pushed through a recapture model
// (downscale-upscale, colour shift, periodic luminance grating).
namespace fasucm::fixture {

namespace fs = std::filesystem;
using dataset::AttackType;
using dataset::to_string;

struct RecaptureStyle {
	AttackType attack = AttackType::print;
	std::string tag;
	double downscale = 0.5; // intermediate size as a fraction of the frame
	std::array<double, 3> gain{1, 1, 1};
	std::array<double, 3> offset{0, 0, 0};
	double period = 6; // grating period in pixels
	double angle = 0;  // radians
	double amplitude = 0.05;

	std::string style_id() const { return to_string(attack) + "." + tag; }
};

inline std::vector<RecaptureStyle> default_styles() {
	using A = AttackType;
	constexpr double deg = std::numbers::pi / 180;
	return {
	    {A::print, "a", 0.50, {1.05, 0.95, 0.80}, {0.04, 0.03, 0.00}, 6, 0 * deg, 0.05},
	    {A::print, "b", 0.40, {0.95, 0.90, 0.75}, {0.08, 0.06, 0.02}, 8, 90 * deg, 0.04},
	    {A::print, "c", 0.60, {1.10, 1.00, 0.85}, {0.00, 0.00, 0.00}, 5, 45 * deg, 0.06},
	    {A::phone, "a", 0.35, {0.85, 0.95, 1.10}, {0.00, 0.02, 0.06}, 4, 30 * deg, 0.08},
	    {A::phone, "b", 0.45, {0.90, 1.00, 1.15}, {0.02, 0.00, 0.04}, 5, 120 * deg, 0.07},
	    {A::monitor, "a", 0.50, {0.80, 0.90, 1.10}, {0.05, 0.05, 0.10}, 4, 0 * deg, 0.10},
	    {A::monitor, "b", 0.40, {0.85, 0.85, 1.05}, {0.06, 0.08, 0.10}, 6, 60 * deg, 0.09},
	    {A::monitor, "c", 0.55, {0.90, 0.80, 1.00}, {0.04, 0.10, 0.08}, 7, 150 * deg, 0.08},
	    {A::tablet, "a", 0.45, {1.00, 0.90, 1.05}, {0.03, 0.03, 0.08}, 5, 15 * deg, 0.07},
	    {A::tablet, "b", 0.35, {0.95, 1.05, 1.05}, {0.00, 0.05, 0.05}, 9, 100 * deg, 0.06},
	};
}

struct FixtureSpec {
	std::size_t subjects = 4;
	std::size_t live_videos = 10;
	std::size_t spoof_videos_per_style = 1;
	std::size_t frames_per_video = 10;
	std::size_t size = 64;
	std::uint64_t seed = 7;
	std::vector<RecaptureStyle> styles = default_styles();
};

struct SubjectLook {
	std::array<double, 3> skin, hair, background;
	double width = 1, height = 1;
};

struct Pose {
	double dx = 0, dy = 0, scale = 1, light = 1, tilt = 0;
};

inline SubjectLook subject_look(std::uint64_t seed, std::size_t subject) {
	Rng rng(derive_seed(seed, "look/" + std::to_string(subject)));
	SubjectLook s;
	const double tone = rng.uniform(0.35, 0.85);
	s.skin = {tone + 0.12, tone * 0.82 + 0.05, tone * 0.66};
	const double h = rng.uniform(0.05, 0.45);
	s.hair = {h, h * rng.uniform(0.6, 0.9), h * rng.uniform(0.4, 0.8)};
	s.background = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
	s.width = rng.uniform(0.9, 1.1);
	s.height = rng.uniform(0.92, 1.08);
	return s;
}

inline double smoothstep(double e0, double e1, double x) {
	const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
	return t * t * (3 - 2 * t);
}

/// Renders one face frame. `blink` in [0,1] closes the eyes.
inline ImageBuffer render_face(const SubjectLook& look, const Pose& pose, double blink, std::size_t size, Rng& noise) {
	ImageBuffer img(size, size);
	const double S = static_cast<double>(size);
	const double cx = S / 2 + pose.dx, cy = S / 2 + pose.dy;
	const double rx = 0.30 * S * pose.scale * look.width, ry = 0.40 * S * pose.scale * look.height;
	auto ellipse = [](double x, double y, double ex, double ey, double ax, double ay) {
		const double u = (x - ex) / ax, v = (y - ey) / ay;
		return std::sqrt(u * u + v * v);
	};
	for (std::size_t yi = 0; yi < size; ++yi)
		for (std::size_t xi = 0; xi < size; ++xi) {
			const double x = xi + 0.5, y = yi + 0.5;
			std::array<double, 3> px;
			const double grad = 0.85 + 0.3 * y / S;
			for (int c = 0; c < 3; ++c) px[c] = look.background[c] * grad;
			const double head = ellipse(x, y, cx, cy - 0.08 * ry, rx * 1.12, ry * 1.1);
			const double hair_w = (1 - smoothstep(0.95, 1.05, head)) * (1 - smoothstep(-0.45, -0.25, (y - cy) / ry));
			for (int c = 0; c < 3; ++c) px[c] += (look.hair[c] - px[c]) * hair_w;
			const double face = ellipse(x, y, cx, cy, rx, ry);
			const double face_w = 1 - smoothstep(0.92, 1.04, face);
			const double shade = pose.light * (1.05 - 0.2 * face * face + pose.tilt * (x - cx) / rx);
			const double top_cut = smoothstep(-0.62, -0.5, (y - cy) / ry);
			for (int c = 0; c < 3; ++c) px[c] += (look.skin[c] * shade - px[c]) * face_w * top_cut;
			const double eye_h = 0.08 * ry * (1 - 0.85 * blink) + 0.3;
			for (double side : {-1.0, 1.0}) {
				const double e = ellipse(x, y, cx + side * 0.38 * rx, cy - 0.12 * ry, 0.16 * rx, eye_h);
				const double w = 1 - smoothstep(0.8, 1.1, e);
				for (int c = 0; c < 3; ++c) px[c] += (0.08 - px[c]) * w;
			}
			const double m = ellipse(x, y, cx, cy + 0.48 * ry, 0.32 * rx, 0.07 * ry);
			const double mw = 1 - smoothstep(0.8, 1.1, m);
			const std::array<double, 3> lips{0.62, 0.22, 0.25};
			for (int c = 0; c < 3; ++c) px[c] += (lips[c] * pose.light - px[c]) * mw;
			for (int c = 0; c < 3; ++c)
				img.at(c, yi, xi) = static_cast<float>(std::clamp(px[c] + 0.012 * noise.normal(), 0.0, 1.0));
		}
	return img;
}

/// Recapture model applied to a rendered frame.
inline ImageBuffer recapture(const ImageBuffer& img, const RecaptureStyle& s, double phase) {
	const auto small_h = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(img.height() * s.downscale)));
	const auto small_w = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(img.width() * s.downscale)));
	ImageBuffer out = resize_bilinear(resize_bilinear(img, small_h, small_w), img.height(), img.width());
	const double kx = std::cos(s.angle) * 2 * std::numbers::pi / s.period;
	const double ky = std::sin(s.angle) * 2 * std::numbers::pi / s.period;
	for (std::size_t y = 0; y < out.height(); ++y)
		for (std::size_t x = 0; x < out.width(); ++x) {
			const double g = s.amplitude * std::sin(kx * x + ky * y + phase);
			for (std::size_t c = 0; c < 3; ++c)
				out.at(c, y, x) = static_cast<float>(std::clamp(s.gain[c] * out.at(c, y, x) + s.offset[c] + g, 0.0, 1.0));
		}
	return out;
}

inline std::string subject_id(std::size_t s) {
	return std::string("s") + (s + 1 < 10 ? "0" : "") + std::to_string(s + 1);
}

struct FixtureStats {
	std::size_t live_frames = 0, spoof_frames = 0;
};

/// Writes <dir>/<subject>/live/<video>/<frame>.png and
/// <dir>/<subject>/spoof/<attack>/<video>.<tag>/<frame>.png. Output is a
/// pure function of the spec.
inline FixtureStats write_fixture(const fs::path& dir, const FixtureSpec& spec) {
	FASUCM_REQUIRE(spec.subjects > 0 && spec.frames_per_video > 0 && spec.size >= 32, "fixture spec too small");
	FixtureStats stats;
	auto video = [&](const SubjectLook& look, const std::string& tag, const fs::path& out, const RecaptureStyle* style) {
		Rng rng(derive_seed(spec.seed, "video/" + tag));
		const double S = static_cast<double>(spec.size);
		Pose pose{rng.uniform(-0.05, 0.05) * S, rng.uniform(-0.05, 0.05) * S, rng.uniform(0.92, 1.06),
		          rng.uniform(0.85, 1.12), rng.uniform(-0.12, 0.12)};
		const double phase = rng.uniform(0, 2 * std::numbers::pi);
		for (std::size_t f = 0; f < spec.frames_per_video; ++f) {
			Pose p = pose;
			p.dx += rng.uniform(-1, 1);
			p.dy += rng.uniform(-1, 1);
			const double blink = rng.uniform() < 0.15 ? 1.0 : 0.0;
			ImageBuffer img = render_face(look, p, blink, spec.size, rng);
			if (style) img = recapture(img, *style, phase + 0.3 * static_cast<double>(f));
			std::string name = std::to_string(f);
			name.insert(0, name.size() < 4 ? 4 - name.size() : 0, '0');
			save_png(out / (name + ".png"), img);
			++(style ? stats.spoof_frames : stats.live_frames);
		}
	};
	for (std::size_t s = 0; s < spec.subjects; ++s) {
		const auto sid = subject_id(s);
		const auto look = subject_look(spec.seed, s);
		for (std::size_t v = 0; v < spec.live_videos; ++v) {
			const std::string vid = sid + "-live-" + std::to_string(v);
			video(look, vid, dir / sid / "live" / vid, nullptr);
		}
		for (const auto& style : spec.styles)
			for (std::size_t v = 0; v < spec.spoof_videos_per_style; ++v) {
				const std::string vid = sid + "-" + to_string(style.attack) + "-" + std::to_string(v) + "." + style.tag;
				video(look, vid, dir / sid / "spoof" / to_string(style.attack) / vid, &style);
			}
	}
	return stats;
}

} // namespace fasucm::fixture
