#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "fasucm/core/tensor.hpp"

namespace fasucm::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

enum class Padding { zero, reflect };

struct ConvGeometry {
	std::size_t channels, height, width;
	std::size_t kernel, stride, pad;
	Padding mode;

	std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
	std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
	std::size_t rows() const { return channels * kernel * kernel; }
	std::size_t cols() const { return out_height() * out_width(); }
};

namespace detail {

/// Maps a padded coordinate to a source index, or -1 for zero padding.
inline long source_index(long i, long n, Padding mode) {
	if (i >= 0 && i < n) return i;
	if (mode == Padding::zero) return -1;
	if (i < 0) i = -i;
	if (i >= n) i = 2 * (n - 1) - i;
	return i;
}

} // namespace detail

/// Unfolds one (C, H, W) sample into a (C*k*k, Ho*Wo) column matrix.
template <class T>
void im2col(const T* src, const ConvGeometry& g, T* col) {
	const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
	const std::size_t Ho = g.out_height(), Wo = g.out_width();
	const long pad = static_cast<long>(g.pad), stride = static_cast<long>(g.stride);
	std::vector<long> xs(Wo);
	for (std::size_t c = 0; c < g.channels; ++c) {
		const T* plane = src + c * g.height * g.width;
		for (std::size_t ky = 0; ky < g.kernel; ++ky) {
			for (std::size_t kx = 0; kx < g.kernel; ++kx) {
				T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * Ho * Wo;
				for (std::size_t ox = 0; ox < Wo; ++ox)
					xs[ox] = detail::source_index(static_cast<long>(ox) * stride - pad + static_cast<long>(kx), W, g.mode);
				for (std::size_t oy = 0; oy < Ho; ++oy) {
					const long sy = detail::source_index(static_cast<long>(oy) * stride - pad + static_cast<long>(ky), H, g.mode);
					T* out = dst + oy * Wo;
					if (sy < 0) {
						std::fill(out, out + Wo, T(0));
						continue;
					}
					const T* row = plane + sy * W;
					for (std::size_t ox = 0; ox < Wo; ++ox) out[ox] = xs[ox] < 0 ? T(0) : row[xs[ox]];
				}
			}
		}
	}
}

/// Adjoint of im2col: accumulates column gradients back into a (C, H, W) sample.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* dst) {
	const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
	const std::size_t Ho = g.out_height(), Wo = g.out_width();
	const long pad = static_cast<long>(g.pad), stride = static_cast<long>(g.stride);
	std::vector<long> xs(Wo);
	for (std::size_t c = 0; c < g.channels; ++c) {
		T* plane = dst + c * g.height * g.width;
		for (std::size_t ky = 0; ky < g.kernel; ++ky) {
			for (std::size_t kx = 0; kx < g.kernel; ++kx) {
				const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * Ho * Wo;
				for (std::size_t ox = 0; ox < Wo; ++ox)
					xs[ox] = detail::source_index(static_cast<long>(ox) * stride - pad + static_cast<long>(kx), W, g.mode);
				for (std::size_t oy = 0; oy < Ho; ++oy) {
					const long sy = detail::source_index(static_cast<long>(oy) * stride - pad + static_cast<long>(ky), H, g.mode);
					if (sy < 0) continue;
					T* row = plane + sy * W;
					const T* in = src + oy * Wo;
					for (std::size_t ox = 0; ox < Wo; ++ox)
						if (xs[ox] >= 0) row[xs[ox]] += in[ox];
				}
			}
		}
	}
}

/// Copies one (C, H, W) sample into a (C, H+2p, W+2p) buffer with padding applied.
template <class T>
void pad_sample(const T* src, const ConvGeometry& g, T* dst) {
	const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), p = static_cast<long>(g.pad);
	const std::size_t Hp = g.height + 2 * g.pad, Wp = g.width + 2 * g.pad;
	for (std::size_t c = 0; c < g.channels; ++c) {
		const T* plane = src + c * g.height * g.width;
		T* out = dst + c * Hp * Wp;
		for (std::size_t y = 0; y < Hp; ++y) {
			const long sy = detail::source_index(static_cast<long>(y) - p, H, g.mode);
			for (std::size_t x = 0; x < Wp; ++x) {
				const long sx = detail::source_index(static_cast<long>(x) - p, W, g.mode);
				out[y * Wp + x] = sy < 0 || sx < 0 ? T(0) : plane[sy * W + sx];
			}
		}
	}
}

/// Adjoint of pad_sample: folds a padded gradient back onto the sample.
template <class T>
void unpad_sample(const T* padded, const ConvGeometry& g, T* dst) {
	const long H = static_cast<long>(g.height), W = static_cast<long>(g.width), p = static_cast<long>(g.pad);
	const std::size_t Hp = g.height + 2 * g.pad, Wp = g.width + 2 * g.pad;
	for (std::size_t c = 0; c < g.channels; ++c) {
		const T* in = padded + c * Hp * Wp;
		T* plane = dst + c * g.height * g.width;
		for (std::size_t y = 0; y < Hp; ++y) {
			const long sy = detail::source_index(static_cast<long>(y) - p, H, g.mode);
			if (sy < 0) continue;
			for (std::size_t x = 0; x < Wp; ++x) {
				const long sx = detail::source_index(static_cast<long>(x) - p, W, g.mode);
				if (sx >= 0) plane[sy * W + sx] += in[y * Wp + x];
			}
		}
	}
}

namespace detail {

/// Stride-1 convolutions with few output channels are evaluated by shifted
/// row updates; the unfolded matrix would be mostly memory traffic.
inline bool use_direct(std::size_t stride, std::size_t cout) { return stride == 1 && cout <= 8; }

template <class T>
void direct_forward(const T* padded, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g, T* out) {
	const std::size_t k = g.kernel, Ho = g.out_height(), Wo = g.out_width();
	const std::size_t Hp = g.height + 2 * g.pad, Wp = g.width + 2 * g.pad;
	const std::size_t cout = weight.shape().n;
	for (std::size_t co = 0; co < cout; ++co) {
		T* o = out + co * Ho * Wo;
		std::fill(o, o + Ho * Wo, bias[co]);
		for (std::size_t ci = 0; ci < g.channels; ++ci)
			for (std::size_t ky = 0; ky < k; ++ky)
				for (std::size_t kx = 0; kx < k; ++kx) {
					const T wv = weight.at(co, ci, ky, kx);
					const T* src = padded + ci * Hp * Wp + ky * Wp + kx;
					for (std::size_t y = 0; y < Ho; ++y) {
						T* orow = o + y * Wo;
						const T* irow = src + y * Wp;
						for (std::size_t x = 0; x < Wo; ++x) orow[x] += wv * irow[x];
					}
				}
	}
}

template <class T>
void direct_backward(const T* padded, const Tensor<T>& weight, const T* dy, const ConvGeometry& g, T* dweight,
                     T* dpadded) {
	const std::size_t k = g.kernel, Ho = g.out_height(), Wo = g.out_width();
	const std::size_t Hp = g.height + 2 * g.pad, Wp = g.width + 2 * g.pad;
	const std::size_t cout = weight.shape().n;
	for (std::size_t co = 0; co < cout; ++co) {
		const T* d = dy + co * Ho * Wo;
		for (std::size_t ci = 0; ci < g.channels; ++ci)
			for (std::size_t ky = 0; ky < k; ++ky)
				for (std::size_t kx = 0; kx < k; ++kx) {
					const std::size_t offset = ci * Hp * Wp + ky * Wp + kx;
					if (dweight) {
						const T* src = padded + offset;
						T acc = 0;
						for (std::size_t y = 0; y < Ho; ++y) {
							const T* drow = d + y * Wo;
							const T* irow = src + y * Wp;
							for (std::size_t x = 0; x < Wo; ++x) acc += drow[x] * irow[x];
						}
						dweight[((co * g.channels + ci) * k + ky) * k + kx] += acc;
					}
					if (dpadded) {
						const T wv = weight.at(co, ci, ky, kx);
						T* dst = dpadded + offset;
						for (std::size_t y = 0; y < Ho; ++y) {
							T* prow = dst + y * Wp;
							const T* drow = d + y * Wo;
							for (std::size_t x = 0; x < Wo; ++x) prow[x] += wv * drow[x];
						}
					}
				}
	}
}

} // namespace detail

/// y = conv(x, weight) + bias for a batch; weight is (Cout, Cin, k, k).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad, Padding mode) {
	const Shape in = x.shape();
	const ConvGeometry g{in.c, in.h, in.w, weight.shape().h, stride, pad, mode};
	const std::size_t cout = weight.shape().n;
	Tensor<T> y(in.n, cout, g.out_height(), g.out_width());
	if (detail::use_direct(stride, cout)) {
		std::vector<T, AlignedAllocator<T>> padded(in.c * (in.h + 2 * pad) * (in.w + 2 * pad));
		for (std::size_t n = 0; n < in.n; ++n) {
			pad_sample(x.sample(n), g, padded.data());
			detail::direct_forward(padded.data(), weight, bias, g, y.sample(n));
		}
		return y;
	}
	std::vector<T, AlignedAllocator<T>> col(g.rows() * g.cols());
	ConstMatrixMap<T> w(weight.data(), cout, g.rows());
	for (std::size_t n = 0; n < in.n; ++n) {
		im2col(x.sample(n), g, col.data());
		MatrixMap<T> out(y.sample(n), cout, g.cols());
		out.noalias() = w * ConstMatrixMap<T>(col.data(), g.rows(), g.cols());
		out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), cout);
	}
	return y;
}

/// Gradients of conv2d. dweight/dbias are accumulated when non-null; returns dx
/// when `input_grad` is set, otherwise an empty tensor.
template <class T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          std::size_t stride, std::size_t pad, Padding mode, Tensor<T>* dweight,
                          Tensor<T>* dbias, bool input_grad) {
	const Shape in = x.shape();
	const ConvGeometry g{in.c, in.h, in.w, weight.shape().h, stride, pad, mode};
	const std::size_t cout = weight.shape().n;
	Tensor<T> dx;
	if (input_grad) dx = Tensor<T>(in);
	if (detail::use_direct(stride, cout)) {
		const std::size_t padded_size = in.c * (in.h + 2 * pad) * (in.w + 2 * pad);
		std::vector<T, AlignedAllocator<T>> padded(padded_size), dpadded;
		for (std::size_t n = 0; n < in.n; ++n) {
			const T* d = dy.sample(n);
			if (dbias)
				for (std::size_t co = 0; co < cout; ++co) {
					T acc = 0;
					for (std::size_t i = 0; i < g.cols(); ++i) acc += d[co * g.cols() + i];
					(*dbias)[co] += acc;
				}
			if (dweight) pad_sample(x.sample(n), g, padded.data());
			if (input_grad) dpadded.assign(padded_size, T(0));
			detail::direct_backward(padded.data(), weight, d, g, dweight ? dweight->data() : nullptr,
			                        input_grad ? dpadded.data() : nullptr);
			if (input_grad) unpad_sample(dpadded.data(), g, dx.sample(n));
		}
		return dx;
	}
	std::vector<T, AlignedAllocator<T>> col(g.rows() * g.cols());
	ConstMatrixMap<T> w(weight.data(), cout, g.rows());
	for (std::size_t n = 0; n < in.n; ++n) {
		ConstMatrixMap<T> grad(dy.sample(n), cout, g.cols());
		if (dweight) {
			im2col(x.sample(n), g, col.data());
			MatrixMap<T> dw(dweight->data(), cout, g.rows());
			dw.noalias() += grad * ConstMatrixMap<T>(col.data(), g.rows(), g.cols()).transpose();
		}
		if (dbias) {
			Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(dbias->data(), cout);
			db += grad.rowwise().sum();
		}
		if (input_grad) {
			MatrixMap<T> dcol(col.data(), g.rows(), g.cols());
			dcol.noalias() = w.transpose() * grad;
			col2im(col.data(), g, dx.sample(n));
		}
	}
	return dx;
}

} // namespace fasucm::nn
