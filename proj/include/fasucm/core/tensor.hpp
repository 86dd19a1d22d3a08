#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"

namespace fasucm {

/// NCHW extent. Dense activations use (n, features, 1, 1).
struct Shape {
	std::size_t n = 0, c = 0, h = 0, w = 0;

	std::size_t count() const { return n * c * h * w; }
	std::size_t plane() const { return h * w; }
	std::size_t sample() const { return c * h * w; }
	bool operator==(const Shape&) const = default;

	std::string str() const {
		return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
		       std::to_string(w);
	}
};

/// Cache-line aligned storage. Vectorised kernels choose their peeling by
/// pointer alignment, so a fixed base alignment keeps summation order, and
/// therefore results, identical from run to run.
template <class T>
struct AlignedAllocator {
	using value_type = T;
	static constexpr std::size_t alignment = 64;

	AlignedAllocator() = default;
	template <class U>
	AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

	T* allocate(std::size_t n) {
		return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignment}));
	}
	void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{alignment}); }

	template <class U>
	bool operator==(const AlignedAllocator<U>&) const noexcept {
		return true;
	}
};

/// Dense row-major NCHW tensor with value semantics.
template <class T>
class Tensor {
public:
	using value_type = T;

	Tensor() = default;
	explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {}
	Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
	    : Tensor(Shape{n, c, h, w}, fill) {}

	const Shape& shape() const { return shape_; }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	T* data() { return data_.data(); }
	const T* data() const { return data_.data(); }
	std::span<T> values() { return data_; }
	std::span<const T> values() const { return data_; }

	T& operator[](std::size_t i) { return data_[i]; }
	const T& operator[](std::size_t i) const { return data_[i]; }

	T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
		return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
	}
	const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
		return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
	}

	T* sample(std::size_t n) { return data_.data() + n * shape_.sample(); }
	const T* sample(std::size_t n) const { return data_.data() + n * shape_.sample(); }
	T* channel(std::size_t n, std::size_t c) { return sample(n) + c * shape_.plane(); }
	const T* channel(std::size_t n, std::size_t c) const { return sample(n) + c * shape_.plane(); }

	void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

	/// Same data, different extent; element count must match.
	Tensor reshaped(Shape s) const {
		FASUCM_REQUIRE(s.count() == size(), "reshape " + shape_.str() + " -> " + s.str());
		Tensor t = *this;
		t.shape_ = s;
		return t;
	}

	Tensor& operator+=(const Tensor& o) {
		FASUCM_REQUIRE(o.shape_ == shape_, "tensor += shape mismatch");
		for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
		return *this;
	}
	Tensor& operator*=(T s) {
		for (auto& v : data_) v *= s;
		return *this;
	}

	template <class U>
	Tensor<U> cast() const {
		Tensor<U> out(shape_);
		std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
		return out;
	}

	/// Copy of samples [first, first + count).
	Tensor slice(std::size_t first, std::size_t count) const {
		FASUCM_REQUIRE(first + count <= shape_.n, "slice out of range");
		Tensor t(Shape{count, shape_.c, shape_.h, shape_.w});
		std::copy_n(sample(first), count * shape_.sample(), t.data());
		return t;
	}

	bool operator==(const Tensor&) const = default;

private:
	Shape shape_{};
	std::vector<T, AlignedAllocator<T>> data_;
};

/// Stack single-sample tensors along n.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
	FASUCM_REQUIRE(!items.empty(), "stack of zero tensors");
	Shape s = items.front().shape();
	const std::size_t per = s.sample();
	s.n = 0;
	for (const auto& t : items) {
		FASUCM_REQUIRE(t.shape().sample() == per && t.shape().c == items.front().shape().c,
		               "stack shape mismatch");
		s.n += t.shape().n;
	}
	Tensor<T> out(s);
	T* dst = out.data();
	for (const auto& t : items) dst = std::copy_n(t.data(), t.size(), dst);
	return out;
}

} // namespace fasucm
