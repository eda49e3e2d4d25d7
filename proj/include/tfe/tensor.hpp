#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "tfe/alloc_stats.hpp"
#include "tfe/error.hpp"

namespace tfe {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr Dtype dtype_of() {
    if constexpr (sizeof(T) == 4) return Dtype::f32;
    else return Dtype::f64;
}

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

// Dense row-major tensor. Every construction and destruction reports its
// payload bytes to the thread-local allocation tracker, so peak-memory claims
// are measurable with alloc_scope.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (std::size_t d : shape_) n *= d;
        data_.assign(n, fill);
        tracked_ = static_cast<std::int64_t>(n * sizeof(T));
        alloc::on_alloc(tracked_);
    }

    TensorT(std::initializer_list<std::size_t> shape, T fill = T(0))
        : TensorT(std::vector<std::size_t>(shape), fill) {}

    static TensorT from(std::vector<std::size_t> shape, std::vector<T> values) {
        TensorT t;
        t.shape_ = std::move(shape);
        std::size_t n = 1;
        for (std::size_t d : t.shape_) n *= d;
        if (n != values.size()) throw DimError("tensor data length does not match shape");
        t.data_ = std::move(values);
        t.tracked_ = static_cast<std::int64_t>(n * sizeof(T));
        alloc::on_alloc(t.tracked_);
        return t;
    }

    TensorT(const TensorT& other) : shape_(other.shape_), data_(other.data_) {
        tracked_ = other.tracked_;
        alloc::on_alloc(tracked_);
    }

    TensorT(TensorT&& other) noexcept
        : shape_(std::move(other.shape_)), data_(std::move(other.data_)), tracked_(other.tracked_) {
        other.tracked_ = 0;
        other.shape_.clear();
    }

    TensorT& operator=(const TensorT& other) {
        if (this != &other) {
            release();
            shape_ = other.shape_;
            data_ = other.data_;
            tracked_ = other.tracked_;
            alloc::on_alloc(tracked_);
        }
        return *this;
    }

    TensorT& operator=(TensorT&& other) noexcept {
        if (this != &other) {
            release();
            shape_ = std::move(other.shape_);
            data_ = std::move(other.data_);
            tracked_ = other.tracked_;
            other.tracked_ = 0;
            other.shape_.clear();
        }
        return *this;
    }

    ~TensorT() { release(); }

    static constexpr Dtype dtype() { return dtype_of<T>(); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::int64_t payload_bytes() const { return tracked_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return {data_.data(), data_.size()}; }
    std::span<const T> values() const { return {data_.data(), data_.size()}; }

    T& operator()(std::size_t i) { return data_[i]; }
    T operator()(std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Contiguous row of a 2-D tensor.
    std::span<T> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * shape_[1], shape_[1]}; }

    // Contiguous innermost slice of a 3-D tensor.
    std::span<T> row(std::size_t i, std::size_t j) {
        return {data_.data() + (i * shape_[1] + j) * shape_[2], shape_[2]};
    }
    std::span<const T> row(std::size_t i, std::size_t j) const {
        return {data_.data() + (i * shape_[1] + j) * shape_[2], shape_[2]};
    }

private:
    void release() noexcept {
        if (tracked_ != 0) {
            alloc::on_free(tracked_);
            tracked_ = 0;
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
    std::int64_t tracked_ = 0;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Same payload, new shape. The element count must match.
template <class T>
TensorT<T> reshape(TensorT<T> t, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != t.numel()) throw DimError("reshape: element count mismatch");
    std::vector<T> values(t.values().begin(), t.values().end());
    return TensorT<T>::from(std::move(shape), std::move(values));
}

}  // namespace tfe
