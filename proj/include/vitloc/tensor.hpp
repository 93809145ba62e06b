#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vitloc/common.hpp"

namespace vitloc {

/// Dense row-major N-d array. The autograd tape and every model operation
/// are built on this. T is float for training/inference, double for
/// gradient checks.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, T v) { return Tensor(std::move(shape), v); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    // 2-d accessors; most tape ops work on matrices.
    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << ')';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("zero extent in tensor shape");
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

// Hot loop of the whole artifact: C(m x n) += A(m x k) * B(k x n).
// Four C rows are accumulated in stack tiles across the whole k loop: each B row
// loaded once feeds four independent FMA chains, and C is touched once per tile
// instead of once per k step (the naive ikj loop stalls on that store/reload).
template <typename T>
void matmul_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    constexpr std::size_t kTileCap = 1536;
    std::size_t i = 0;
    if (n <= kTileCap) {
        for (; i + 4 <= m; i += 4) {
            T acc0[kTileCap], acc1[kTileCap], acc2[kTileCap], acc3[kTileCap];
            for (std::size_t j = 0; j < n; ++j) acc0[j] = acc1[j] = acc2[j] = acc3[j] = T(0);
            const T* a0 = a + (i + 0) * k;
            const T* a1 = a + (i + 1) * k;
            const T* a2 = a + (i + 2) * k;
            const T* a3 = a + (i + 3) * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const T* brow = b + kk * n;
                const T w0 = a0[kk], w1 = a1[kk], w2 = a2[kk], w3 = a3[kk];
                for (std::size_t j = 0; j < n; ++j) {
                    const T bj = brow[j];
                    acc0[j] += w0 * bj;
                    acc1[j] += w1 * bj;
                    acc2[j] += w2 * bj;
                    acc3[j] += w3 * bj;
                }
            }
            for (std::size_t j = 0; j < n; ++j) c[(i + 0) * n + j] += acc0[j];
            for (std::size_t j = 0; j < n; ++j) c[(i + 1) * n + j] += acc1[j];
            for (std::size_t j = 0; j < n; ++j) c[(i + 2) * n + j] += acc2[j];
            for (std::size_t j = 0; j < n; ++j) c[(i + 3) * n + j] += acc3[j];
        }
    }
    for (; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace vitloc
