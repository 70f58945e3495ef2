#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace varivit {

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Process-wide accounting of live tensor payload bytes. Single writer at a
// time per the concurrency contracts, so plain counters suffice.
struct TensorBytes {
    static inline std::size_t live = 0;
    static inline std::size_t peak = 0;

    static void add(std::size_t n) {
        live += n;
        peak = std::max(peak, live);
    }
    static void sub(std::size_t n) { live -= n; }
    static void reset_peak() { peak = live; }
};

/// Dense row-major multi-dimensional array. Scalar type is a template
/// parameter: float for training, double for gradient-check mode.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> shape)
        : shape_(std::move(shape)) {
        for (std::size_t e : shape_) {
            if (e < 1) throw numeric_error("tensor extent must be >= 1");
        }
        data_.assign(numel_of(shape_), T(0));
        TensorBytes::add(bytes());
    }

    TensorT(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw numeric_error("tensor data length does not match shape");
        TensorBytes::add(bytes());
    }

    TensorT(const TensorT& o) : shape_(o.shape_), data_(o.data_) {
        TensorBytes::add(bytes());
    }
    TensorT(TensorT&& o) noexcept
        : shape_(std::move(o.shape_)), data_(std::move(o.data_)) {
        o.shape_.clear();
        o.data_.clear();
    }
    TensorT& operator=(const TensorT& o) {
        if (this != &o) {
            TensorBytes::sub(bytes());
            shape_ = o.shape_;
            data_ = o.data_;
            TensorBytes::add(bytes());
        }
        return *this;
    }
    TensorT& operator=(TensorT&& o) noexcept {
        if (this != &o) {
            TensorBytes::sub(bytes());
            shape_ = std::move(o.shape_);
            data_ = std::move(o.data_);
            o.shape_.clear();
            o.data_.clear();
        }
        return *this;
    }
    ~TensorT() { TensorBytes::sub(bytes()); }

    static TensorT zeros(std::vector<std::size_t> shape) {
        return TensorT(std::move(shape));
    }
    static TensorT full(std::vector<std::size_t> shape, T v) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static TensorT identity(std::size_t n) {
        TensorT t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    std::size_t bytes() const { return data_.size() * sizeof(T); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // 2D access; first axis is rows, remaining axes are flattened as columns.
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const {
        if (shape_.empty()) return 0;
        return numel() / shape_[0];
    }
    T& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at2(std::size_t r, std::size_t c) const {
        return data_[r * cols() + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(std::vector<std::size_t> shape) {
        if (numel_of(shape) != data_.size())
            throw numeric_error("reshape changes element count");
        shape_ = std::move(shape);
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool bitwise_equal(const TensorT& o) const {
        return shape_ == o.shape_ &&
               (data_.empty() ||
                std::memcmp(data_.data(), o.data_.data(), bytes()) == 0);
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace varivit
