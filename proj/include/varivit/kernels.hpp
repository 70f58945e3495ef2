#pragma once

#include <cmath>
#include <string>

#include "varivit/tensor.hpp"

namespace varivit {

namespace detail {
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw numeric_error(msg);
}
}  // namespace detail

/// C[m,n] = A[m,k] * B[k,n]. Fixed-order sequential reduction per output
/// element, so results are bitwise reproducible.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 inputs required");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    detail::require(b.extent(0) == k, "matmul: inner dimensions disagree");
    TensorT<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * n + j];
            pc[i * n + j] = acc;
        }
    }
    return c;
}

/// Gradients of C = A*B given dC: dA = dC*B^T, dB = A^T*dC.
template <typename T>
void matmul_backward(const TensorT<T>& a, const TensorT<T>& b,
                     const TensorT<T>& dc, TensorT<T>& da, TensorT<T>& db) {
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    detail::require(dc.rank() == 2 && dc.extent(0) == m && dc.extent(1) == n,
                    "matmul_backward: upstream shape mismatch");
    da = TensorT<T>({m, k});
    db = TensorT<T>({k, n});
    const T* pa = a.data();
    const T* pb = b.data();
    const T* pdc = dc.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += pdc[i * n + j] * pb[t * n + j];
            da[i * k + t] = acc;
        }
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t i = 0; i < m; ++i) acc += pa[i * k + t] * pdc[i * n + j];
            db[t * n + j] = acc;
        }
}

/// Row-wise softmax with max subtraction. NaN input is an error.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    detail::require(x.rank() >= 1, "softmax_rows: empty tensor");
    const std::size_t r = x.rows(), c = x.cols();
    TensorT<T> y(x.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = x.data() + i * c;
        T* out = y.data() + i * c;
        T mx = row[0];
        for (std::size_t j = 0; j < c; ++j) {
            detail::require(!std::isnan(static_cast<double>(row[j])),
                            "softmax_rows: NaN input");
            mx = std::max(mx, row[j]);
        }
        T sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < c; ++j) out[j] /= sum;
    }
    return y;
}

/// dX for Y = softmax_rows(X): dx = y * (dy - sum_j dy_j y_j) per row.
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    detail::require(y.same_shape(dy), "softmax_backward: shape mismatch");
    const std::size_t r = y.rows(), c = y.cols();
    TensorT<T> dx(y.shape());
    for (std::size_t i = 0; i < r; ++i) {
        const T* py = y.data() + i * c;
        const T* pdy = dy.data() + i * c;
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += pdy[j] * py[j];
        T* pdx = dx.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) pdx[j] = py[j] * (pdy[j] - dot);
    }
    return dx;
}

template <typename T>
struct LayerNormCache {
    TensorT<T> normed;  // (x - mean) * rstd, before affine
    std::vector<T> rstd;
};

/// Per-row layer normalization over the last dimension, then affine.
template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta, T eps,
                     LayerNormCache<T>* cache = nullptr) {
    const std::size_t d = x.extent(x.rank() - 1);
    detail::require(gamma.numel() == d && beta.numel() == d,
                    "layernorm: affine size mismatch");
    const std::size_t rows = x.numel() / d;
    TensorT<T> y(x.shape());
    if (cache) {
        cache->normed = TensorT<T>(x.shape());
        cache->rstd.assign(rows, T(0));
    }
    for (std::size_t i = 0; i < rows; ++i) {
        const T* row = x.data() + i * d;
        T* out = y.data() + i * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T rstd = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            T n = (row[j] - mean) * rstd;
            if (cache) cache->normed[i * d + j] = n;
            out[j] = n * gamma[j] + beta[j];
        }
        if (cache) cache->rstd[i] = rstd;
    }
    return y;
}

template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, const TensorT<T>& gamma,
                        const TensorT<T>& dy, TensorT<T>& dx,
                        TensorT<T>& dgamma, TensorT<T>& dbeta) {
    const std::size_t d = gamma.numel();
    const std::size_t rows = cache.normed.numel() / d;
    detail::require(dy.numel() == rows * d, "layernorm_backward: shape mismatch");
    dx = TensorT<T>(cache.normed.shape());
    dgamma = TensorT<T>({d});
    dbeta = TensorT<T>({d});
    for (std::size_t i = 0; i < rows; ++i) {
        const T* n = cache.normed.data() + i * d;
        const T* g = dy.data() + i * d;
        T rstd = cache.rstd[i];
        T sum_g = 0, sum_gn = 0;
        for (std::size_t j = 0; j < d; ++j) {
            T gg = g[j] * gamma[j];
            sum_g += gg;
            sum_gn += gg * n[j];
            dgamma[j] += g[j] * n[j];
            dbeta[j] += g[j];
        }
        T inv_d = T(1) / static_cast<T>(d);
        T* out = dx.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            T gg = g[j] * gamma[j];
            out[j] = rstd * (gg - inv_d * sum_g - n[j] * inv_d * sum_gn);
        }
    }
}

/// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        T v = x[i];
        y[i] = v * T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
    }
    return y;
}

template <typename T>
TensorT<T> gelu_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    detail::require(x.same_shape(dy), "gelu_backward: shape mismatch");
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    TensorT<T> dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double v = static_cast<double>(x[i]);
        double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] = dy[i] * static_cast<T>(phi + v * pdf);
    }
    return dx;
}

// Elementwise helpers used across the encoder.

template <typename T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
    detail::require(a.same_shape(b), "add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <typename T>
void axpy_inplace(TensorT<T>& a, const TensorT<T>& b, T scale) {
    detail::require(a.same_shape(b), "axpy_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] += scale * b[i];
}

template <typename T>
void scale_inplace(TensorT<T>& a, T s) {
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] *= s;
}

/// y[i,:] = x[i,:] + bias
template <typename T>
void add_row_bias(TensorT<T>& x, const TensorT<T>& bias) {
    const std::size_t c = bias.numel();
    detail::require(x.numel() % c == 0, "add_row_bias: width mismatch");
    const std::size_t r = x.numel() / c;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) x[i * c + j] += bias[j];
}

}  // namespace varivit
