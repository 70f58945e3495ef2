#pragma once

#include <array>
#include <cmath>
#include <map>

#include "varivit/rng.hpp"
#include "varivit/tensor.hpp"

namespace varivit {

enum class PosKind { sinusoidal_fixed, learned };

using Grid3 = std::array<std::size_t, 3>;

/// Master positional-embedding grid for the largest image size. Smaller
/// sizes are served by slicing (center_and_select) or interpolation.
template <typename T>
struct PosEmbedGridT {
    TensorT<T> grid;  // [G_l, G_h, G_w, d]
    PosKind kind = PosKind::sinusoidal_fixed;

    Grid3 dims() const { return {grid.extent(0), grid.extent(1), grid.extent(2)}; }
    std::size_t embed_dim() const { return grid.extent(3); }
};

using PosEmbedGrid = PosEmbedGridT<float>;

/// 1D sinusoidal encoding:
///   entry 2i   = sin(pos / 10000^(2i / d_axis))
///   entry 2i+1 = cos(pos / 10000^((2i+1) / d_axis))
template <typename T>
TensorT<T> sinusoidal_1d(std::size_t pos, std::size_t d_axis) {
    if (d_axis % 2 != 0) throw numeric_error("sinusoidal_1d: d_axis must be even");
    TensorT<T> out({d_axis});
    for (std::size_t j = 0; j < d_axis; ++j) {
        double expo = static_cast<double>(j) / static_cast<double>(d_axis);
        double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
        out[j] = static_cast<T>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
    return out;
}

/// 3D extension: equal d/3 split per axis, concatenated in (l, h, w) order.
template <typename T>
PosEmbedGridT<T> build_sinusoidal_3d(const Grid3& g, std::size_t d) {
    if (d % 6 != 0) throw numeric_error("build_sinusoidal_3d: d must be divisible by 6");
    const std::size_t da = d / 3;
    PosEmbedGridT<T> pe;
    pe.kind = PosKind::sinusoidal_fixed;
    pe.grid = TensorT<T>({g[0], g[1], g[2], d});
    // Per-axis tables, then concatenation per position.
    std::vector<TensorT<T>> tab[3];
    for (int k = 0; k < 3; ++k)
        for (std::size_t p = 0; p < g[k]; ++p)
            tab[k].push_back(sinusoidal_1d<T>(p, da));
    T* dst = pe.grid.data();
    for (std::size_t l = 0; l < g[0]; ++l)
        for (std::size_t h = 0; h < g[1]; ++h)
            for (std::size_t w = 0; w < g[2]; ++w) {
                T* row = dst + (((l * g[1]) + h) * g[2] + w) * d;
                std::copy(tab[0][l].data(), tab[0][l].data() + da, row);
                std::copy(tab[1][h].data(), tab[1][h].data() + da, row + da);
                std::copy(tab[2][w].data(), tab[2][w].data() + da, row + 2 * da);
            }
    return pe;
}

template <typename T>
PosEmbedGridT<T> build_learned(const Grid3& g, std::size_t d, Rng rng,
                               double stddev = 0.02) {
    if (d % 6 != 0) throw numeric_error("build_learned: d must be divisible by 6");
    PosEmbedGridT<T> pe;
    pe.kind = PosKind::learned;
    pe.grid = TensorT<T>({g[0], g[1], g[2], d});
    for (std::size_t i = 0; i < pe.grid.numel(); ++i)
        pe.grid[i] = static_cast<T>(rng.trunc_normal(stddev));
    return pe;
}

/// Grid center C_k = floor(G_k / 2), the reference point for selection.
inline Grid3 center(const Grid3& g) {
    return {g[0] / 2, g[1] / 2, g[2] / 2};
}

/// Per-axis selection range [start, end): start = C_k - floor(G'_k / 2),
/// end = start + G'_k.
inline std::array<std::pair<std::size_t, std::size_t>, 3> select_ranges(
    const Grid3& master, const Grid3& sub) {
    std::array<std::pair<std::size_t, std::size_t>, 3> r;
    for (int k = 0; k < 3; ++k) {
        if (sub[k] > master[k])
            throw numeric_error("center_and_select: subgrid larger than master");
        std::size_t start = master[k] / 2 - sub[k] / 2;
        r[k] = {start, start + sub[k]};
    }
    return r;
}

/// Slice the centered subgrid out of the master grid; pure selection, no
/// arithmetic on values. Returns [N', d] flattened row-major over (l, h, w).
template <typename T>
TensorT<T> center_and_select(const PosEmbedGridT<T>& master, const Grid3& sub) {
    const Grid3 g = master.dims();
    const std::size_t d = master.embed_dim();
    const auto r = select_ranges(g, sub);
    TensorT<T> out({sub[0] * sub[1] * sub[2], d});
    const T* src = master.grid.data();
    T* dst = out.data();
    for (std::size_t l = r[0].first; l < r[0].second; ++l)
        for (std::size_t h = r[1].first; h < r[1].second; ++h)
            for (std::size_t w = r[2].first; w < r[2].second; ++w) {
                const T* row = src + ((l * g[1] + h) * g[2] + w) * d;
                std::copy(row, row + d, dst);
                dst += d;
            }
    return out;
}

namespace detail {

struct AxisInterp {
    std::size_t i0, i1;
    double w1;  // weight of i1; i0 gets 1 - w1
};

/// Endpoint-aligned coordinate mapping; a single output sample lands at the
/// source midpoint.
inline AxisInterp axis_interp(std::size_t i, std::size_t n_out, std::size_t n_in) {
    double x;
    if (n_out == 1)
        x = (n_in - 1) / 2.0;
    else
        x = static_cast<double>(i) * static_cast<double>(n_in - 1) /
            static_cast<double>(n_out - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(x));
    if (i0 + 1 >= n_in) return {n_in - 1, n_in - 1, 0.0};
    return {i0, i0 + 1, x - static_cast<double>(i0)};
}

}  // namespace detail

/// Per-channel trilinear interpolation of the master grid to a target size,
/// with endpoint alignment. Returns [N', d].
template <typename T>
TensorT<T> interp_resize(const PosEmbedGridT<T>& master, const Grid3& sub) {
    const Grid3 g = master.dims();
    const std::size_t d = master.embed_dim();
    TensorT<T> out({sub[0] * sub[1] * sub[2], d});
    const T* src = master.grid.data();
    T* dst = out.data();
    for (std::size_t l = 0; l < sub[0]; ++l) {
        auto al = detail::axis_interp(l, sub[0], g[0]);
        for (std::size_t h = 0; h < sub[1]; ++h) {
            auto ah = detail::axis_interp(h, sub[1], g[1]);
            for (std::size_t w = 0; w < sub[2]; ++w) {
                auto aw = detail::axis_interp(w, sub[2], g[2]);
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0;
                    for (int cl = 0; cl < 2; ++cl)
                        for (int ch = 0; ch < 2; ++ch)
                            for (int cw = 0; cw < 2; ++cw) {
                                double wl = cl ? al.w1 : 1.0 - al.w1;
                                double wh = ch ? ah.w1 : 1.0 - ah.w1;
                                double ww = cw ? aw.w1 : 1.0 - aw.w1;
                                double wgt = wl * wh * ww;
                                if (wgt == 0.0) continue;
                                std::size_t sl = cl ? al.i1 : al.i0;
                                std::size_t sh = ch ? ah.i1 : ah.i0;
                                std::size_t sw = cw ? aw.i1 : aw.i0;
                                acc += wgt * src[((sl * g[1] + sh) * g[2] + sw) * d + j];
                            }
                    *dst++ = static_cast<T>(acc);
                }
            }
        }
    }
    return out;
}

/// Scatter-adjoint of interp_resize: accumulates d_out into d_master.
template <typename T>
void interp_resize_backward(const Grid3& master_dims, const Grid3& sub,
                            const TensorT<T>& d_out, TensorT<T>& d_master) {
    const Grid3& g = master_dims;
    const std::size_t d = d_out.extent(1);
    if (d_master.numel() != g[0] * g[1] * g[2] * d)
        throw numeric_error("interp_resize_backward: master gradient shape mismatch");
    const T* up = d_out.data();
    for (std::size_t l = 0; l < sub[0]; ++l) {
        auto al = detail::axis_interp(l, sub[0], g[0]);
        for (std::size_t h = 0; h < sub[1]; ++h) {
            auto ah = detail::axis_interp(h, sub[1], g[1]);
            for (std::size_t w = 0; w < sub[2]; ++w) {
                auto aw = detail::axis_interp(w, sub[2], g[2]);
                for (std::size_t j = 0; j < d; ++j) {
                    T grad = *up++;
                    for (int cl = 0; cl < 2; ++cl)
                        for (int ch = 0; ch < 2; ++ch)
                            for (int cw = 0; cw < 2; ++cw) {
                                double wl = cl ? al.w1 : 1.0 - al.w1;
                                double wh = ch ? ah.w1 : 1.0 - ah.w1;
                                double ww = cw ? aw.w1 : 1.0 - aw.w1;
                                double wgt = wl * wh * ww;
                                if (wgt == 0.0) continue;
                                std::size_t sl = cl ? al.i1 : al.i0;
                                std::size_t sh = ch ? ah.i1 : ah.i0;
                                std::size_t sw = cw ? aw.i1 : aw.i0;
                                d_master[((sl * g[1] + sh) * g[2] + sw) * d + j] +=
                                    static_cast<T>(wgt) * grad;
                            }
                }
            }
        }
    }
}

/// Separate fixed sinusoidal grid per image size (the Indep_Fixed variant).
template <typename T>
std::map<Grid3, PosEmbedGridT<T>> build_independent(const std::vector<Grid3>& grids,
                                                    std::size_t d) {
    std::map<Grid3, PosEmbedGridT<T>> out;
    for (const auto& g : grids)
        if (!out.count(g)) out.emplace(g, build_sinusoidal_3d<T>(g, d));
    return out;
}

/// Learnable pairwise bias table covering every offset of the maximum grid.
template <typename T>
struct RelPosBiasT {
    TensorT<T> table;  // [heads, (2M_l-1)(2M_h-1)(2M_w-1)]
    Grid3 max_grid;

    std::size_t heads() const { return table.extent(0); }

    static RelPosBiasT make(std::size_t heads, const Grid3& max_grid, Rng rng,
                            double stddev = 0.02) {
        RelPosBiasT b;
        b.max_grid = max_grid;
        std::size_t entries = (2 * max_grid[0] - 1) * (2 * max_grid[1] - 1) *
                              (2 * max_grid[2] - 1);
        b.table = TensorT<T>({heads, entries});
        for (std::size_t i = 0; i < b.table.numel(); ++i)
            b.table[i] = static_cast<T>(rng.trunc_normal(stddev));
        return b;
    }

    /// Flat table index of a patch-pair offset (dl, dh, dw), each shifted by
    /// M_k - 1 into the non-negative range.
    std::size_t offset_index(long dl, long dh, long dw) const {
        const long ml = static_cast<long>(max_grid[0]);
        const long mh = static_cast<long>(max_grid[1]);
        const long mw = static_cast<long>(max_grid[2]);
        if (dl <= -ml || dl >= ml || dh <= -mh || dh >= mh || dw <= -mw || dw >= mw)
            throw numeric_error("rel_bias: offset outside table capacity");
        std::size_t il = static_cast<std::size_t>(dl + ml - 1);
        std::size_t ih = static_cast<std::size_t>(dh + mh - 1);
        std::size_t iw = static_cast<std::size_t>(dw + mw - 1);
        return (il * (2 * mh - 1) + ih) * (2 * mw - 1) + iw;
    }
};

using RelPosBias = RelPosBiasT<float>;

/// Per-pair index map for a grid: out[p*N+q] = table column for bias(p, q).
inline std::vector<std::size_t> rel_bias_index_map(const Grid3& max_grid,
                                                   const Grid3& grid) {
    for (int k = 0; k < 3; ++k)
        if (grid[k] > max_grid[k])
            throw numeric_error("rel_bias: grid exceeds table capacity");
    const std::size_t N = grid[0] * grid[1] * grid[2];
    std::vector<std::array<long, 3>> coords(N);
    std::size_t i = 0;
    for (std::size_t l = 0; l < grid[0]; ++l)
        for (std::size_t h = 0; h < grid[1]; ++h)
            for (std::size_t w = 0; w < grid[2]; ++w)
                coords[i++] = {static_cast<long>(l), static_cast<long>(h),
                               static_cast<long>(w)};
    const long ml = static_cast<long>(max_grid[0]);
    const long mh = static_cast<long>(max_grid[1]);
    const long mw = static_cast<long>(max_grid[2]);
    std::vector<std::size_t> idx(N * N);
    for (std::size_t p = 0; p < N; ++p)
        for (std::size_t q = 0; q < N; ++q) {
            long dl = coords[p][0] - coords[q][0];
            long dh = coords[p][1] - coords[q][1];
            long dw = coords[p][2] - coords[q][2];
            idx[p * N + q] = (static_cast<std::size_t>(dl + ml - 1) * (2 * mh - 1) +
                              static_cast<std::size_t>(dh + mh - 1)) *
                                 (2 * mw - 1) +
                             static_cast<std::size_t>(dw + mw - 1);
        }
    return idx;
}

/// Materialized [heads, N, N] bias for a grid.
template <typename T>
TensorT<T> rel_bias_lookup(const RelPosBiasT<T>& bias, const Grid3& grid) {
    const auto idx = rel_bias_index_map(bias.max_grid, grid);
    const std::size_t N = grid[0] * grid[1] * grid[2];
    const std::size_t H = bias.heads();
    const std::size_t entries = bias.table.extent(1);
    TensorT<T> out({H, N, N});
    for (std::size_t h = 0; h < H; ++h) {
        const T* row = bias.table.data() + h * entries;
        T* dst = out.data() + h * N * N;
        for (std::size_t i = 0; i < N * N; ++i) dst[i] = row[idx[i]];
    }
    return out;
}

/// Cosine similarity of the anchor position's embedding against every grid
/// position. Values in [-1, 1]; the anchor maps to 1.
template <typename T>
TensorT<T> cosine_similarity_map(const PosEmbedGridT<T>& pe, const Grid3& anchor) {
    const Grid3 g = pe.dims();
    const std::size_t d = pe.embed_dim();
    for (int k = 0; k < 3; ++k)
        if (anchor[k] >= g[k]) throw numeric_error("cosine_similarity_map: anchor outside grid");
    const T* a =
        pe.grid.data() + ((anchor[0] * g[1] + anchor[1]) * g[2] + anchor[2]) * d;
    double na = 0;
    for (std::size_t j = 0; j < d; ++j) na += static_cast<double>(a[j]) * a[j];
    na = std::sqrt(na);
    TensorT<T> out({g[0], g[1], g[2]});
    const T* src = pe.grid.data();
    for (std::size_t i = 0; i < g[0] * g[1] * g[2]; ++i) {
        const T* b = src + i * d;
        double dot = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += static_cast<double>(a[j]) * b[j];
            nb += static_cast<double>(b[j]) * b[j];
        }
        out[i] = static_cast<T>(dot / (na * std::sqrt(nb)));
    }
    return out;
}

}  // namespace varivit
