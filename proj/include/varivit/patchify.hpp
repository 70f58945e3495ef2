#pragma once

#include <array>
#include <cstdint>

#include "varivit/kernels.hpp"
#include "varivit/tensor.hpp"

namespace varivit {

struct PatchConfig {
    int patch_size;    // P
    int embed_dim;     // d, divisible by 6
    int in_channels;   // C

    int patch_volume() const {
        return in_channels * patch_size * patch_size * patch_size;
    }
};

/// Patch embeddings plus CLS token for one sample; length varies with the
/// image size while the embedding width stays fixed.
template <typename T>
struct TokenSequenceT {
    TensorT<T> tokens;            // [N+1, d], CLS at row 0
    std::array<std::size_t, 3> grid;  // (G_l, G_h, G_w), N = product
    std::uint64_t sample_id = 0;

    std::size_t patch_count() const { return grid[0] * grid[1] * grid[2]; }
};

using TokenSequence = TokenSequenceT<float>;

/// Split a [C, D, H, W] volume into non-overlapping P^3 patches, ordered
/// row-major over the (l, h, w) patch grid. Each patch row is flattened
/// channel-major, then voxel row-major.
template <typename T>
TensorT<T> extract_patches(const TensorT<T>& voxels, const PatchConfig& cfg,
                           std::array<std::size_t, 3>* grid_out = nullptr) {
    if (voxels.rank() != 4) throw numeric_error("extract_patches: rank-4 input required");
    const std::size_t C = voxels.extent(0);
    const std::size_t D = voxels.extent(1), H = voxels.extent(2), W = voxels.extent(3);
    const std::size_t P = static_cast<std::size_t>(cfg.patch_size);
    if (C != static_cast<std::size_t>(cfg.in_channels))
        throw numeric_error("extract_patches: channel count mismatch");
    if (D % P || H % P || W % P)
        throw numeric_error("extract_patches: spatial dims must be divisible by patch size");
    const std::size_t gl = D / P, gh = H / P, gw = W / P;
    const std::size_t N = gl * gh * gw;
    const std::size_t pv = C * P * P * P;
    TensorT<T> patches({N, pv});
    const T* src = voxels.data();
    for (std::size_t pl = 0; pl < gl; ++pl)
        for (std::size_t ph = 0; ph < gh; ++ph)
            for (std::size_t pw = 0; pw < gw; ++pw) {
                T* row = patches.data() + ((pl * gh + ph) * gw + pw) * pv;
                std::size_t k = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t z = 0; z < P; ++z)
                        for (std::size_t y = 0; y < P; ++y)
                            for (std::size_t x = 0; x < P; ++x)
                                row[k++] = src[((c * D + pl * P + z) * H + ph * P + y) * W +
                                               pw * P + x];
            }
    if (grid_out) *grid_out = {gl, gh, gw};
    return patches;
}

/// Inverse of extract_patches; used by the partition-property tests.
template <typename T>
TensorT<T> reassemble_patches(const TensorT<T>& patches,
                              const std::array<std::size_t, 3>& grid,
                              const PatchConfig& cfg) {
    const std::size_t C = static_cast<std::size_t>(cfg.in_channels);
    const std::size_t P = static_cast<std::size_t>(cfg.patch_size);
    const std::size_t D = grid[0] * P, H = grid[1] * P, W = grid[2] * P;
    const std::size_t pv = C * P * P * P;
    if (patches.rank() != 2 || patches.extent(0) != grid[0] * grid[1] * grid[2] ||
        patches.extent(1) != pv)
        throw numeric_error("reassemble_patches: shape mismatch");
    TensorT<T> vox({C, D, H, W});
    T* dst = vox.data();
    for (std::size_t pl = 0; pl < grid[0]; ++pl)
        for (std::size_t ph = 0; ph < grid[1]; ++ph)
            for (std::size_t pw = 0; pw < grid[2]; ++pw) {
                const T* row =
                    patches.data() + ((pl * grid[1] + ph) * grid[2] + pw) * pv;
                std::size_t k = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t z = 0; z < P; ++z)
                        for (std::size_t y = 0; y < P; ++y)
                            for (std::size_t x = 0; x < P; ++x)
                                dst[((c * D + pl * P + z) * H + ph * P + y) * W +
                                    pw * P + x] = row[k++];
            }
    return vox;
}

/// tokens[0] = cls; tokens[i+1] = patches[i] * W + b.
template <typename T>
TokenSequenceT<T> embed_patches(const TensorT<T>& patches,
                                const std::array<std::size_t, 3>& grid,
                                const TensorT<T>& proj_w, const TensorT<T>& proj_b,
                                const TensorT<T>& cls) {
    const std::size_t N = patches.extent(0);
    const std::size_t d = proj_w.extent(1);
    if (proj_w.extent(0) != patches.extent(1))
        throw numeric_error("embed_patches: projection input size mismatch");
    if (proj_b.numel() != d || cls.numel() != d)
        throw numeric_error("embed_patches: embedding width mismatch");
    TensorT<T> projected = matmul(patches, proj_w);
    add_row_bias(projected, proj_b);
    TokenSequenceT<T> seq;
    seq.grid = grid;
    seq.tokens = TensorT<T>({N + 1, d});
    for (std::size_t j = 0; j < d; ++j) seq.tokens[j] = cls[j];
    std::copy(projected.data(), projected.data() + N * d, seq.tokens.data() + d);
    return seq;
}

/// Gradients of embed_patches w.r.t. projection, bias, CLS and the patches.
template <typename T>
void embed_patches_backward(const TensorT<T>& patches, const TensorT<T>& proj_w,
                            const TensorT<T>& d_tokens, TensorT<T>& d_patches,
                            TensorT<T>& d_proj_w, TensorT<T>& d_proj_b,
                            TensorT<T>& d_cls) {
    const std::size_t N = patches.extent(0);
    const std::size_t d = proj_w.extent(1);
    if (d_tokens.extent(0) != N + 1 || d_tokens.extent(1) != d)
        throw numeric_error("embed_patches_backward: upstream shape mismatch");
    d_cls = TensorT<T>({d});
    for (std::size_t j = 0; j < d; ++j) d_cls[j] = d_tokens[j];
    TensorT<T> d_proj({N, d});
    std::copy(d_tokens.data() + d, d_tokens.data() + (N + 1) * d, d_proj.data());
    d_proj_b = TensorT<T>({d});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < d; ++j) d_proj_b[j] += d_proj[i * d + j];
    matmul_backward(patches, proj_w, d_proj, d_patches, d_proj_w);
}

}  // namespace varivit
