#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "varivit/kernels.hpp"
#include "varivit/patchify.hpp"
#include "varivit/posemb.hpp"
#include "varivit/rng.hpp"

namespace varivit {

enum class PosStrategy {
    center_select,
    indep_fixed,
    interp_fixed,
    interp_learned,
    relative
};

inline const char* to_string(PosStrategy s) {
    switch (s) {
        case PosStrategy::center_select: return "center_select";
        case PosStrategy::indep_fixed: return "indep_fixed";
        case PosStrategy::interp_fixed: return "interp_fixed";
        case PosStrategy::interp_learned: return "interp_learned";
        case PosStrategy::relative: return "relative";
    }
    return "?";
}

inline PosStrategy pos_strategy_from(const std::string& s) {
    if (s == "center_select") return PosStrategy::center_select;
    if (s == "indep_fixed") return PosStrategy::indep_fixed;
    if (s == "interp_fixed") return PosStrategy::interp_fixed;
    if (s == "interp_learned") return PosStrategy::interp_learned;
    if (s == "relative") return PosStrategy::relative;
    throw data_error("unknown positional-embedding strategy: " + s);
}

struct ModelConfig {
    int depth = 12;
    int embed_dim = 384;   // divisible by heads and by 6
    int heads = 6;
    int mlp_ratio = 4;
    int num_classes = 2;
    int patch_size = 16;
    int in_channels = 4;
    int max_image_edge = 96;
    PosStrategy posemb = PosStrategy::center_select;

    static ModelConfig small_preset() { return ModelConfig{}; }

    static ModelConfig tiny_preset() {
        ModelConfig c;
        c.depth = 2;
        c.embed_dim = 48;
        c.heads = 4;
        c.patch_size = 8;
        c.max_image_edge = 32;
        return c;
    }

    int head_dim() const { return embed_dim / heads; }
    Grid3 max_grid() const {
        std::size_t g = static_cast<std::size_t>(max_image_edge / patch_size);
        return {g, g, g};
    }
    void validate() const {
        if (depth < 0) throw data_error("depth must be >= 0");
        if (embed_dim % heads != 0) throw data_error("embed_dim must be divisible by heads");
        if (embed_dim % 6 != 0) throw data_error("embed_dim must be divisible by 6");
        if (max_image_edge % patch_size != 0)
            throw data_error("max_image_edge must be a multiple of patch_size");
    }
};

template <typename T>
struct BlockParamsT {
    TensorT<T> ln1_g, ln1_b;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<T> ln2_g, ln2_b;
    TensorT<T> w1, b1, w2, b2;
};

template <typename T>
struct ModelParamsT {
    TensorT<T> patch_w, patch_b, cls;
    std::vector<BlockParamsT<T>> blocks;
    TensorT<T> lnf_g, lnf_b;
    TensorT<T> head_w, head_b;
    TensorT<T> pos_learned;  // [G,G,G,d], interp_learned only
    TensorT<T> rel_table;    // [heads, entries], relative only
};

template <typename T>
struct ParamRef {
    std::string name;
    TensorT<T>* value;
    TensorT<T>* grad;
    bool decay;  // decoupled weight decay applies
};

template <typename T>
struct BlockCacheT {
    LayerNormCache<T> ln1;
    TensorT<T> ln1_out;
    TensorT<T> q, k, v;              // [S, d]
    std::vector<TensorT<T>> attn;    // per head, [S, S] post-softmax
    TensorT<T> ctx;                  // [S, d]
    TensorT<T> x_mid;                // [S, d]
    LayerNormCache<T> ln2;
    TensorT<T> ln2_out;
    TensorT<T> h_pre;                // [S, hidden]
    TensorT<T> h_act;
};

template <typename T>
struct ForwardCacheT {
    Grid3 grid = {0, 0, 0};
    TensorT<T> patches;              // [N, C*P^3]
    TensorT<T> tokens0;              // [S, d] after positional add
    std::vector<std::size_t> rel_idx;  // offset index map, relative mode
    std::vector<BlockCacheT<T>> blocks;
    LayerNormCache<T> lnf;
    TensorT<T> cls_final;            // [d]
    bool valid = false;
};

using ForwardCache = ForwardCacheT<float>;

namespace detail {

template <typename T>
TensorT<T> head_slice(const TensorT<T>& x, std::size_t head, std::size_t dh) {
    const std::size_t S = x.extent(0), d = x.cols();
    TensorT<T> out({S, dh});
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < dh; ++j) out[i * dh + j] = x[i * d + head * dh + j];
    return out;
}

template <typename T>
void head_unslice_add(TensorT<T>& x, const TensorT<T>& part, std::size_t head,
                      std::size_t dh) {
    const std::size_t S = x.extent(0), d = x.cols();
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < dh; ++j) x[i * d + head * dh + j] += part[i * dh + j];
}

template <typename T>
TensorT<T> col_sums(const TensorT<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    TensorT<T> out({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
    return out;
}

}  // namespace detail

/// Pre-norm transformer encoder with a linear classification head on the
/// final CLS token. One parameter set serves every admissible sequence
/// length; only activation shapes change with the input size.
template <typename T>
class ModelT {
public:
    ModelT(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
        cfg_.validate();
        init_params(Rng(seed));
        grads_ = make_like(params_);
        if (cfg_.posemb == PosStrategy::center_select ||
            cfg_.posemb == PosStrategy::interp_fixed) {
            master_ = build_sinusoidal_3d<T>(cfg_.max_grid(),
                                             static_cast<std::size_t>(cfg_.embed_dim));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    ModelParamsT<T>& params() { return params_; }
    const ModelParamsT<T>& params() const { return params_; }
    ModelParamsT<T>& grads() { return grads_; }

    /// Absolute positional embedding rows [N, d] for a patch grid, per the
    /// configured strategy. Not defined for the relative strategy.
    TensorT<T> positional_for(const Grid3& grid) const {
        switch (cfg_.posemb) {
            case PosStrategy::center_select:
                return center_and_select(master_, grid);
            case PosStrategy::interp_fixed:
                return interp_resize(master_, grid);
            case PosStrategy::interp_learned: {
                PosEmbedGridT<T> pe;
                pe.kind = PosKind::learned;
                pe.grid = params_.pos_learned;
                return interp_resize(pe, grid);
            }
            case PosStrategy::indep_fixed: {
                auto it = indep_.find(grid);
                if (it == indep_.end())
                    it = indep_.emplace(grid, build_sinusoidal_3d<T>(
                                                  grid, static_cast<std::size_t>(
                                                            cfg_.embed_dim)))
                             .first;
                return center_and_select(it->second, grid);  // full-size slice
            }
            case PosStrategy::relative:
                throw numeric_error("relative strategy has no absolute positional rows");
        }
        throw numeric_error("unreachable");
    }

    TensorT<T> forward(const TensorT<T>& voxels, ForwardCacheT<T>& cache) const {
        const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t dh = static_cast<std::size_t>(cfg_.head_dim());
        const std::size_t H = static_cast<std::size_t>(cfg_.heads);
        PatchConfig pcfg{cfg_.patch_size, cfg_.embed_dim, cfg_.in_channels};

        cache = ForwardCacheT<T>{};
        cache.patches = extract_patches(voxels, pcfg, &cache.grid);
        auto seq = embed_patches(cache.patches, cache.grid, params_.patch_w,
                                 params_.patch_b, params_.cls);
        const std::size_t N = seq.patch_count();
        const std::size_t S = N + 1;

        TensorT<T> rel_bias;  // [H, N, N]
        if (cfg_.posemb == PosStrategy::relative) {
            cache.rel_idx = rel_bias_index_map(cfg_.max_grid(), cache.grid);
            RelPosBiasT<T> b;
            b.table = params_.rel_table;
            b.max_grid = cfg_.max_grid();
            rel_bias = rel_bias_lookup(b, cache.grid);
        } else {
            TensorT<T> pos = positional_for(cache.grid);
            if (pos.extent(0) != N)
                throw numeric_error("positional rows do not match patch count");
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    seq.tokens[(i + 1) * d + j] += pos[i * d + j];
        }
        cache.tokens0 = seq.tokens;

        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        TensorT<T> x = seq.tokens;
        cache.blocks.resize(cfg_.depth);
        for (int b = 0; b < cfg_.depth; ++b) {
            const auto& bp = params_.blocks[b];
            auto& bc = cache.blocks[b];
            bc.ln1_out = layernorm(x, bp.ln1_g, bp.ln1_b, T(1e-5), &bc.ln1);
            bc.q = matmul(bc.ln1_out, bp.wq);
            add_row_bias(bc.q, bp.bq);
            bc.k = matmul(bc.ln1_out, bp.wk);
            add_row_bias(bc.k, bp.bk);
            bc.v = matmul(bc.ln1_out, bp.wv);
            add_row_bias(bc.v, bp.bv);
            bc.ctx = TensorT<T>({S, d});
            bc.attn.resize(H);
            for (std::size_t h = 0; h < H; ++h) {
                TensorT<T> qh = detail::head_slice(bc.q, h, dh);
                TensorT<T> kh = detail::head_slice(bc.k, h, dh);
                TensorT<T> vh = detail::head_slice(bc.v, h, dh);
                TensorT<T> scores({S, S});
                for (std::size_t i = 0; i < S; ++i)
                    for (std::size_t j = 0; j < S; ++j) {
                        T acc = 0;
                        for (std::size_t t = 0; t < dh; ++t)
                            acc += qh[i * dh + t] * kh[j * dh + t];
                        scores[i * S + j] = acc * scale;
                    }
                if (cfg_.posemb == PosStrategy::relative) {
                    // CLS row and column carry zero bias.
                    const T* bh = rel_bias.data() + h * N * N;
                    for (std::size_t i = 0; i < N; ++i)
                        for (std::size_t j = 0; j < N; ++j)
                            scores[(i + 1) * S + (j + 1)] += bh[i * N + j];
                }
                bc.attn[h] = softmax_rows(scores);
                TensorT<T> ctx_h = matmul(bc.attn[h], vh);
                detail::head_unslice_add(bc.ctx, ctx_h, h, dh);
            }
            TensorT<T> attn_out = matmul(bc.ctx, bp.wo);
            add_row_bias(attn_out, bp.bo);
            bc.x_mid = x;
            add_inplace(bc.x_mid, attn_out);
            bc.ln2_out = layernorm(bc.x_mid, bp.ln2_g, bp.ln2_b, T(1e-5), &bc.ln2);
            bc.h_pre = matmul(bc.ln2_out, bp.w1);
            add_row_bias(bc.h_pre, bp.b1);
            bc.h_act = gelu(bc.h_pre);
            TensorT<T> mlp_out = matmul(bc.h_act, bp.w2);
            add_row_bias(mlp_out, bp.b2);
            x = bc.x_mid;
            add_inplace(x, mlp_out);
        }

        TensorT<T> xn = layernorm(x, params_.lnf_g, params_.lnf_b, T(1e-5), &cache.lnf);
        cache.cls_final = TensorT<T>({d});
        for (std::size_t j = 0; j < d; ++j) cache.cls_final[j] = xn[j];
        TensorT<T> cls_row({std::size_t(1), d}, std::vector<T>(cache.cls_final.vec()));
        TensorT<T> logits2 = matmul(cls_row, params_.head_w);
        add_row_bias(logits2, params_.head_b);
        TensorT<T> logits({static_cast<std::size_t>(cfg_.num_classes)});
        for (int c = 0; c < cfg_.num_classes; ++c) logits[c] = logits2[c];
        cache.valid = true;
        return logits;
    }

    /// Accumulates gradients of a scalar loss into the gradient buffers,
    /// given dLoss/dLogits. The cache must come from a prior forward call.
    void backward(const ForwardCacheT<T>& cache, const TensorT<T>& dlogits) {
        if (!cache.valid) throw numeric_error("backward: missing forward cache");
        const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t dh = static_cast<std::size_t>(cfg_.head_dim());
        const std::size_t H = static_cast<std::size_t>(cfg_.heads);
        const std::size_t N = cache.grid[0] * cache.grid[1] * cache.grid[2];
        const std::size_t S = N + 1;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));

        // head
        TensorT<T> cls_row({std::size_t(1), d}, std::vector<T>(cache.cls_final.vec()));
        TensorT<T> dlog_row({std::size_t(1), static_cast<std::size_t>(cfg_.num_classes)},
                            std::vector<T>(dlogits.vec()));
        TensorT<T> d_cls_row, d_head_w;
        matmul_backward(cls_row, params_.head_w, dlog_row, d_cls_row, d_head_w);
        add_inplace(grads_.head_w, d_head_w);
        add_inplace(grads_.head_b, dlogits);

        TensorT<T> d_xn({S, d});
        for (std::size_t j = 0; j < d; ++j) d_xn[j] = d_cls_row[j];
        TensorT<T> dx, d_g, d_b;
        layernorm_backward(cache.lnf, params_.lnf_g, d_xn, dx, d_g, d_b);
        add_inplace(grads_.lnf_g, d_g);
        add_inplace(grads_.lnf_b, d_b);

        for (int b = cfg_.depth - 1; b >= 0; --b) {
            const auto& bp = params_.blocks[b];
            auto& bg = grads_.blocks[b];
            const auto& bc = cache.blocks[b];

            // MLP branch: x_next = x_mid + (gelu(ln2_out*W1+b1))*W2+b2
            TensorT<T> d_x_mid = dx;  // residual path
            TensorT<T> d_h_act, d_w2;
            matmul_backward(bc.h_act, bp.w2, dx, d_h_act, d_w2);
            add_inplace(bg.w2, d_w2);
            add_inplace(bg.b2, detail::col_sums(dx));
            TensorT<T> d_h_pre = gelu_backward(bc.h_pre, d_h_act);
            TensorT<T> d_ln2_out, d_w1;
            matmul_backward(bc.ln2_out, bp.w1, d_h_pre, d_ln2_out, d_w1);
            add_inplace(bg.w1, d_w1);
            add_inplace(bg.b1, detail::col_sums(d_h_pre));
            TensorT<T> d_from_ln2;
            layernorm_backward(bc.ln2, bp.ln2_g, d_ln2_out, d_from_ln2, d_g, d_b);
            add_inplace(bg.ln2_g, d_g);
            add_inplace(bg.ln2_b, d_b);
            add_inplace(d_x_mid, d_from_ln2);

            // Attention branch: x_mid = x_in + (ctx*Wo+bo)
            TensorT<T> d_ctx, d_wo;
            matmul_backward(bc.ctx, bp.wo, d_x_mid, d_ctx, d_wo);
            add_inplace(bg.wo, d_wo);
            add_inplace(bg.bo, detail::col_sums(d_x_mid));

            TensorT<T> d_q({S, d}), d_k({S, d}), d_v({S, d});
            for (std::size_t h = 0; h < H; ++h) {
                TensorT<T> qh = detail::head_slice(bc.q, h, dh);
                TensorT<T> kh = detail::head_slice(bc.k, h, dh);
                TensorT<T> vh = detail::head_slice(bc.v, h, dh);
                TensorT<T> d_ctx_h = detail::head_slice(d_ctx, h, dh);
                TensorT<T> d_attn, d_vh;
                matmul_backward(bc.attn[h], vh, d_ctx_h, d_attn, d_vh);
                TensorT<T> d_scores = softmax_backward(bc.attn[h], d_attn);
                if (cfg_.posemb == PosStrategy::relative) {
                    T* tg = grads_.rel_table.data() + h * grads_.rel_table.extent(1);
                    for (std::size_t i = 0; i < N; ++i)
                        for (std::size_t j = 0; j < N; ++j)
                            tg[cache.rel_idx[i * N + j]] +=
                                d_scores[(i + 1) * S + (j + 1)];
                }
                TensorT<T> d_qh({S, dh}), d_kh({S, dh});
                for (std::size_t i = 0; i < S; ++i)
                    for (std::size_t t = 0; t < dh; ++t) {
                        T accq = 0;
                        for (std::size_t j = 0; j < S; ++j)
                            accq += d_scores[i * S + j] * kh[j * dh + t];
                        d_qh[i * dh + t] = accq * scale;
                    }
                for (std::size_t j = 0; j < S; ++j)
                    for (std::size_t t = 0; t < dh; ++t) {
                        T acck = 0;
                        for (std::size_t i = 0; i < S; ++i)
                            acck += d_scores[i * S + j] * qh[i * dh + t];
                        d_kh[j * dh + t] = acck * scale;
                    }
                detail::head_unslice_add(d_q, d_qh, h, dh);
                detail::head_unslice_add(d_k, d_kh, h, dh);
                detail::head_unslice_add(d_v, d_vh, h, dh);
            }

            TensorT<T> d_ln1_out({S, d});
            TensorT<T> tmp_in, tmp_w;
            matmul_backward(bc.ln1_out, bp.wq, d_q, tmp_in, tmp_w);
            add_inplace(d_ln1_out, tmp_in);
            add_inplace(bg.wq, tmp_w);
            add_inplace(bg.bq, detail::col_sums(d_q));
            matmul_backward(bc.ln1_out, bp.wk, d_k, tmp_in, tmp_w);
            add_inplace(d_ln1_out, tmp_in);
            add_inplace(bg.wk, tmp_w);
            add_inplace(bg.bk, detail::col_sums(d_k));
            matmul_backward(bc.ln1_out, bp.wv, d_v, tmp_in, tmp_w);
            add_inplace(d_ln1_out, tmp_in);
            add_inplace(bg.wv, tmp_w);
            add_inplace(bg.bv, detail::col_sums(d_v));

            TensorT<T> d_from_ln1;
            layernorm_backward(bc.ln1, bp.ln1_g, d_ln1_out, d_from_ln1, d_g, d_b);
            add_inplace(bg.ln1_g, d_g);
            add_inplace(bg.ln1_b, d_b);
            dx = d_x_mid;
            add_inplace(dx, d_from_ln1);
        }

        // dx is now the gradient at tokens0 (embeddings + positional add).
        if (cfg_.posemb == PosStrategy::interp_learned) {
            TensorT<T> d_pos({N, d});
            std::copy(dx.data() + d, dx.data() + S * d, d_pos.data());
            interp_resize_backward(cfg_.max_grid(), cache.grid, d_pos,
                                   grads_.pos_learned);
        }
        TensorT<T> d_patches, d_pw, d_pb, d_cls;
        embed_patches_backward(cache.patches, params_.patch_w, dx, d_patches, d_pw,
                               d_pb, d_cls);
        add_inplace(grads_.patch_w, d_pw);
        add_inplace(grads_.patch_b, d_pb);
        add_inplace(grads_.cls, d_cls);
    }

    void zero_grads() { zero_all(grads_); }

    /// Attention matrix [S, S] of one head at one layer.
    TensorT<T> attention_map(const ForwardCacheT<T>& cache, int layer, int head) const {
        if (!cache.valid) throw numeric_error("attention_map: missing forward cache");
        return cache.blocks.at(layer).attn.at(head);
    }

    /// CLS attention row, averaged over heads, reshaped to the patch grid.
    TensorT<T> cls_attention(const ForwardCacheT<T>& cache, int layer) const {
        if (!cache.valid) throw numeric_error("cls_attention: missing forward cache");
        const auto& attn = cache.blocks.at(layer).attn;
        const std::size_t N = cache.grid[0] * cache.grid[1] * cache.grid[2];
        const std::size_t S = N + 1;
        TensorT<T> out({cache.grid[0], cache.grid[1], cache.grid[2]});
        for (std::size_t j = 0; j < N; ++j) {
            T acc = 0;
            for (const auto& a : attn) acc += a[0 * S + (j + 1)];
            out[j] = acc / static_cast<T>(attn.size());
        }
        return out;
    }

    std::vector<ParamRef<T>> param_refs() {
        std::vector<ParamRef<T>> refs;
        auto add = [&](const std::string& name, TensorT<T>& v, TensorT<T>& g,
                       bool decay) {
            refs.push_back({name, &v, &g, decay});
        };
        add("patch_w", params_.patch_w, grads_.patch_w, true);
        add("patch_b", params_.patch_b, grads_.patch_b, false);
        add("cls", params_.cls, grads_.cls, false);
        for (int b = 0; b < cfg_.depth; ++b) {
            std::string p = "block" + std::to_string(b) + ".";
            auto& bp = params_.blocks[b];
            auto& bg = grads_.blocks[b];
            add(p + "ln1_g", bp.ln1_g, bg.ln1_g, false);
            add(p + "ln1_b", bp.ln1_b, bg.ln1_b, false);
            add(p + "wq", bp.wq, bg.wq, true);
            add(p + "bq", bp.bq, bg.bq, false);
            add(p + "wk", bp.wk, bg.wk, true);
            add(p + "bk", bp.bk, bg.bk, false);
            add(p + "wv", bp.wv, bg.wv, true);
            add(p + "bv", bp.bv, bg.bv, false);
            add(p + "wo", bp.wo, bg.wo, true);
            add(p + "bo", bp.bo, bg.bo, false);
            add(p + "ln2_g", bp.ln2_g, bg.ln2_g, false);
            add(p + "ln2_b", bp.ln2_b, bg.ln2_b, false);
            add(p + "w1", bp.w1, bg.w1, true);
            add(p + "b1", bp.b1, bg.b1, false);
            add(p + "w2", bp.w2, bg.w2, true);
            add(p + "b2", bp.b2, bg.b2, false);
        }
        add("lnf_g", params_.lnf_g, grads_.lnf_g, false);
        add("lnf_b", params_.lnf_b, grads_.lnf_b, false);
        add("head_w", params_.head_w, grads_.head_w, true);
        add("head_b", params_.head_b, grads_.head_b, false);
        if (cfg_.posemb == PosStrategy::interp_learned)
            add("pos_learned", params_.pos_learned, grads_.pos_learned, true);
        if (cfg_.posemb == PosStrategy::relative)
            add("rel_table", params_.rel_table, grads_.rel_table, true);
        return refs;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (const auto& r : param_refs()) n += r.value->numel();
        return n;
    }

private:
    void init_params(Rng rng) {
        const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
        const std::size_t pv = static_cast<std::size_t>(
            cfg_.in_channels * cfg_.patch_size * cfg_.patch_size * cfg_.patch_size);
        const std::size_t hidden = d * static_cast<std::size_t>(cfg_.mlp_ratio);
        const std::size_t K = static_cast<std::size_t>(cfg_.num_classes);
        auto tn = [&](std::vector<std::size_t> shape) {
            TensorT<T> t(std::move(shape));
            for (std::size_t i = 0; i < t.numel(); ++i)
                t[i] = static_cast<T>(rng.trunc_normal(0.02));
            return t;
        };
        params_.patch_w = tn({pv, d});
        params_.patch_b = TensorT<T>({d});
        params_.cls = tn({d});
        params_.blocks.resize(cfg_.depth);
        for (auto& bp : params_.blocks) {
            bp.ln1_g = TensorT<T>::full({d}, T(1));
            bp.ln1_b = TensorT<T>({d});
            bp.wq = tn({d, d});
            bp.bq = TensorT<T>({d});
            bp.wk = tn({d, d});
            bp.bk = TensorT<T>({d});
            bp.wv = tn({d, d});
            bp.bv = TensorT<T>({d});
            bp.wo = tn({d, d});
            bp.bo = TensorT<T>({d});
            bp.ln2_g = TensorT<T>::full({d}, T(1));
            bp.ln2_b = TensorT<T>({d});
            bp.w1 = tn({d, hidden});
            bp.b1 = TensorT<T>({hidden});
            bp.w2 = tn({hidden, d});
            bp.b2 = TensorT<T>({d});
        }
        params_.lnf_g = TensorT<T>::full({d}, T(1));
        params_.lnf_b = TensorT<T>({d});
        params_.head_w = tn({d, K});
        params_.head_b = TensorT<T>({K});
        if (cfg_.posemb == PosStrategy::interp_learned) {
            auto g = cfg_.max_grid();
            params_.pos_learned = tn({g[0], g[1], g[2], d});
        }
        if (cfg_.posemb == PosStrategy::relative) {
            auto g = cfg_.max_grid();
            params_.rel_table = tn({static_cast<std::size_t>(cfg_.heads),
                                    (2 * g[0] - 1) * (2 * g[1] - 1) * (2 * g[2] - 1)});
        }
    }

    static ModelParamsT<T> make_like(const ModelParamsT<T>& p) {
        ModelParamsT<T> g;
        auto z = [](const TensorT<T>& t) {
            return t.numel() ? TensorT<T>(t.shape()) : TensorT<T>();
        };
        g.patch_w = z(p.patch_w);
        g.patch_b = z(p.patch_b);
        g.cls = z(p.cls);
        g.blocks.resize(p.blocks.size());
        for (std::size_t i = 0; i < p.blocks.size(); ++i) {
            const auto& s = p.blocks[i];
            auto& d = g.blocks[i];
            d.ln1_g = z(s.ln1_g); d.ln1_b = z(s.ln1_b);
            d.wq = z(s.wq); d.bq = z(s.bq);
            d.wk = z(s.wk); d.bk = z(s.bk);
            d.wv = z(s.wv); d.bv = z(s.bv);
            d.wo = z(s.wo); d.bo = z(s.bo);
            d.ln2_g = z(s.ln2_g); d.ln2_b = z(s.ln2_b);
            d.w1 = z(s.w1); d.b1 = z(s.b1);
            d.w2 = z(s.w2); d.b2 = z(s.b2);
        }
        g.lnf_g = z(p.lnf_g);
        g.lnf_b = z(p.lnf_b);
        g.head_w = z(p.head_w);
        g.head_b = z(p.head_b);
        g.pos_learned = z(p.pos_learned);
        g.rel_table = z(p.rel_table);
        return g;
    }

    void zero_all(ModelParamsT<T>& g) {
        for (auto& r : param_refs()) r.grad->fill(T(0));
        (void)g;
    }

    ModelConfig cfg_;
    std::uint64_t seed_ = 0;
    ModelParamsT<T> params_;
    ModelParamsT<T> grads_;
    PosEmbedGridT<T> master_;
    mutable std::map<Grid3, PosEmbedGridT<T>> indep_;
};

using Model = ModelT<float>;

// ---- checkpointing: a directory of named VVT1 tensors plus a text config ----

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, ModelT<T>& model) {
    std::filesystem::create_directories(dir);
    const auto& cfg = model.config();
    std::ofstream os(dir / "config.txt");
    os << "depth=" << cfg.depth << "\n"
       << "embed_dim=" << cfg.embed_dim << "\n"
       << "heads=" << cfg.heads << "\n"
       << "mlp_ratio=" << cfg.mlp_ratio << "\n"
       << "num_classes=" << cfg.num_classes << "\n"
       << "patch_size=" << cfg.patch_size << "\n"
       << "in_channels=" << cfg.in_channels << "\n"
       << "max_image_edge=" << cfg.max_image_edge << "\n"
       << "posemb=" << to_string(cfg.posemb) << "\n"
       << "seed=" << model.seed() << "\n";
    for (const auto& r : model.param_refs())
        write_tensor(dir / (r.name + ".vvt"), *r.value);
}

template <typename T = float>
ModelT<T> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "config.txt");
    if (!is) throw data_error("missing checkpoint config: " + dir.string());
    ModelConfig cfg;
    std::uint64_t seed = 0;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "depth") cfg.depth = std::stoi(v);
        else if (k == "embed_dim") cfg.embed_dim = std::stoi(v);
        else if (k == "heads") cfg.heads = std::stoi(v);
        else if (k == "mlp_ratio") cfg.mlp_ratio = std::stoi(v);
        else if (k == "num_classes") cfg.num_classes = std::stoi(v);
        else if (k == "patch_size") cfg.patch_size = std::stoi(v);
        else if (k == "in_channels") cfg.in_channels = std::stoi(v);
        else if (k == "max_image_edge") cfg.max_image_edge = std::stoi(v);
        else if (k == "posemb") cfg.posemb = pos_strategy_from(v);
        else if (k == "seed") seed = std::stoull(v);
    }
    ModelT<T> model(cfg, seed);
    for (auto& r : model.param_refs()) {
        TensorT<T> t = read_tensor<T>(dir / (r.name + ".vvt"));
        if (!t.same_shape(*r.value))
            throw data_error("checkpoint shape mismatch for " + r.name);
        *r.value = std::move(t);
    }
    return model;
}

}  // namespace varivit
