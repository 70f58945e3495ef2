#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "varivit/batching.hpp"
#include "varivit/data.hpp"
#include "varivit/encoder.hpp"

namespace varivit {

struct TrainConfig {
    double base_lr = 1e-3;
    double weight_decay = 0.05;
    int warmup_epochs = 40;
    int total_epochs = 100;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double aug_sigma = 0.01;
    double aug_flip_prob = 0.5;

    void validate() const {
        if (warmup_epochs > total_epochs)
            throw data_error("warmup_epochs must be <= total_epochs");
        if (base_lr <= 0 || total_epochs <= 0 || batch_size < 1)
            throw data_error("train config values must be positive");
    }
};

/// Learning rate at a (real-valued) epoch: linear ramp 0 -> base over the
/// warmup, then cosine decay to 0 at the final epoch. The training loop
/// evaluates this at epoch midpoints, so within-epoch LR is constant.
inline double lr_at(double epoch, const TrainConfig& cfg) {
    if (epoch <= cfg.warmup_epochs) {
        if (cfg.warmup_epochs == 0) return cfg.base_lr;
        return cfg.base_lr * epoch / cfg.warmup_epochs;
    }
    double t = (epoch - cfg.warmup_epochs) /
               static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

/// Per-parameter Adam moments, keyed by parameter name.
template <typename T>
struct AdamStateT {
    std::map<std::string, std::pair<TensorT<T>, TensorT<T>>> moments;
    std::uint64_t t = 0;
};

using AdamState = AdamStateT<float>;

/// Decoupled-weight-decay optimizer step: bias-corrected adaptive-moment
/// update plus a separate multiplicative decay lr*wd*theta on decayed
/// tensors only (weight matrices; never layernorm affines, biases, or CLS).
template <typename T>
void optimizer_step(std::vector<ParamRef<T>>& refs, AdamStateT<T>& state, double lr,
                    const TrainConfig& cfg) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& r : refs) {
        auto it = state.moments.find(r.name);
        if (it == state.moments.end())
            it = state.moments
                     .emplace(r.name, std::make_pair(TensorT<T>(r.value->shape()),
                                                     TensorT<T>(r.value->shape())))
                     .first;
        auto& [m, v] = it->second;
        if (!m.same_shape(*r.value))
            throw numeric_error("optimizer state shape mismatch for " + r.name);
        TensorT<T>& theta = *r.value;
        const TensorT<T>& g = *r.grad;
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            double gi = static_cast<double>(g[i]);
            if (!std::isfinite(gi))
                throw numeric_error("non-finite gradient in parameter " + r.name);
            double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
            double value = static_cast<double>(theta[i]) - step;
            if (r.decay) value -= lr * cfg.weight_decay * theta[i];
            theta[i] = static_cast<T>(value);
        }
    }
}

/// Class weights w_k = total / (K * n_k) from label counts.
inline std::vector<double> class_weights(const std::vector<int>& labels,
                                         int num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw data_error("label out of range");
        ++counts[l];
    }
    std::vector<double> w(num_classes);
    for (int k = 0; k < num_classes; ++k)
        w[k] = counts[k] ? static_cast<double>(labels.size()) /
                               (num_classes * static_cast<double>(counts[k]))
                         : 0.0;
    return w;
}

/// Weighted cross-entropy: loss = -w_y * log softmax(logits)_y.
/// Returns the loss and dLoss/dLogits.
template <typename T>
std::pair<double, TensorT<T>> weighted_ce(const TensorT<T>& logits, int label,
                                          const std::vector<double>& weights) {
    const std::size_t K = logits.numel();
    if (label < 0 || static_cast<std::size_t>(label) >= K)
        throw data_error("weighted_ce: label out of range");
    double mx = logits[0];
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits[k]));
    double sum = 0;
    std::vector<double> p(K);
    for (std::size_t k = 0; k < K; ++k) {
        p[k] = std::exp(static_cast<double>(logits[k]) - mx);
        sum += p[k];
    }
    for (auto& v : p) v /= sum;
    const double w = weights.at(label);
    double loss = -w * std::log(p[label]);
    TensorT<T> dlogits({K});
    for (std::size_t k = 0; k < K; ++k)
        dlogits[k] = static_cast<T>(w * (p[k] - (static_cast<int>(k) == label ? 1.0 : 0.0)));
    return {loss, dlogits};
}

template <typename T>
std::vector<double> softmax_probs(const TensorT<T>& logits) {
    double mx = logits[0];
    for (std::size_t k = 0; k < logits.numel(); ++k)
        mx = std::max(mx, static_cast<double>(logits[k]));
    std::vector<double> p(logits.numel());
    double sum = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = std::exp(static_cast<double>(logits[k]) - mx);
        sum += p[k];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// ------------------------------- metrics -----------------------------------

struct MetricsRecord {
    double auc = 0, f1 = 0, mcc = 0, loss = 0;
    int epoch = 0;
    double wall_clock_seconds = 0;
};

/// Rank-statistic AUC with average ranks on ties. scores are P(class 1).
inline double auc_binary(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::size_t n1 = 0;
    for (int l : labels) n1 += (l == 1);
    const std::size_t n0 = n - n1;
    if (n1 == 0 || n0 == 0)
        throw data_error("AUC undefined: ground truth contains a single class");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double sum_pos = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] == 1) sum_pos += rank[k];
    return (sum_pos - static_cast<double>(n1) * (n1 + 1) / 2.0) /
           (static_cast<double>(n1) * static_cast<double>(n0));
}

struct Confusion {
    // counts[true][pred]
    std::vector<std::vector<std::size_t>> counts;
    explicit Confusion(int K) : counts(K, std::vector<std::size_t>(K, 0)) {}
};

inline double f1_from_confusion(const Confusion& c) {
    const int K = static_cast<int>(c.counts.size());
    if (K == 2) {
        double tp = static_cast<double>(c.counts[1][1]);
        double fp = static_cast<double>(c.counts[0][1]);
        double fn = static_cast<double>(c.counts[1][0]);
        double denom = 2 * tp + fp + fn;
        return denom > 0 ? 2 * tp / denom : 0.0;
    }
    double sum = 0;
    for (int k = 0; k < K; ++k) {
        double tp = static_cast<double>(c.counts[k][k]);
        double fp = 0, fn = 0;
        for (int j = 0; j < K; ++j)
            if (j != k) {
                fp += static_cast<double>(c.counts[j][k]);
                fn += static_cast<double>(c.counts[k][j]);
            }
        double denom = 2 * tp + fp + fn;
        sum += denom > 0 ? 2 * tp / denom : 0.0;
    }
    return sum / K;  // macro-F1
}

/// Matthews correlation; the multi-class form is the generalized R_K
/// statistic of the confusion matrix.
inline double mcc_from_confusion(const Confusion& c) {
    const int K = static_cast<int>(c.counts.size());
    double s = 0, corr = 0;
    std::vector<double> t(K, 0), p(K, 0);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            double v = static_cast<double>(c.counts[i][j]);
            s += v;
            t[i] += v;
            p[j] += v;
            if (i == j) corr += v;
        }
    double tp_sum = 0;
    for (int k = 0; k < K; ++k) tp_sum += t[k] * p[k];
    double num = corr * s - tp_sum;
    double d1 = s * s, d2 = s * s;
    for (int k = 0; k < K; ++k) {
        d1 -= p[k] * p[k];
        d2 -= t[k] * t[k];
    }
    double denom = std::sqrt(d1) * std::sqrt(d2);
    return denom > 0 ? num / denom : 0.0;
}

/// AUC/F1/MCC from per-sample class probabilities. Binary: threshold 0.5 on
/// P(class 1). Multi-class: argmax predictions, macro-F1, generalized MCC,
/// macro one-vs-rest AUC.
inline MetricsRecord compute_metrics(const std::vector<std::vector<double>>& probs,
                                     const std::vector<int>& labels) {
    if (probs.empty()) throw data_error("compute_metrics: no samples");
    const int K = static_cast<int>(probs.front().size());
    MetricsRecord rec;
    Confusion conf(K);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        int pred;
        if (K == 2) {
            pred = probs[i][1] >= 0.5 ? 1 : 0;
        } else {
            pred = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) -
                                    probs[i].begin());
        }
        conf.counts[labels[i]][pred] += 1;
    }
    rec.f1 = f1_from_confusion(conf);
    rec.mcc = mcc_from_confusion(conf);
    if (K == 2) {
        std::vector<double> scores(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) scores[i] = probs[i][1];
        rec.auc = auc_binary(scores, labels);
    } else {
        double sum = 0;
        for (int k = 0; k < K; ++k) {
            std::vector<double> scores(probs.size());
            std::vector<int> lab(probs.size());
            for (std::size_t i = 0; i < probs.size(); ++i) {
                scores[i] = probs[i][k];
                lab[i] = labels[i] == k ? 1 : 0;
            }
            sum += auc_binary(scores, lab);
        }
        rec.auc = sum / K;
    }
    return rec;
}

// ----------------------------- training loop --------------------------------

/// Manifest view over an in-memory dataset; crop_edge read from the tensors.
inline DatasetManifest manifest_of(const std::vector<Volume>& vols,
                                   std::uint64_t seed = 0) {
    DatasetManifest m;
    m.seed = seed;
    for (std::size_t i = 0; i < vols.size(); ++i)
        m.samples.push_back({vols[i].sample_id, "", vols[i].label,
                             static_cast<int>(vols[i].voxels.extent(1))});
    return m;
}

/// Forward + weighted CE + backward for one sample, with the upstream
/// gradient scaled by `scale` (1/effective-batch-count). Returns the loss.
template <typename T>
double sample_loss_backward(ModelT<T>& model, const TensorT<T>& voxels, int label,
                            const std::vector<double>& weights, double scale) {
    ForwardCacheT<T> cache;
    TensorT<T> logits = model.forward(voxels, cache);
    auto [loss, dlogits] = weighted_ce(logits, label, weights);
    scale_inplace(dlogits, static_cast<T>(scale));
    model.backward(cache, dlogits);
    return loss;
}

struct EvalResult {
    double mean_loss = 0;
    double accuracy = 0;
    MetricsRecord metrics;
    std::vector<std::vector<double>> probs;
};

/// Evaluate without augmentation. pad_edge > 0 pads every volume (the
/// pad-to-max regime); 0 evaluates at native crop sizes.
template <typename T>
EvalResult evaluate(ModelT<T>& model, const std::vector<Volume>& vols,
                    const std::vector<double>& weights, int pad_edge = 0) {
    EvalResult res;
    std::vector<int> labels;
    std::size_t correct = 0;
    for (const auto& v : vols) {
        const Volume* use = &v;
        Volume padded;
        if (pad_edge > 0) {
            padded = pad_to_edge(v, pad_edge);
            use = &padded;
        }
        ForwardCacheT<T> cache;
        TensorT<T> vox = use->voxels.template cast<T>();
        TensorT<T> logits = model.forward(vox, cache);
        auto [loss, dl] = weighted_ce(logits, v.label, weights);
        (void)dl;
        res.mean_loss += loss;
        auto p = softmax_probs(logits);
        int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        correct += (pred == v.label);
        res.probs.push_back(std::move(p));
        labels.push_back(v.label);
    }
    res.mean_loss /= static_cast<double>(vols.size());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(vols.size());
    res.metrics = compute_metrics(res.probs, labels);
    res.metrics.loss = res.mean_loss;
    return res;
}

struct EpochRecord {
    int epoch;
    std::string split;
    double loss, auc, f1, mcc, seconds;
};

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<EpochRecord>& records) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write metrics csv: " + path.string());
    os << "epoch,split,loss,auc,f1,mcc,seconds\n";
    for (const auto& r : records)
        os << r.epoch << "," << r.split << "," << r.loss << "," << r.auc << ","
           << r.f1 << "," << r.mcc << "," << r.seconds << "\n";
}

struct TrainResult {
    std::vector<EpochRecord> records;
    double first_batch_loss = 0;  // mean untrained loss over the first batch
};

/// The epoch loop: replan batches with an epoch-derived seed, iterate per
/// the plan's mode, augment, update per the plan's cadence, evaluate on the
/// held-out split, and append per-epoch metrics.
template <typename T>
TrainResult train_loop(ModelT<T>& model, const std::vector<Volume>& train,
                       const std::vector<Volume>& test, BatchMode mode,
                       const TrainConfig& cfg,
                       const std::filesystem::path& out_dir = {}) {
    cfg.validate();
    std::vector<int> labels;
    for (const auto& v : train) labels.push_back(v.label);
    const auto weights = class_weights(labels, model.config().num_classes);
    const auto manifest = manifest_of(train, cfg.seed);
    const int pad_edge =
        mode == BatchMode::pad_to_max ? model.config().max_image_edge : 0;

    Rng root(cfg.seed);
    AdamStateT<T> adam;
    TrainResult result;
    bool first_batch = true;

    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        BatchPlan plan =
            make_plan(mode, manifest, cfg.batch_size, root.derive(1000 + epoch));
        const double lr = lr_at(epoch + 0.5, cfg);

        // Group batches into update groups: every batch for cbs/pad, every
        // update_interval consecutive singletons for ga.
        std::vector<std::vector<std::size_t>> groups;
        if (mode == BatchMode::ga) {
            std::vector<std::size_t> g;
            for (const auto& b : plan.batches) {
                g.insert(g.end(), b.begin(), b.end());
                if (g.size() == plan.update_interval) {
                    groups.push_back(std::move(g));
                    g.clear();
                }
            }
            if (!g.empty()) groups.push_back(std::move(g));
        } else {
            groups = plan.batches;
        }

        for (const auto& group : groups) {
            model.zero_grads();
            double batch_loss = 0;
            const double scale = 1.0 / static_cast<double>(group.size());
            for (std::size_t idx : group) {
                Rng aug_rng = root.derive((static_cast<std::uint64_t>(epoch) << 32) ^
                                          train[idx].sample_id ^ 0xA0A0A0A0ull);
                Volume v = augment(train[idx], aug_rng, cfg.aug_sigma,
                                   cfg.aug_flip_prob);
                if (pad_edge > 0) v = pad_to_edge(v, pad_edge);
                TensorT<T> vox = v.voxels.template cast<T>();
                batch_loss += scale * sample_loss_backward(model, vox, v.label,
                                                           weights, scale);
            }
            if (first_batch) {
                result.first_batch_loss = batch_loss;
                first_batch = false;
            }
            auto refs = model.param_refs();
            optimizer_step(refs, adam, lr, cfg);
        }

        auto train_eval = evaluate(model, train, weights, pad_edge);
        auto test_eval = evaluate(model, test, weights, pad_edge);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                    t0)
                          .count();
        result.records.push_back({epoch, "train", train_eval.mean_loss,
                                  train_eval.metrics.auc, train_eval.metrics.f1,
                                  train_eval.metrics.mcc, secs});
        result.records.push_back({epoch, "test", test_eval.mean_loss,
                                  test_eval.metrics.auc, test_eval.metrics.f1,
                                  test_eval.metrics.mcc, secs});
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            write_metrics_csv(out_dir / "metrics.csv", result.records);
        }
    }
    if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint", model);
    return result;
}

}  // namespace varivit
