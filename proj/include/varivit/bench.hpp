#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "varivit/train.hpp"

namespace varivit {

struct BenchModeResult {
    BatchMode mode;
    std::vector<double> epoch_seconds;  // one entry per repeat
    double median_epoch_seconds = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t attention_pairs = 0;
    std::size_t peak_tensor_bytes = 0;
    // relative savings vs the pad_to_max baseline (fractions, e.g. 0.375)
    double time_savings = 0;
    double token_savings = 0;
    double pair_savings = 0;
};

struct BenchReport {
    std::vector<BenchModeResult> modes;
    int repeats = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// One timed training epoch (augmentation, forward, backward, updates).
template <typename T>
double timed_epoch(ModelT<T>& model, const std::vector<Volume>& train,
                   BatchMode mode, const TrainConfig& cfg, std::uint64_t epoch_seed) {
    std::vector<int> labels;
    for (const auto& v : train) labels.push_back(v.label);
    const auto weights = class_weights(labels, model.config().num_classes);
    const auto manifest = manifest_of(train, cfg.seed);
    const int pad_edge =
        mode == BatchMode::pad_to_max ? model.config().max_image_edge : 0;
    Rng root(cfg.seed);
    AdamStateT<T> adam;

    auto t0 = std::chrono::steady_clock::now();
    BatchPlan plan = make_plan(mode, manifest, cfg.batch_size, root.derive(epoch_seed));
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
        const double scale = 1.0 / static_cast<double>(group.size());
        for (std::size_t idx : group) {
            Rng aug_rng = root.derive(epoch_seed ^ train[idx].sample_id);
            Volume v = augment(train[idx], aug_rng, cfg.aug_sigma, cfg.aug_flip_prob);
            if (pad_edge > 0) v = pad_to_edge(v, pad_edge);
            TensorT<T> vox = v.voxels.template cast<T>();
            sample_loss_backward(model, vox, v.label, weights, scale);
        }
        auto refs = model.param_refs();
        optimizer_step(refs, adam, cfg.base_lr, cfg);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Head-to-head throughput and cost benchmark across batching modes. Every
/// mode runs the same encoder; only batching and sequence lengths differ.
inline BenchReport run_bench(const ModelConfig& mcfg, const TrainConfig& tcfg,
                             const std::vector<Volume>& train,
                             const std::vector<BatchMode>& modes, int repeats) {
    if (modes.size() < 2) throw data_error("run_bench: at least two modes required");
    BenchReport report;
    report.repeats = repeats;
    const auto manifest = manifest_of(train, tcfg.seed);
    for (BatchMode mode : modes) {
        BenchModeResult r;
        r.mode = mode;
        BatchPlan plan = make_plan(mode, manifest, tcfg.batch_size, Rng(tcfg.seed));
        TokenCost cost = token_cost(plan, manifest, mcfg.patch_size);
        r.total_tokens = cost.total_tokens;
        r.attention_pairs = cost.attention_pairs;
        TensorBytes::reset_peak();
        for (int rep = 0; rep < repeats; ++rep) {
            Model model(mcfg, tcfg.seed);  // fresh params per repeat
            r.epoch_seconds.push_back(
                timed_epoch(model, train, mode, tcfg, 7000 + rep));
        }
        r.peak_tensor_bytes = TensorBytes::peak;
        r.median_epoch_seconds = detail::median(r.epoch_seconds);
        report.modes.push_back(std::move(r));
    }
    const BenchModeResult* base = nullptr;
    for (const auto& r : report.modes)
        if (r.mode == BatchMode::pad_to_max) base = &r;
    if (base) {
        for (auto& r : report.modes) {
            r.time_savings =
                1.0 - r.median_epoch_seconds / base->median_epoch_seconds;
            r.token_savings = 1.0 - static_cast<double>(r.total_tokens) /
                                        static_cast<double>(base->total_tokens);
            r.pair_savings = 1.0 - static_cast<double>(r.attention_pairs) /
                                       static_cast<double>(base->attention_pairs);
        }
    }
    return report;
}

/// Machine-readable CSV plus a human summary with percent savings.
inline void emit_report(const BenchReport& report, const std::filesystem::path& csv,
                        std::ostream& summary) {
    std::ofstream os(csv);
    if (!os) throw data_error("cannot write bench csv: " + csv.string());
    os << "mode,median_epoch_seconds,total_tokens,attention_pairs,"
          "peak_tensor_bytes,time_savings_pct,token_savings_pct,pair_savings_pct\n";
    for (const auto& r : report.modes)
        os << to_string(r.mode) << "," << r.median_epoch_seconds << ","
           << r.total_tokens << "," << r.attention_pairs << "," << r.peak_tensor_bytes
           << "," << 100.0 * r.time_savings << "," << 100.0 * r.token_savings << ","
           << 100.0 * r.pair_savings << "\n";

    summary << "Variable-size batching vs pad-to-max baseline (claim under test: "
               "up to 30% compute-time reduction), median of "
            << report.repeats << " repeats per mode.\n";
    for (const auto& r : report.modes) {
        summary << "  " << to_string(r.mode) << ": " << r.median_epoch_seconds
                << " s/epoch, " << r.total_tokens << " tokens, " << r.attention_pairs
                << " attention pairs";
        if (r.mode != BatchMode::pad_to_max)
            summary << "  (time -" << 100.0 * r.time_savings << "%, tokens -"
                    << 100.0 * r.token_savings << "%, pairs -"
                    << 100.0 * r.pair_savings << "%)";
        summary << "\n";
    }
}

}  // namespace varivit
