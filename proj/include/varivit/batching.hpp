#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "varivit/data.hpp"
#include "varivit/rng.hpp"

namespace varivit {

enum class BatchMode { cbs, ga, pad_to_max };

inline const char* to_string(BatchMode m) {
    switch (m) {
        case BatchMode::cbs: return "cbs";
        case BatchMode::ga: return "ga";
        case BatchMode::pad_to_max: return "pad";
    }
    return "?";
}

inline BatchMode batch_mode_from(const std::string& s) {
    if (s == "cbs") return BatchMode::cbs;
    if (s == "ga") return BatchMode::ga;
    if (s == "pad" || s == "pad_to_max") return BatchMode::pad_to_max;
    throw data_error("unknown batching mode: " + s);
}

/// One epoch's ordered grouping of sample indices into batches.
struct BatchPlan {
    std::vector<std::vector<std::size_t>> batches;
    BatchMode mode = BatchMode::cbs;
    std::size_t batch_size = 0;
    std::size_t update_interval = 1;  // GA only: update every k mini-batches
    std::uint64_t seed = 0;
};

namespace detail {

template <typename V>
void shuffle(std::vector<V>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace detail

/// Custom Batch Sampler: group samples by crop size, shuffle within groups,
/// chunk into batches of at most B, then shuffle the batch order so sizes
/// vary randomly from batch to batch. Partial remainder batches are kept.
inline BatchPlan plan_cbs(const DatasetManifest& m, std::size_t B, Rng rng) {
    if (m.samples.empty()) throw data_error("plan_cbs: empty dataset");
    if (B < 1) throw data_error("plan_cbs: batch size must be >= 1");
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        groups[m.samples[i].crop_edge].push_back(i);
    BatchPlan plan;
    plan.mode = BatchMode::cbs;
    plan.batch_size = B;
    for (auto& [edge, idx] : groups) {
        detail::shuffle(idx, rng);
        for (std::size_t off = 0; off < idx.size(); off += B) {
            std::size_t end = std::min(off + B, idx.size());
            plan.batches.emplace_back(idx.begin() + off, idx.begin() + end);
        }
    }
    detail::shuffle(plan.batches, rng);
    return plan;
}

/// Gradient Accumulation: a shuffled stream of singleton mini-batches; the
/// parameter update fires after every k = B of them (trailing partial group
/// updates with its actual count).
inline BatchPlan plan_ga(const DatasetManifest& m, std::size_t B, Rng rng) {
    if (m.samples.empty()) throw data_error("plan_ga: empty dataset");
    std::vector<std::size_t> idx(m.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    detail::shuffle(idx, rng);
    BatchPlan plan;
    plan.mode = BatchMode::ga;
    plan.batch_size = B;
    plan.update_interval = B;
    for (std::size_t i : idx) plan.batches.push_back({i});
    return plan;
}

/// Pad-to-max baseline: plain shuffled batches; the loader zero-pads every
/// volume to the maximum edge so all sequences share the maximum length.
inline BatchPlan plan_pad_to_max(const DatasetManifest& m, std::size_t B, Rng rng) {
    if (m.samples.empty()) throw data_error("plan_pad_to_max: empty dataset");
    std::vector<std::size_t> idx(m.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    detail::shuffle(idx, rng);
    BatchPlan plan;
    plan.mode = BatchMode::pad_to_max;
    plan.batch_size = B;
    for (std::size_t off = 0; off < idx.size(); off += B) {
        std::size_t end = std::min(off + B, idx.size());
        plan.batches.emplace_back(idx.begin() + off, idx.begin() + end);
    }
    return plan;
}

inline BatchPlan make_plan(BatchMode mode, const DatasetManifest& m, std::size_t B,
                           Rng rng) {
    switch (mode) {
        case BatchMode::cbs: return plan_cbs(m, B, rng);
        case BatchMode::ga: return plan_ga(m, B, rng);
        case BatchMode::pad_to_max: return plan_pad_to_max(m, B, rng);
    }
    throw data_error("unreachable");
}

struct TokenCost {
    std::uint64_t total_tokens = 0;
    std::uint64_t attention_pairs = 0;  // sum of N^2 over samples
};

/// Analytic per-epoch cost of a plan: patch tokens and attention pairs per
/// sample, padded to the max edge in pad mode.
inline TokenCost token_cost(const BatchPlan& plan, const DatasetManifest& m, int P) {
    int max_edge = 0;
    for (const auto& s : m.samples) max_edge = std::max(max_edge, s.crop_edge);
    TokenCost cost;
    for (const auto& batch : plan.batches)
        for (std::size_t i : batch) {
            int edge = plan.mode == BatchMode::pad_to_max ? max_edge
                                                         : m.samples[i].crop_edge;
            std::uint64_t g = static_cast<std::uint64_t>(edge / P);
            std::uint64_t n = g * g * g;
            cost.total_tokens += n;
            cost.attention_pairs += n * n;
        }
    return cost;
}

// Plan serialization: one batch per line, space-separated indices.

inline void write_plan(const std::filesystem::path& path, const BatchPlan& plan) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write plan: " + path.string());
    for (const auto& batch : plan.batches) {
        for (std::size_t i = 0; i < batch.size(); ++i)
            os << (i ? " " : "") << batch[i];
        os << "\n";
    }
}

inline std::vector<std::vector<std::size_t>> read_plan(
    const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot read plan: " + path.string());
    std::vector<std::vector<std::size_t>> batches;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<std::size_t> batch;
        std::size_t v;
        while (ss >> v) batch.push_back(v);
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace varivit
