#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "varivit/io.hpp"
#include "varivit/rng.hpp"
#include "varivit/tensor.hpp"

namespace varivit {

/// One training sample: channels-first dense 3D volume plus its label.
struct Volume {
    Tensor voxels;  // [C, D, H, W], intensities in [0, 1]
    int label = 0;
    std::array<int, 3> tumor_extent = {0, 0, 0};
    std::uint64_t sample_id = 0;
};

struct SizeBin {
    int crop_edge;  // one of {64, 80, 96} in standard mode
};

inline constexpr int kBinThresholdLow = 67;
inline constexpr int kBinThresholdHigh = 87;

/// Three-bin crop-size assignment from the largest tumor dimension:
/// < 67 -> 64, [67, 87] -> 80, > 87 -> 96.
inline SizeBin assign_bin(int max_tumor_dim) {
    if (max_tumor_dim < kBinThresholdLow) return {64};
    if (max_tumor_dim <= kBinThresholdHigh) return {80};
    return {96};
}

/// Linear map of intensities onto [0, 1]; constant input maps to zeros.
template <typename T>
TensorT<T> rescale_intensity(const TensorT<T>& v) {
    T lo = v[0], hi = v[0];
    for (std::size_t i = 0; i < v.numel(); ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    TensorT<T> out(v.shape());
    if (hi == lo) return out;  // degenerate constant input -> zeros
    T inv = T(1) / (hi - lo);
    for (std::size_t i = 0; i < v.numel(); ++i) out[i] = (v[i] - lo) * inv;
    return out;
}

/// Synthetic stand-in for tumor-centered bounding-box crops. The ellipsoid
/// "tumor" is centered at the crop center; the class controls its anisotropy
/// (1.0 vs 1.8 along the first spatial axis) and interior texture frequency.
/// max_tumor_dim = 0 draws the size from the rng.
inline Volume generate_volume(Rng& rng, int label, int crop_edge,
                              int channels = 4, int patch_size = 0,
                              int max_tumor_dim = 0) {
    if (patch_size > 0 && crop_edge % patch_size != 0)
        throw data_error("crop_edge " + std::to_string(crop_edge) +
                         " is not a multiple of patch size " +
                         std::to_string(patch_size));
    const int e = crop_edge;
    if (max_tumor_dim == 0)
        max_tumor_dim = static_cast<int>(std::lround(e * rng.uniform(0.60, 0.90)));
    max_tumor_dim = std::min(max_tumor_dim, e);

    const double ratio = (label % 2 == 0) ? 1.0 : 1.8;
    const double freq = (label % 2 == 0) ? 0.25 : 1.10;
    const double al = max_tumor_dim / 2.0;       // long axis
    const double ah = al / ratio;
    const double aw = al / ratio;
    const double cc = (e - 1) / 2.0;             // crop center

    Volume v;
    v.label = label;
    v.sample_id = 0;
    v.tumor_extent = {static_cast<int>(std::ceil(2 * al)),
                      static_cast<int>(std::ceil(2 * ah)),
                      static_cast<int>(std::ceil(2 * aw))};
    v.voxels = Tensor({static_cast<std::size_t>(channels),
                       static_cast<std::size_t>(e), static_cast<std::size_t>(e),
                       static_cast<std::size_t>(e)});

    std::vector<double> gain(channels);
    for (int c = 0; c < channels; ++c) gain[c] = rng.uniform(0.85, 1.15);

    // Noise field shared across channels keeps per-channel structure aligned,
    // as in co-registered multi-modal inputs.
    const std::size_t plane = static_cast<std::size_t>(e) * e * e;
    std::vector<float> noise(plane);
    for (auto& n : noise) n = static_cast<float>(rng.uniform());

    float* px = v.voxels.data();
    for (int c = 0; c < channels; ++c) {
        for (int z = 0; z < e; ++z)
            for (int y = 0; y < e; ++y)
                for (int x = 0; x < e; ++x) {
                    double dz = (z - cc) / al;
                    double dy = (y - cc) / ah;
                    double dx = (x - cc) / aw;
                    std::size_t off = (static_cast<std::size_t>(z) * e + y) * e + x;
                    double val;
                    if (dz * dz + dy * dy + dx * dx <= 1.0) {
                        double tex = std::sin(freq * z) * std::sin(freq * y) *
                                     std::sin(freq * x);
                        val = 0.70 + 0.22 * tex + 0.05 * noise[off];
                    } else {
                        val = 0.12 * noise[off];
                    }
                    px[c * plane + off] = static_cast<float>(gain[c] * val);
                }
    }
    v.voxels = rescale_intensity(v.voxels);
    return v;
}

/// Random axis flips (p = flip_prob per spatial axis) and additive Gaussian
/// noise, clamped back to [0, 1]. Label and shape are preserved.
inline Volume augment(const Volume& in, Rng& rng, double sigma = 0.01,
                      double flip_prob = 0.5) {
    Volume out = in;
    const std::size_t C = in.voxels.extent(0);
    const std::size_t D = in.voxels.extent(1), H = in.voxels.extent(2),
                      W = in.voxels.extent(3);
    bool fd = flip_prob > 0 && rng.bernoulli(flip_prob);
    bool fh = flip_prob > 0 && rng.bernoulli(flip_prob);
    bool fw = flip_prob > 0 && rng.bernoulli(flip_prob);
    const float* src = in.voxels.data();
    float* dst = out.voxels.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t z = 0; z < D; ++z)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    std::size_t sz = fd ? D - 1 - z : z;
                    std::size_t sy = fh ? H - 1 - y : y;
                    std::size_t sx = fw ? W - 1 - x : x;
                    dst[((c * D + z) * H + y) * W + x] =
                        src[((c * D + sz) * H + sy) * W + sx];
                }
    if (sigma > 0) {
        for (std::size_t i = 0; i < out.voxels.numel(); ++i) {
            float v = dst[i] + static_cast<float>(sigma * rng.normal());
            dst[i] = std::min(1.0f, std::max(0.0f, v));
        }
    }
    return out;
}

/// Zero-pad a volume symmetrically to target_edge per spatial axis.
inline Volume pad_to_edge(const Volume& in, int target_edge) {
    const std::size_t C = in.voxels.extent(0);
    const std::size_t D = in.voxels.extent(1), H = in.voxels.extent(2),
                      W = in.voxels.extent(3);
    const std::size_t E = static_cast<std::size_t>(target_edge);
    if (D > E || H > E || W > E)
        throw data_error("pad_to_edge: volume larger than target");
    Volume out;
    out.label = in.label;
    out.tumor_extent = in.tumor_extent;
    out.sample_id = in.sample_id;
    out.voxels = Tensor({C, E, E, E});
    const std::size_t oz = (E - D) / 2, oy = (E - H) / 2, ox = (E - W) / 2;
    const float* src = in.voxels.data();
    float* dst = out.voxels.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t z = 0; z < D; ++z)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    dst[((c * E + z + oz) * E + y + oy) * E + x + ox] =
                        src[((c * D + z) * H + y) * W + x];
    return out;
}

struct ManifestEntry {
    std::uint64_t sample_id;
    std::string path;  // relative to the manifest's directory
    int label;
    int crop_edge;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> samples;
    std::filesystem::path root;  // directory holding the manifest

    std::map<int, std::size_t> class_counts() const {
        std::map<int, std::size_t> c;
        for (const auto& s : samples) ++c[s.label];
        return c;
    }
    std::map<int, std::size_t> edge_counts() const {
        std::map<int, std::size_t> c;
        for (const auto& s : samples) ++c[s.crop_edge];
        return c;
    }
};

// Manifest: header "seed=<u64>", then one record per sample:
// sample_id<TAB>relative_path<TAB>label<TAB>crop_edge

inline void write_manifest(const std::filesystem::path& path,
                           const DatasetManifest& m) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write manifest: " + path.string());
    os << "seed=" << m.seed << "\n";
    for (const auto& s : m.samples)
        os << s.sample_id << "\t" << s.path << "\t" << s.label << "\t"
           << s.crop_edge << "\n";
    if (!os) throw data_error("manifest write failed: " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(is, line) || line.rfind("seed=", 0) != 0)
        throw data_error("manifest missing seed header: " + path.string());
    m.seed = std::stoull(line.substr(5));
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        std::string id, label, edge;
        if (!std::getline(ss, id, '\t') || !std::getline(ss, e.path, '\t') ||
            !std::getline(ss, label, '\t') || !std::getline(ss, edge))
            throw data_error("malformed manifest record: " + line);
        e.sample_id = std::stoull(id);
        e.label = std::stoi(label);
        e.crop_edge = std::stoi(edge);
        m.samples.push_back(std::move(e));
    }
    return m;
}

inline void write_dataset(const std::filesystem::path& dir,
                          const std::vector<Volume>& volumes,
                          std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    m.seed = seed;
    m.root = dir;
    for (const auto& v : volumes) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%05llu.vvt",
                      static_cast<unsigned long long>(v.sample_id));
        write_tensor(dir / name, v.voxels);
        m.samples.push_back({v.sample_id, name, v.label,
                             static_cast<int>(v.voxels.extent(1))});
    }
    write_manifest(dir / "manifest.tsv", m);
}

inline Volume load_volume(const DatasetManifest& m, std::size_t index) {
    const auto& e = m.samples.at(index);
    Volume v;
    v.voxels = read_tensor<float>(m.root / e.path);
    if (v.voxels.rank() != 4)
        throw data_error("sample tensor is not rank 4: " + e.path);
    v.label = e.label;
    v.sample_id = e.sample_id;
    return v;
}

/// Accepts either the manifest file or the dataset directory containing it.
inline std::vector<Volume> read_dataset(const std::filesystem::path& manifest_path) {
    auto path = std::filesystem::is_directory(manifest_path)
                    ? manifest_path / "manifest.tsv"
                    : manifest_path;
    DatasetManifest m = read_manifest(path);
    std::vector<Volume> out;
    out.reserve(m.samples.size());
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        out.push_back(load_volume(m, i));
    return out;
}

}  // namespace varivit
