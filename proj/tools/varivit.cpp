// varivit - variable-size 3D vision transformer workbench.
// Subcommands: gendata, train, bench, posemb export-sim, export-embeddings, attn.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "varivit/bench.hpp"
#include "varivit/data.hpp"
#include "varivit/encoder.hpp"
#include "varivit/train.hpp"

namespace fs = std::filesystem;
using namespace varivit;

namespace {

void write_invocation(const fs::path& out_dir, int argc, char** argv) {
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "invocation.txt");
    for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
    os << "\n";
}

ModelConfig preset_config(const std::string& preset) {
    if (preset == "small") return ModelConfig::small_preset();
    if (preset == "tiny") return ModelConfig::tiny_preset();
    throw data_error("unknown preset: " + preset);
}

// Deterministic stratified split: per class, the last ceil(frac*n) samples
// of a seeded shuffle become the test set.
void split_dataset(const std::vector<Volume>& all, double test_frac,
                   std::uint64_t seed, std::vector<Volume>& train,
                   std::vector<Volume>& test) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < all.size(); ++i) by_class[all[i].label].push_back(i);
    Rng rng(seed);
    for (auto& [label, idx] : by_class) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
        std::size_t n_test = static_cast<std::size_t>(
            std::ceil(test_frac * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < idx.size() - n_test)
                train.push_back(all[idx[i]]);
            else
                test.push_back(all[idx[i]]);
        }
    }
}

int run(int argc, char** argv) {
    CLI::App app{"variable-size 3D vision transformer workbench"};
    app.require_subcommand(1);
    app.set_config("--config");

    // ------------------------------ gendata ------------------------------
    auto* gen = app.add_subcommand("gendata", "generate a synthetic dataset");
    int g_classes = 2, g_per_bin = 10, g_patch = 16;
    std::vector<int> g_edges{64, 80, 96};
    std::uint64_t g_seed = 0;
    std::string g_out;
    gen->add_option("--classes", g_classes, "number of classes");
    gen->add_option("--per-bin", g_per_bin, "samples per size bin");
    gen->add_option("--edges", g_edges, "crop edges (voxels)")->delimiter(',');
    gen->add_option("--patch", g_patch, "patch size; edges must be multiples");
    gen->add_option("--seed", g_seed, "rng seed");
    gen->add_option("--out", g_out, "output directory")->required();

    // ------------------------------- train -------------------------------
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    std::string t_data, t_mode = "cbs", t_posemb = "center_select",
                t_preset = "tiny", t_out;
    int t_epochs = -1, t_warmup = -1, t_patch = -1, t_batch = -1;
    double t_lr = -1, t_test_frac = 0.2;
    std::uint64_t t_seed = 0;
    tr->add_option("--data", t_data, "dataset manifest path")->required();
    tr->add_option("--mode", t_mode, "batching mode: cbs|ga|pad");
    tr->add_option("--posemb", t_posemb,
                   "center_select|indep_fixed|interp_fixed|interp_learned|relative");
    tr->add_option("--preset", t_preset, "model preset: small|tiny");
    tr->add_option("--epochs", t_epochs, "override total epochs");
    tr->add_option("--warmup", t_warmup, "override warmup epochs");
    tr->add_option("--lr", t_lr, "override base learning rate");
    tr->add_option("--batch", t_batch, "override batch size");
    tr->add_option("--patch", t_patch, "override patch size");
    tr->add_option("--test-frac", t_test_frac, "held-out fraction per class");
    tr->add_option("--seed", t_seed, "rng seed");
    tr->add_option("--out", t_out, "output directory")->required();

    // ------------------------------- bench -------------------------------
    auto* be = app.add_subcommand("bench", "throughput benchmark across modes");
    std::string b_data, b_out, b_preset = "tiny";
    std::vector<std::string> b_modes{"cbs", "ga", "pad"};
    int b_repeats = 5, b_patch = -1, b_batch = -1;
    std::uint64_t b_seed = 0;
    be->add_option("--data", b_data, "dataset manifest path")->required();
    be->add_option("--modes", b_modes, "modes to benchmark")->delimiter(',');
    be->add_option("--repeats", b_repeats, "timing repeats per mode");
    be->add_option("--preset", b_preset, "model preset: small|tiny");
    be->add_option("--patch", b_patch, "override patch size");
    be->add_option("--batch", b_batch, "override batch size");
    be->add_option("--seed", b_seed, "rng seed");
    be->add_option("--out", b_out, "output directory")->required();

    // --------------------------- posemb export ---------------------------
    auto* pe = app.add_subcommand("posemb", "positional-embedding utilities");
    auto* sim = pe->add_subcommand("export-sim", "cosine-similarity maps");
    std::vector<std::size_t> s_grid{6, 6, 6}, s_anchor;
    int s_dim = 48;
    std::string s_out;
    sim->add_option("--grid", s_grid, "grid extents G_l,G_h,G_w")->delimiter(',');
    sim->add_option("--dim", s_dim, "embedding dimension (divisible by 6)");
    sim->add_option("--anchor", s_anchor, "anchor position l,h,w (default center)")
        ->delimiter(',');
    sim->add_option("--out", s_out, "output directory")->required();

    // ------------------------- export-embeddings -------------------------
    auto* ee = app.add_subcommand("export-embeddings",
                                  "final-CLS features per sample");
    std::string e_ckpt, e_data, e_out;
    ee->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
    ee->add_option("--data", e_data, "dataset manifest path")->required();
    ee->add_option("--out", e_out, "output directory")->required();

    // -------------------------------- attn -------------------------------
    auto* at = app.add_subcommand("attn", "CLS attention grid per sample");
    std::string a_ckpt, a_data, a_out;
    int a_layer = -1;
    at->add_option("--checkpoint", a_ckpt, "checkpoint directory")->required();
    at->add_option("--data", a_data, "dataset manifest path")->required();
    at->add_option("--layer", a_layer, "encoder layer (default: last)");
    at->add_option("--out", a_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    }

    if (*gen) {
        write_invocation(g_out, argc, argv);
        Rng root(g_seed);
        std::vector<Volume> vols;
        std::uint64_t id = 0;
        bool standard = g_edges == std::vector<int>{64, 80, 96};
        for (std::size_t b = 0; b < g_edges.size(); ++b) {
            int edge = g_edges[b];
            if (edge % g_patch != 0)
                throw data_error("edge " + std::to_string(edge) +
                                 " is not a multiple of patch " +
                                 std::to_string(g_patch));
            for (int i = 0; i < g_per_bin; ++i) {
                int label = i % g_classes;
                Rng rng = root.derive(id * 2654435761ull + 17);
                int max_dim = 0;
                if (standard) {
                    // draw the largest tumor dimension inside the bin's range
                    // so bin assignment reproduces the crop edge
                    if (edge == 64) max_dim = 40 + static_cast<int>(rng.uniform_index(27));
                    if (edge == 80) max_dim = 67 + static_cast<int>(rng.uniform_index(21));
                    if (edge == 96) max_dim = 88 + static_cast<int>(rng.uniform_index(9));
                    if (assign_bin(max_dim).crop_edge != edge)
                        throw numeric_error("bin assignment inconsistency");
                }
                Volume v = generate_volume(rng, label, edge, 4, g_patch, max_dim);
                v.sample_id = id++;
                vols.push_back(std::move(v));
            }
        }
        write_dataset(g_out, vols, g_seed);
        std::cout << "wrote " << vols.size() << " samples to " << g_out << "\n";
        return 0;
    }

    if (*tr) {
        write_invocation(t_out, argc, argv);
        auto all = read_dataset(t_data);
        ModelConfig mcfg = preset_config(t_preset);
        mcfg.posemb = pos_strategy_from(t_posemb);
        if (t_patch > 0) mcfg.patch_size = t_patch;
        int max_edge = 0, max_label = 0;
        for (const auto& v : all) {
            max_edge = std::max(max_edge, static_cast<int>(v.voxels.extent(1)));
            max_label = std::max(max_label, v.label);
        }
        mcfg.max_image_edge = max_edge;
        mcfg.num_classes = max_label + 1;
        TrainConfig tcfg;
        tcfg.seed = t_seed;
        if (t_epochs > 0) tcfg.total_epochs = t_epochs;
        if (t_warmup >= 0) tcfg.warmup_epochs = t_warmup;
        if (tcfg.warmup_epochs > tcfg.total_epochs)
            tcfg.warmup_epochs = tcfg.total_epochs / 4;
        if (t_lr > 0) tcfg.base_lr = t_lr;
        if (t_batch > 0) tcfg.batch_size = static_cast<std::size_t>(t_batch);
        std::vector<Volume> train, test;
        split_dataset(all, t_test_frac, t_seed ^ 0x5157ull, train, test);
        Model model(mcfg, t_seed);
        std::cout << "training " << to_string(mcfg.posemb) << " / " << t_mode
                  << ": " << train.size() << " train, " << test.size()
                  << " test, " << model.param_count() << " parameters\n";
        auto result = train_loop(model, train, test, batch_mode_from(t_mode), tcfg,
                                 fs::path(t_out));
        const auto& last = result.records[result.records.size() - 1];
        std::cout << "final test: loss=" << last.loss << " auc=" << last.auc
                  << " f1=" << last.f1 << " mcc=" << last.mcc << "\n";
        return 0;
    }

    if (*be) {
        write_invocation(b_out, argc, argv);
        auto vols = read_dataset(b_data);
        ModelConfig mcfg = preset_config(b_preset);
        if (b_patch > 0) mcfg.patch_size = b_patch;
        int max_edge = 0;
        for (const auto& v : vols)
            max_edge = std::max(max_edge, static_cast<int>(v.voxels.extent(1)));
        mcfg.max_image_edge = max_edge;
        TrainConfig tcfg;
        tcfg.seed = b_seed;
        if (b_batch > 0) tcfg.batch_size = static_cast<std::size_t>(b_batch);
        std::vector<BatchMode> modes;
        for (const auto& m : b_modes) modes.push_back(batch_mode_from(m));
        auto report = run_bench(mcfg, tcfg, vols, modes, b_repeats);
        std::ostringstream summary;
        emit_report(report, fs::path(b_out) / "bench.csv", summary);
        std::ofstream(fs::path(b_out) / "summary.txt") << summary.str();
        std::cout << summary.str();
        return 0;
    }

    if (*sim) {
        write_invocation(s_out, argc, argv);
        if (s_grid.size() != 3) throw data_error("--grid needs three extents");
        Grid3 g{s_grid[0], s_grid[1], s_grid[2]};
        Grid3 anchor = center(g);
        if (!s_anchor.empty()) {
            if (s_anchor.size() != 3) throw data_error("--anchor needs three coords");
            anchor = {s_anchor[0], s_anchor[1], s_anchor[2]};
        }
        auto pe_grid = build_sinusoidal_3d<float>(g, static_cast<std::size_t>(s_dim));
        Tensor simmap = cosine_similarity_map(pe_grid, anchor);
        write_tensor(fs::path(s_out) / "sim.vvt", simmap);
        std::ofstream csv(fs::path(s_out) / "sim.csv");
        csv << "l,h,w,value\n";
        for (std::size_t l = 0; l < g[0]; ++l)
            for (std::size_t h = 0; h < g[1]; ++h)
                for (std::size_t w = 0; w < g[2]; ++w)
                    csv << l << "," << h << "," << w << ","
                        << simmap[(l * g[1] + h) * g[2] + w] << "\n";
        std::cout << "wrote similarity map for grid " << g[0] << "x" << g[1] << "x"
                  << g[2] << " anchored at (" << anchor[0] << "," << anchor[1] << ","
                  << anchor[2] << ")\n";
        return 0;
    }

    if (*ee) {
        write_invocation(e_out, argc, argv);
        Model model = load_checkpoint<float>(e_ckpt);
        auto vols = read_dataset(e_data);
        const std::size_t d = static_cast<std::size_t>(model.config().embed_dim);
        Tensor feats({vols.size(), d});
        std::ofstream labels(fs::path(e_out) / "labels.csv");
        labels << "sample_id,label\n";
        for (std::size_t i = 0; i < vols.size(); ++i) {
            ForwardCache cache;
            model.forward(vols[i].voxels, cache);
            std::copy(cache.cls_final.data(), cache.cls_final.data() + d,
                      feats.data() + i * d);
            labels << vols[i].sample_id << "," << vols[i].label << "\n";
        }
        write_tensor(fs::path(e_out) / "embeddings.vvt", feats);
        std::cout << "wrote " << vols.size() << " embedding rows\n";
        return 0;
    }

    if (*at) {
        write_invocation(a_out, argc, argv);
        Model model = load_checkpoint<float>(a_ckpt);
        auto vols = read_dataset(a_data);
        int layer = a_layer >= 0 ? a_layer : model.config().depth - 1;
        for (const auto& v : vols) {
            ForwardCache cache;
            model.forward(v.voxels, cache);
            Tensor grid = model.cls_attention(cache, layer);
            char name[48];
            std::snprintf(name, sizeof(name), "attn_%05llu.vvt",
                          static_cast<unsigned long long>(v.sample_id));
            write_tensor(fs::path(a_out) / name, grid);
        }
        std::cout << "wrote " << vols.size() << " attention grids (layer " << layer
                  << ")\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const CLI::Error&) {
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
