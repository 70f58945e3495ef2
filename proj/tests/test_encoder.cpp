#include <doctest.h>

#include "model_check.hpp"
#include "varivit/encoder.hpp"

using namespace varivit;
using testutil::model_loss;
using testutil::random_tensor;

namespace {

ModelConfig tiny_cfg(PosStrategy strategy = PosStrategy::center_select) {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.embed_dim = 12;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 2;
    cfg.patch_size = 2;
    cfg.in_channels = 1;
    cfg.max_image_edge = 4;  // 2x2x2 grid, N = 8
    cfg.posemb = strategy;
    return cfg;
}

}  // namespace

TEST_CASE("one parameter set serves all admissible sequence lengths") {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.embed_dim = 12;
    cfg.heads = 2;
    cfg.num_classes = 2;
    cfg.patch_size = 16;
    cfg.in_channels = 1;
    cfg.max_image_edge = 96;
    Model model(cfg, 1);
    Rng rng(2);
    for (int edge : {64, 80, 96}) {
        Tensor vox = random_tensor<float>(
            {1, static_cast<std::size_t>(edge), static_cast<std::size_t>(edge),
             static_cast<std::size_t>(edge)},
            rng, 0.5);
        ForwardCache cache;
        Tensor logits = model.forward(vox, cache);
        CHECK(logits.numel() == 2);
        std::size_t expect = static_cast<std::size_t>(edge / 16);
        CHECK(cache.grid == Grid3{expect, expect, expect});
    }
}

TEST_CASE("attention rows sum to 1 per head") {
    Model model(tiny_cfg(), 3);
    Rng rng(4);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    ForwardCache cache;
    model.forward(vox, cache);
    for (int layer = 0; layer < 2; ++layer)
        for (int head = 0; head < 2; ++head) {
            Tensor a = model.attention_map(cache, layer, head);
            const std::size_t S = a.extent(0);
            for (std::size_t i = 0; i < S; ++i) {
                double sum = 0;
                for (std::size_t j = 0; j < S; ++j) sum += a[i * S + j];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
}

TEST_CASE("depth 0 reduces to head of the normalized CLS token") {
    auto cfg = tiny_cfg();
    cfg.depth = 0;
    Model model(cfg, 5);
    Rng rng(6);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    ForwardCache cache;
    Tensor logits = model.forward(vox, cache);

    const auto& p = model.params();
    Tensor cls_row({1, 12}, std::vector<float>(p.cls.vec()));
    Tensor normed = layernorm(cls_row, p.lnf_g, p.lnf_b, 1e-5f);
    Tensor expect = matmul(normed, p.head_w);
    add_row_bias(expect, p.head_b);
    for (std::size_t k = 0; k < 2; ++k)
        CHECK(logits[k] == doctest::Approx(expect[k]).epsilon(1e-6));
}

TEST_CASE("forward is deterministic under a fixed seed") {
    Rng rng(7);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    Model m1(tiny_cfg(), 42), m2(tiny_cfg(), 42);
    ForwardCache c1, c2;
    Tensor l1 = m1.forward(vox, c1);
    Tensor l2 = m2.forward(vox, c2);
    CHECK(l1.bitwise_equal(l2));
}

TEST_CASE("near-uniform attention at init") {
    Model model(tiny_cfg(), 8);
    Rng rng(9);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    ForwardCache cache;
    model.forward(vox, cache);
    Tensor a = model.attention_map(cache, 0, 0);
    const std::size_t S = a.extent(0);
    for (std::size_t i = 0; i < a.numel(); ++i)
        CHECK(a[i] == doctest::Approx(1.0 / S).epsilon(0.2));
}

TEST_CASE("cls attention grid preserves mass") {
    Model model(tiny_cfg(), 10);
    Rng rng(11);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    ForwardCache cache;
    model.forward(vox, cache);
    Tensor grid = model.cls_attention(cache, 1);
    CHECK(grid.shape() == std::vector<std::size_t>{2, 2, 2});
    double mass = 0;
    for (std::size_t i = 0; i < grid.numel(); ++i) mass += grid[i];
    const std::size_t S = 9;
    double expect = 0;
    for (int h = 0; h < 2; ++h) {
        Tensor a = model.attention_map(cache, 1, h);
        for (std::size_t j = 1; j < S; ++j) expect += a[j];
    }
    expect /= 2.0;
    CHECK(mass == doctest::Approx(expect).epsilon(1e-6));
    CHECK(mass <= 1.0 + 1e-6);
}

TEST_CASE("zero upstream gradient leaves all gradients zero") {
    ModelT<double> model(tiny_cfg(), 12);
    Rng rng(13);
    TensorD vox = random_tensor<double>({1, 4, 4, 4}, rng, 0.5);
    ForwardCacheT<double> cache;
    model.forward(vox, cache);
    model.zero_grads();
    model.backward(cache, TensorD({2}));
    for (auto& ref : model.param_refs())
        for (std::size_t i = 0; i < ref.grad->numel(); ++i)
            CHECK((*ref.grad)[i] == 0.0);
}

TEST_CASE("backward requires a forward cache") {
    ModelT<double> model(tiny_cfg(), 12);
    ForwardCacheT<double> empty;
    CHECK_THROWS_AS(model.backward(empty, TensorD({2})), numeric_error);
}

TEST_CASE("no positional gradient exists under fixed strategies") {
    for (auto s : {PosStrategy::center_select, PosStrategy::indep_fixed,
                   PosStrategy::interp_fixed}) {
        Model model(tiny_cfg(s), 14);
        for (auto& ref : model.param_refs()) {
            CHECK(ref.name != "pos_learned");
            CHECK(ref.name != "rel_table");
        }
    }
    Model learned(tiny_cfg(PosStrategy::interp_learned), 14);
    bool has = false;
    for (auto& ref : learned.param_refs()) has |= (ref.name == "pos_learned");
    CHECK(has);
}

TEST_CASE("full-model gradients match finite differences (depth 1)") {
    auto cfg = tiny_cfg();
    cfg.depth = 1;
    ModelT<double> model(cfg, 15);
    Rng rng(16);
    TensorD vox = random_tensor<double>({1, 4, 4, 4}, rng, 0.5);
    std::vector<double> weights{1.0, 1.0};
    for (auto& g : testutil::gradient_check(model, vox, 1, weights)) {
        INFO(g.name);
        CHECK(g.rel_err < 1e-4);
    }
}

TEST_CASE("gradient check covers the learned and relative strategies") {
    Rng rng(17);
    TensorD vox = random_tensor<double>({1, 4, 4, 4}, rng, 0.5);
    std::vector<double> weights{1.0, 1.0};
    for (auto s : {PosStrategy::interp_learned, PosStrategy::relative}) {
        auto cfg = tiny_cfg(s);
        cfg.depth = 1;
        ModelT<double> model(cfg, 18);
        for (auto& g : testutil::gradient_check(model, vox, 0, weights)) {
            INFO(to_string(s) << " / " << g.name);
            CHECK(g.rel_err < 1e-4);
        }
    }
}

TEST_CASE("positional gradient flows only through the selected region") {
    // a 2^3 sub-image of a 4^3-max interp_learned model must leave grid
    // corners outside the interpolation support untouched
    auto cfg = tiny_cfg(PosStrategy::interp_learned);
    cfg.max_image_edge = 8;  // 4x4x4 master grid
    ModelT<double> model(cfg, 19);
    Rng rng(20);
    TensorD vox = random_tensor<double>({1, 4, 4, 4}, rng, 0.5);  // 2x2x2 grid
    ForwardCacheT<double> cache;
    model.zero_grads();
    auto logits = model.forward(vox, cache);
    auto [loss, dlogits] = weighted_ce(logits, 0, std::vector<double>{1.0, 1.0});
    (void)loss;
    model.backward(cache, dlogits);
    const auto& g = model.grads().pos_learned;
    double total = 0;
    for (std::size_t i = 0; i < g.numel(); ++i) total += std::abs(g[i]);
    CHECK(total > 0);
}

TEST_CASE("small preset parameter count is about 28M") {
    ModelConfig cfg = ModelConfig::small_preset();
    Model model(cfg, 0);
    double n = static_cast<double>(model.param_count());
    CHECK(n > 26e6);
    CHECK(n < 30e6);
}

TEST_CASE("checkpoint round-trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "varivit_ckpt_test";
    fs::remove_all(dir);
    Model model(tiny_cfg(), 21);
    save_checkpoint(dir, model);
    Model loaded = load_checkpoint<float>(dir);
    Rng rng(22);
    Tensor vox = random_tensor<float>({1, 4, 4, 4}, rng, 0.5);
    ForwardCache c1, c2;
    CHECK(model.forward(vox, c1).bitwise_equal(loaded.forward(vox, c2)));

    // shape mismatch is rejected
    Model other(tiny_cfg(), 23);
    auto cfg2 = tiny_cfg();
    cfg2.embed_dim = 24;
    cfg2.heads = 2;
    Model wide(cfg2, 24);
    save_checkpoint(dir, wide);
    std::ofstream(dir / "config.txt") << "depth=2\nembed_dim=12\nheads=2\n"
                                         "mlp_ratio=2\nnum_classes=2\npatch_size=2\n"
                                         "in_channels=1\nmax_image_edge=4\n"
                                         "posemb=center_select\nseed=0\n";
    CHECK_THROWS_AS(load_checkpoint<float>(dir), data_error);
    fs::remove_all(dir);
}
