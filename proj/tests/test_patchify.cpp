#include <doctest.h>

#include "fd_oracle.hpp"
#include "varivit/patchify.hpp"

using namespace varivit;
using testutil::fd_grad;
using testutil::random_tensor;
using testutil::rel_error;

TEST_CASE("patch counts at the standard crop sizes") {
    PatchConfig cfg{16, 48, 1};
    Tensor v96({1, 96, 96, 96});
    CHECK(extract_patches(v96, cfg).extent(0) == 216);
    Tensor v80({1, 80, 80, 80});
    CHECK(extract_patches(v80, cfg).extent(0) == 125);
    Tensor v64({1, 64, 64, 64});
    CHECK(extract_patches(v64, cfg).extent(0) == 64);
}

TEST_CASE("non-divisible dims are an error, never padded") {
    PatchConfig cfg{8, 48, 1};
    Tensor v({1, 20, 16, 16});
    CHECK_THROWS_AS(extract_patches(v, cfg), numeric_error);
}

TEST_CASE("extract then reassemble is the identity") {
    Rng rng(1);
    PatchConfig cfg{4, 48, 3};
    Tensor v = random_tensor<float>({3, 8, 12, 4}, rng);
    std::array<std::size_t, 3> grid;
    Tensor patches = extract_patches(v, cfg, &grid);
    CHECK(grid == std::array<std::size_t, 3>{2, 3, 1});
    CHECK(reassemble_patches(patches, grid, cfg).bitwise_equal(v));
}

TEST_CASE("embed with zero projection") {
    Rng rng(2);
    std::array<std::size_t, 3> grid{2, 2, 2};
    Tensor patches = random_tensor<float>({8, 16}, rng);
    Tensor w({16, 6}), b({6});
    Tensor cls = random_tensor<float>({6}, rng);
    auto seq = embed_patches(patches, grid, w, b, cls);
    REQUIRE(seq.tokens.extent(0) == 9);
    for (std::size_t j = 0; j < 6; ++j) CHECK(seq.tokens[j] == cls[j]);
    for (std::size_t i = 6; i < seq.tokens.numel(); ++i) CHECK(seq.tokens[i] == 0.0f);
}

TEST_CASE("embed is a row-wise map: permuting patches permutes tokens") {
    Rng rng(3);
    std::array<std::size_t, 3> grid{1, 2, 2};
    Tensor patches = random_tensor<float>({4, 10}, rng);
    Tensor w = random_tensor<float>({10, 6}, rng);
    Tensor b = random_tensor<float>({6}, rng);
    Tensor cls = random_tensor<float>({6}, rng);
    auto seq = embed_patches(patches, grid, w, b, cls);

    std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor permuted({4, 10});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            permuted[i * 10 + j] = patches[perm[i] * 10 + j];
    auto seq2 = embed_patches(permuted, grid, w, b, cls);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(seq2.tokens[(i + 1) * 6 + j] ==
                  seq.tokens[(perm[i] + 1) * 6 + j]);
}

TEST_CASE("embed gradients match finite differences") {
    Rng rng(4);
    std::array<std::size_t, 3> grid{1, 2, 1};
    TensorD patches = random_tensor<double>({2, 5}, rng);
    TensorD w = random_tensor<double>({5, 6}, rng);
    TensorD b = random_tensor<double>({6}, rng);
    TensorD cls = random_tensor<double>({6}, rng);
    TensorD up = random_tensor<double>({3, 6}, rng);
    auto loss = [&]() {
        auto seq = embed_patches(patches, grid, w, b, cls);
        double s = 0;
        for (std::size_t i = 0; i < seq.tokens.numel(); ++i)
            s += up[i] * seq.tokens[i];
        return s;
    };
    TensorD dp, dw, db, dcls;
    embed_patches_backward(patches, w, up, dp, dw, db, dcls);
    CHECK(rel_error(dw, fd_grad(w, loss)) < 1e-6);
    CHECK(rel_error(db, fd_grad(b, loss)) < 1e-6);
    CHECK(rel_error(dcls, fd_grad(cls, loss)) < 1e-6);
    CHECK(rel_error(dp, fd_grad(patches, loss)) < 1e-6);
}
