#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "varivit/data.hpp"

using namespace varivit;
namespace fs = std::filesystem;

TEST_CASE("bin assignment thresholds") {
    CHECK(assign_bin(50).crop_edge == 64);
    CHECK(assign_bin(66).crop_edge == 64);
    CHECK(assign_bin(67).crop_edge == 80);
    CHECK(assign_bin(87).crop_edge == 80);
    CHECK(assign_bin(88).crop_edge == 96);
    CHECK(assign_bin(90).crop_edge == 96);
}

TEST_CASE("bin assignment partitions the integers into three contiguous ranges") {
    int prev = assign_bin(1).crop_edge;
    int switches = 0;
    for (int v = 2; v <= 200; ++v) {
        int cur = assign_bin(v).crop_edge;
        if (cur != prev) {
            ++switches;
            CHECK(cur > prev);  // edges only grow with tumor size
            prev = cur;
        }
    }
    CHECK(switches == 2);
}

TEST_CASE("rescale_intensity") {
    Tensor t({3}, {2, 4, 6});
    Tensor r = rescale_intensity(t);
    CHECK(r[0] == doctest::Approx(0.0));
    CHECK(r[1] == doctest::Approx(0.5));
    CHECK(r[2] == doctest::Approx(1.0));

    Tensor norm({3}, {0.0f, 0.25f, 1.0f});
    CHECK(rescale_intensity(norm).bitwise_equal(norm));

    Tensor c = Tensor::full({4}, 5.0f);
    Tensor rc = rescale_intensity(c);
    for (std::size_t i = 0; i < 4; ++i) CHECK(rc[i] == 0.0f);
}

TEST_CASE("generate_volume determinism and range") {
    Rng a(42), b(42);
    Volume v1 = generate_volume(a, 1, 16, 4, 8);
    Volume v2 = generate_volume(b, 1, 16, 4, 8);
    CHECK(v1.voxels.bitwise_equal(v2.voxels));

    float lo = 1, hi = 0;
    for (std::size_t i = 0; i < v1.voxels.numel(); ++i) {
        lo = std::min(lo, v1.voxels[i]);
        hi = std::max(hi, v1.voxels[i]);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);

    Rng c(1);
    CHECK_THROWS_AS(generate_volume(c, 0, 20, 4, 8), data_error);
}

TEST_CASE("generated tumor is centered") {
    Rng rng(7);
    Volume v = generate_volume(rng, 0, 32, 1, 8);
    // intensity-weighted centroid of the bright foreground
    const std::size_t e = 32;
    double cz = 0, cy = 0, cx = 0, mass = 0;
    for (std::size_t z = 0; z < e; ++z)
        for (std::size_t y = 0; y < e; ++y)
            for (std::size_t x = 0; x < e; ++x) {
                double w = v.voxels[(z * e + y) * e + x];
                if (w < 0.4) continue;  // background noise sits well below
                cz += w * z; cy += w * y; cx += w * x; mass += w;
            }
    REQUIRE(mass > 0);
    const double center = (e - 1) / 2.0;
    CHECK(std::abs(cz / mass - center) < 1.0);
    CHECK(std::abs(cy / mass - center) < 1.0);
    CHECK(std::abs(cx / mass - center) < 1.0);
}

TEST_CASE("augment") {
    Rng rng(9);
    Volume v = generate_volume(rng, 0, 16, 2, 8);

    SUBCASE("identity when noise and flips are off") {
        Rng a(1);
        Volume out = augment(v, a, 0.0, 0.0);
        CHECK(out.voxels.bitwise_equal(v.voxels));
        CHECK(out.label == v.label);
    }
    SUBCASE("double flip is the identity") {
        Rng a(2);  // force flips on by probability 1
        Volume once = augment(v, a, 0.0, 1.0);
        Rng b(3);
        Volume twice = augment(once, b, 0.0, 1.0);
        CHECK(twice.voxels.bitwise_equal(v.voxels));
    }
    SUBCASE("output stays in [0,1]") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng a(seed);
            Volume out = augment(v, a, 0.05, 0.5);
            for (std::size_t i = 0; i < out.voxels.numel(); ++i) {
                CHECK(out.voxels[i] >= 0.0f);
                CHECK(out.voxels[i] <= 1.0f);
            }
        }
    }
}

TEST_CASE("dataset round-trip is bit-exact") {
    fs::path dir = fs::temp_directory_path() / "varivit_data_test";
    fs::remove_all(dir);
    Rng root(5);
    std::vector<Volume> vols;
    for (int i = 0; i < 4; ++i) {
        Rng rng = root.derive(i);
        Volume v = generate_volume(rng, i % 2, 16, 4, 8);
        v.sample_id = i;
        vols.push_back(std::move(v));
    }
    write_dataset(dir, vols, 5);

    DatasetManifest m = read_manifest(dir / "manifest.tsv");
    CHECK(m.seed == 5);
    CHECK(m.samples.size() == 4);
    CHECK(m.class_counts()[0] == 2);
    CHECK(m.class_counts()[1] == 2);

    auto loaded = read_dataset(dir / "manifest.tsv");
    for (int i = 0; i < 4; ++i) {
        CHECK(loaded[i].voxels.bitwise_equal(vols[i].voxels));
        CHECK(loaded[i].label == vols[i].label);
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset error paths") {
    CHECK_THROWS_AS(read_manifest("/nonexistent/manifest.tsv"), data_error);

    fs::path dir = fs::temp_directory_path() / "varivit_data_err";
    fs::create_directories(dir);
    std::ofstream(dir / "bad.vvt") << "NOTAMAGIC and some junk";
    CHECK_THROWS_AS(read_tensor<float>(dir / "bad.vvt"), data_error);
    fs::remove_all(dir);
}
