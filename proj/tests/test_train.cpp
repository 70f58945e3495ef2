#include <doctest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "varivit/train.hpp"

using namespace varivit;
using testutil::fd_grad;
using testutil::random_tensor;
using testutil::rel_error;

namespace {

TrainConfig quick_cfg() {
    TrainConfig cfg;
    cfg.base_lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.warmup_epochs = 0;
    cfg.total_epochs = 1;
    return cfg;
}

std::vector<Volume> tiny_dataset(int n, std::uint64_t seed, int edge = 8) {
    std::vector<Volume> out;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Rng sample = rng.derive(static_cast<std::uint64_t>(i));
        out.push_back(generate_volume(sample, i % 2, edge, 1, 4, edge / 2));
        out.back().sample_id = static_cast<std::uint64_t>(i);
    }
    return out;
}

ModelConfig tiny_model_cfg() {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.embed_dim = 12;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 2;
    cfg.patch_size = 4;
    cfg.in_channels = 1;
    cfg.max_image_edge = 8;
    return cfg;
}

}  // namespace

TEST_CASE("optimizer leaves parameters alone when gradient is zero, wd=0") {
    TensorD theta({3}, {1.0, -2.0, 0.5});
    TensorD grad({3});
    std::vector<ParamRef<double>> refs{{"w", &theta, &grad, true}};
    AdamStateT<double> state;
    optimizer_step(refs, state, 0.1, quick_cfg());
    CHECK(theta[0] == 1.0);
    CHECK(theta[1] == -2.0);
    CHECK(theta[2] == 0.5);
}

TEST_CASE("zero gradient with decay shrinks decayed tensors multiplicatively") {
    auto cfg = quick_cfg();
    cfg.weight_decay = 0.5;
    TensorD w({2}, {1.0, -2.0});
    TensorD b({2}, {1.0, -2.0});
    TensorD gw({2}), gb({2});
    std::vector<ParamRef<double>> refs{{"w", &w, &gw, true}, {"b", &b, &gb, false}};
    AdamStateT<double> state;
    optimizer_step(refs, state, 0.1, cfg);
    // theta -= lr * wd * theta, independent of the adaptive step
    CHECK(w[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.5)));
    CHECK(w[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.5)));
    CHECK(b[0] == 1.0);  // no decay on bias-like tensors
    CHECK(b[1] == -2.0);
}

TEST_CASE("first adaptive step has magnitude about lr") {
    TensorD theta({1}, {0.0});
    TensorD grad({1}, {3.7});
    std::vector<ParamRef<double>> refs{{"w", &theta, &grad, false}};
    AdamStateT<double> state;
    optimizer_step(refs, state, 0.1, quick_cfg());
    // bias correction makes m_hat/sqrt(v_hat) = g/|g| on step 1
    CHECK(theta[0] == doctest::Approx(-0.1).epsilon(1e-6));

    grad[0] = std::nan("");
    CHECK_THROWS_AS(optimizer_step(refs, state, 0.1, quick_cfg()), numeric_error);
}

TEST_CASE("optimizer trajectory is deterministic") {
    auto run = [] {
        TensorD theta({2}, {1.0, -1.0});
        TensorD grad({2});
        std::vector<ParamRef<double>> refs{{"w", &theta, &grad, true}};
        AdamStateT<double> state;
        auto cfg = quick_cfg();
        cfg.weight_decay = 0.01;
        for (int t = 0; t < 20; ++t) {
            grad[0] = 0.3 * theta[0];
            grad[1] = -0.7 + theta[1];
            optimizer_step(refs, state, 0.05, cfg);
        }
        return std::make_pair(theta[0], theta[1]);
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("lr schedule endpoints and continuity") {
    TrainConfig cfg;
    cfg.base_lr = 2e-3;
    cfg.warmup_epochs = 40;
    cfg.total_epochs = 100;
    CHECK(lr_at(0.0, cfg) == 0.0);
    CHECK(lr_at(40.0, cfg) == doctest::Approx(2e-3));
    CHECK(lr_at(70.0, cfg) == doctest::Approx(1e-3));  // cosine midpoint
    CHECK(lr_at(100.0, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_at(20.0, cfg) == doctest::Approx(1e-3));  // linear midpoint

    // continuity at the warmup boundary
    CHECK(lr_at(40.0 - 1e-9, cfg) == doctest::Approx(lr_at(40.0 + 1e-9, cfg)));

    // monotone up then down
    for (double e = 0; e < 40; e += 0.5) CHECK(lr_at(e, cfg) <= lr_at(e + 0.5, cfg));
    for (double e = 40; e < 100; e += 0.5) CHECK(lr_at(e, cfg) >= lr_at(e + 0.5, cfg));

    cfg.warmup_epochs = 0;
    CHECK(lr_at(0.0, cfg) == doctest::Approx(2e-3));
}

TEST_CASE("weighted cross-entropy values and gradient") {
    std::vector<double> unit{1.0, 1.0, 1.0};
    TensorD zeros({3});
    auto [loss, d] = weighted_ce(zeros, 1, unit);
    CHECK(loss == doctest::Approx(std::log(3.0)));
    CHECK(d[1] == doctest::Approx(1.0 / 3.0 - 1.0));
    CHECK(d[0] == doctest::Approx(1.0 / 3.0));

    // weight scales both loss and gradient linearly
    std::vector<double> w{1.0, 2.5, 1.0};
    auto [loss2, d2] = weighted_ce(zeros, 1, w);
    CHECK(loss2 == doctest::Approx(2.5 * loss));
    for (std::size_t k = 0; k < 3; ++k) CHECK(d2[k] == doctest::Approx(2.5 * d[k]));

    // gradient matches finite differences
    Rng rng(5);
    TensorD logits = random_tensor<double>({4}, rng);
    std::vector<double> w4{0.5, 1.0, 2.0, 1.5};
    auto [l3, d3] = weighted_ce(logits, 2, w4);
    (void)l3;
    auto fd = fd_grad(logits, [&]() { return weighted_ce(logits, 2, w4).first; });
    CHECK(rel_error(d3, fd) < 1e-6);

    CHECK_THROWS_AS(weighted_ce(zeros, 3, unit), data_error);
}

TEST_CASE("class weights") {
    std::vector<int> labels{0, 0, 0, 1};
    auto w = class_weights(labels, 2);
    CHECK(w[0] == doctest::Approx(4.0 / (2.0 * 3.0)));
    CHECK(w[1] == doctest::Approx(4.0 / (2.0 * 1.0)));

    // balanced labels give unit weights
    auto wb = class_weights({0, 1, 2, 0, 1, 2}, 3);
    for (double v : wb) CHECK(v == doctest::Approx(1.0));

    CHECK_THROWS_AS(class_weights({0, 2}, 2), data_error);
}

TEST_CASE("auc hand examples") {
    // perfect separation
    CHECK(auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    // perfect anti-separation
    CHECK(auc_binary({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
    // all scores tied -> 0.5
    CHECK(auc_binary({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    // one discordant pair among 2x2 = 4: AUC 3/4
    CHECK(auc_binary({0.1, 0.6, 0.4, 0.9}, {0, 0, 1, 1}) == doctest::Approx(0.75));
    // invariant under monotone transforms of the scores
    std::vector<double> s{0.2, 0.7, 0.3, 0.8, 0.5};
    std::vector<int> l{0, 1, 0, 1, 1};
    std::vector<double> s2;
    for (double v : s) s2.push_back(std::exp(3.0 * v));
    CHECK(auc_binary(s, l) == doctest::Approx(auc_binary(s2, l)));

    CHECK_THROWS_AS(auc_binary({0.1, 0.9}, {1, 1}), data_error);
}

TEST_CASE("f1 and mcc hand examples") {
    Confusion perfect(2);
    perfect.counts = {{5, 0}, {0, 5}};
    CHECK(f1_from_confusion(perfect) == doctest::Approx(1.0));
    CHECK(mcc_from_confusion(perfect) == doctest::Approx(1.0));

    Confusion coin(2);
    coin.counts = {{1, 1}, {1, 1}};  // TN=FP=FN=TP=1
    CHECK(mcc_from_confusion(coin) == doctest::Approx(0.0));
    CHECK(f1_from_confusion(coin) == doctest::Approx(0.5));

    Confusion c(2);
    c.counts = {{0, 1}, {1, 2}};  // TP=2, FP=1, FN=1
    CHECK(f1_from_confusion(c) == doctest::Approx(2.0 / 3.0));

    // swapping the positive and negative classes flips MCC's sign but
    // preserves magnitude
    Confusion a(2), b(2);
    a.counts = {{4, 1}, {2, 3}};
    b.counts = {{3, 2}, {1, 4}};
    CHECK(mcc_from_confusion(a) == doctest::Approx(mcc_from_confusion(b)));

    // multi-class generalized MCC agrees with the binary form for K=2
    Confusion m3(3);
    m3.counts = {{3, 0, 0}, {0, 3, 0}, {0, 0, 3}};
    CHECK(mcc_from_confusion(m3) == doctest::Approx(1.0));
    CHECK(f1_from_confusion(m3) == doctest::Approx(1.0));
}

TEST_CASE("compute_metrics thresholds binary probabilities at 0.5") {
    std::vector<std::vector<double>> probs{
        {0.9, 0.1}, {0.6, 0.4}, {0.3, 0.7}, {0.2, 0.8}};
    std::vector<int> labels{0, 0, 1, 1};
    auto rec = compute_metrics(probs, labels);
    CHECK(rec.auc == doctest::Approx(1.0));
    CHECK(rec.f1 == doctest::Approx(1.0));
    CHECK(rec.mcc == doctest::Approx(1.0));
}

TEST_CASE("gradient accumulation matches the joint batch gradient") {
    ModelT<double> model(tiny_model_cfg(), 31);
    Rng rng(32);
    std::vector<TensorD> batch;
    std::vector<int> labels{0, 1, 1, 0};
    for (int i = 0; i < 4; ++i)
        batch.push_back(testutil::random_tensor<double>({1, 8, 8, 8}, rng, 0.5));
    std::vector<double> weights{1.0, 1.0};
    const double scale = 1.0 / 4.0;

    model.zero_grads();
    for (int i = 0; i < 4; ++i)
        sample_loss_backward(model, batch[i], labels[i], weights, scale);
    std::map<std::string, TensorD> joint;
    for (auto& r : model.param_refs()) joint.emplace(r.name, *r.grad);

    // accumulate in a different sample order; sums must agree to ~1e-10
    model.zero_grads();
    for (int i : {2, 0, 3, 1})
        sample_loss_backward(model, batch[i], labels[i], weights, scale);
    for (auto& r : model.param_refs()) {
        INFO(r.name);
        CHECK(testutil::rel_error(*r.grad, joint.at(r.name)) < 1e-10);
    }
}

TEST_CASE("short training runs are deterministic and loss decreases") {
    auto vols = tiny_dataset(8, 99);
    std::vector<Volume> train(vols.begin(), vols.begin() + 6);
    std::vector<Volume> test(vols.begin() + 6, vols.end());

    TrainConfig cfg;
    cfg.base_lr = 3e-4;
    cfg.warmup_epochs = 1;
    cfg.total_epochs = 4;
    cfg.batch_size = 3;
    cfg.seed = 7;

    auto run = [&] {
        ModelT<float> model(tiny_model_cfg(), 11);
        return train_loop(model, train, test, BatchMode::cbs, cfg);
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.records.size() == 8);  // train+test rows per epoch
    for (std::size_t i = 0; i < r1.records.size(); ++i)
        CHECK(r1.records[i].loss == r2.records[i].loss);

    double final_train = r1.records[r1.records.size() - 2].loss;
    CHECK(final_train < r1.first_batch_loss);
}

TEST_CASE("ga and cbs modes run end to end on mixed sizes") {
    auto small = tiny_dataset(4, 3, 8);
    auto large = tiny_dataset(4, 4, 12);
    for (auto& v : large) v.sample_id += 100;
    std::vector<Volume> train;
    train.insert(train.end(), small.begin(), small.end());
    train.insert(train.end(), large.begin(), large.end());
    std::vector<Volume> test{small[0], large[1]};

    auto cfg = tiny_model_cfg();
    cfg.max_image_edge = 12;
    TrainConfig tc;
    tc.base_lr = 1e-4;
    tc.warmup_epochs = 0;
    tc.total_epochs = 1;
    tc.batch_size = 4;
    for (BatchMode mode : {BatchMode::cbs, BatchMode::ga, BatchMode::pad_to_max}) {
        ModelT<float> model(cfg, 21);
        auto r = train_loop(model, train, test, mode, tc);
        CHECK(r.records.size() == 2);
        CHECK(std::isfinite(r.records[0].loss));
    }
}

TEST_CASE("metrics csv round trip") {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "varivit_metrics_test.csv";
    write_metrics_csv(p, {{0, "train", 0.5, 0.9, 0.8, 0.7, 1.25}});
    std::ifstream is(p);
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(header == "epoch,split,loss,auc,f1,mcc,seconds");
    CHECK(row == "0,train,0.5,0.9,0.8,0.7,1.25");
    fs::remove(p);
}
