#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scaler/error.hpp"
#include "scaler/gradcheck.hpp"
#include "scaler/graph.hpp"
#include "scaler/params.hpp"
#include "scaler/rng.hpp"
#include "scaler/tensor.hpp"
#include "test_util.hpp"

using namespace scaler;
using testutil::random_tensor;

namespace {

struct DebugChecksOn {
    bool prev;
    DebugChecksOn() : prev(debug_checks()) { set_debug_checks(true); }
    ~DebugChecksOn() { set_debug_checks(prev); }
};

} // namespace

TEST_CASE("tensor basics and validation") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at2(1, 2) == 6.0);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, std::nan("")}), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({1, 1, 1, 1, 1}, {1.0}), NumericError);

    Tensor hw = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor nchw = as_nchw(hw);
    CHECK(nchw.dims == std::vector<int64_t>{1, 1, 2, 2});
    CHECK(as_hw(nchw).data == hw.data);
}

TEST_CASE("evaluate fixed points") {
    ParamSet empty;

    SUBCASE("sigmoid at zero is exactly one half") {
        CompGraph g;
        NodeId x = g.constant(Tensor::full({3}, 0.0));
        NodeId y = g.sigmoid(x);
        Evaluation ev = evaluate(g, {}, empty);
        for (double v : ev.value(y).data) CHECK(v == 0.5);
    }

    SUBCASE("mean of a constant block") {
        CompGraph g;
        NodeId x = g.constant(Tensor::from_data({4}, {1, 2, 3, 4}));
        NodeId m = g.mean(x);
        Evaluation ev = evaluate(g, {}, empty);
        CHECK(ev.value(m).data[0] == 2.5);
    }

    SUBCASE("identity kernel convolution returns its input") {
        Rng rng(7);
        CompGraph g;
        Tensor img = random_tensor({1, 1, 4, 4}, rng, 0.0, 1.0);
        Tensor w = Tensor::zeros({1, 1, 3, 3});
        w.at4(0, 0, 1, 1) = 1.0;
        NodeId y = g.conv2d(g.constant(img), g.constant(w), g.constant(Tensor::zeros({1})));
        Evaluation ev = evaluate(g, {}, empty);
        for (size_t i = 0; i < img.data.size(); ++i) CHECK(ev.value(y).data[i] == img.data[i]);
    }

    SUBCASE("log is clamped at the floor") {
        CompGraph g;
        NodeId y = g.log_clamped(g.constant(Tensor::from_data({2}, {0.0, 1.0})));
        Evaluation ev = evaluate(g, {}, empty);
        CHECK(ev.value(y).data[0] == std::log(1e-12));
        CHECK(ev.value(y).data[1] == 0.0);
    }

    SUBCASE("concat stacks channels in order") {
        CompGraph g;
        NodeId a = g.constant(Tensor::full({1, 1, 2, 2}, 1.0));
        NodeId b = g.constant(Tensor::full({1, 2, 2, 2}, 2.0));
        NodeId c = g.concat_channels(a, b);
        Evaluation ev = evaluate(g, {}, empty);
        CHECK(ev.value(c).dims == std::vector<int64_t>{1, 3, 2, 2});
        CHECK(ev.value(c).data[0] == 1.0);
        CHECK(ev.value(c).data[4] == 2.0);
        CHECK(ev.value(c).data[8] == 2.0);
    }
}

TEST_CASE("evaluate errors are structured and name the node") {
    ParamSet empty;
    CompGraph g;
    NodeId a = g.constant(Tensor::zeros({2, 3}));
    NodeId b = g.constant(Tensor::zeros({3, 2}));
    NodeId bad = g.add(a, b);
    (void)bad;
    try {
        evaluate(g, {}, empty);
        FAIL("expected shape mismatch to throw");
    } catch (const NumericError& e) {
        std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }

    CompGraph g2;
    NodeId x = g2.input("image");
    (void)x;
    CHECK_THROWS_AS(evaluate(g2, {}, empty), NumericError);
}

TEST_CASE("debug mode rejects non-finite intermediates") {
    DebugChecksOn guard;
    ParamSet empty;
    CompGraph g;
    // 1/0 via div: produces inf, must be caught and attributed.
    NodeId y = g.div(g.constant(Tensor::full({1}, 1.0)), g.constant(Tensor::full({1}, 0.0)));
    (void)y;
    try {
        evaluate(g, {}, empty);
        FAIL("expected non-finite check to throw");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("div") != std::string::npos);
    }
}

TEST_CASE("evaluate is deterministic and leaves params untouched") {
    Rng rng(11);
    ParamSet params = testutil::small_conv_params(4, rng);
    uint64_t hash_before = params.content_hash();

    CompGraph g;
    NodeId out = testutil::small_conv_net(g, g.input("image"), 4);
    Bindings in{{"image", random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0)}};

    Evaluation e1 = evaluate(g, in, params);
    Evaluation e2 = evaluate(g, in, params);
    CHECK(e1.value(out).data == e2.value(out).data);
    CHECK(params.content_hash() == hash_before);
}

TEST_CASE("backprop basics") {
    ParamSet params;
    params.insert("x", Tensor::from_data({4}, {0.3, -0.2, 0.8, 0.1}));

    SUBCASE("mean gradient is one over n") {
        CompGraph g;
        NodeId loss = g.mean(g.param("x"));
        backprop(g, {}, params, loss);
        for (double v : params.at("x").grad.data) CHECK(v == 0.25);
    }

    SUBCASE("sigmoid slope at zero is one quarter") {
        ParamSet p;
        p.insert("z", Tensor::from_data({1}, {0.0}));
        CompGraph g;
        NodeId loss = g.sum(g.sigmoid(g.param("z")));
        backprop(g, {}, p, loss);
        CHECK(p.at("z").grad.data[0] == 0.25);
    }

    SUBCASE("gradients accumulate until zeroed") {
        CompGraph g;
        NodeId loss = g.mean(g.param("x"));
        backprop(g, {}, params, loss);
        backprop(g, {}, params, loss);
        for (double v : params.at("x").grad.data) CHECK(v == 0.5);
        params.zero_grads();
        for (double v : params.at("x").grad.data) CHECK(v == 0.0);
    }

    SUBCASE("non-scalar loss is rejected") {
        CompGraph g;
        NodeId y = g.scalar_mul(g.param("x"), 2.0);
        CHECK_THROWS_AS(backprop(g, {}, params, y), NumericError);
    }

    SUBCASE("a parameter used twice accumulates both paths") {
        ParamSet p;
        p.insert("w", Tensor::from_data({1}, {3.0}));
        CompGraph g;
        NodeId w = g.param("w");
        NodeId loss = g.sum(g.mul(w, w)); // d(w^2)/dw = 2w
        backprop(g, {}, p, loss);
        CHECK(p.at("w").grad.data[0] == 6.0);
    }
}

TEST_CASE("finite differences agree with backprop on a conv net with cross-entropy") {
    // The gradient oracle: random two-layer conv net on an 8x8 input, BCE
    // against a random target, central differences at h=1e-5.
    Rng rng(20260816);
    for (int trial = 0; trial < 5; ++trial) {
        ParamSet params = testutil::small_conv_params(3, rng);
        CompGraph g;
        NodeId pred = testutil::small_conv_net(g, g.input("image"), 3);
        Tensor target = testutil::random_mask(8, 8, rng);
        NodeId loss = testutil::raw_bce(g, pred, as_nchw(target));
        Bindings in{{"image", random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0)}};

        GradCheckReport rep = finite_diff_check(g, in, params, loss, 1e-6);
        CHECK(rep.pass);
        CHECK(rep.max_rel_error <= 1e-6);
    }
}

TEST_CASE("finite differences cover every op kind") {
    Rng rng(99);
    auto run = [&](auto build) {
        ParamSet params;
        params.insert("a", random_tensor({1, 2, 4, 4}, rng, 0.1, 0.9));
        params.insert("b", random_tensor({1, 2, 4, 4}, rng, 0.5, 1.5));
        CompGraph g;
        NodeId loss = build(g);
        GradCheckReport rep = finite_diff_check(g, {}, params, loss, 1e-6);
        CHECK(rep.pass);
    };

    run([](CompGraph& g) { return g.mean(g.add(g.param("a"), g.param("b"))); });
    run([](CompGraph& g) { return g.mean(g.mul(g.param("a"), g.param("b"))); });
    run([](CompGraph& g) { return g.mean(g.scalar_mul(g.param("a"), -2.5)); });
    run([](CompGraph& g) { return g.mean(g.div(g.param("a"), g.param("b"))); });
    run([](CompGraph& g) { return g.mean(g.sigmoid(g.param("a"))); });
    run([](CompGraph& g) { return g.mean(g.log_clamped(g.param("a"))); });
    run([](CompGraph& g) { return g.sum(g.scalar_mul(g.param("a"), 0.01)); });
    run([](CompGraph& g) { return g.mean(g.concat_channels(g.param("a"), g.param("b"))); });
    // leaky_relu away from the kink
    run([](CompGraph& g) { return g.mean(g.leaky_relu(g.param("a"), 0.1)); });
    {
        ParamSet params;
        params.insert("w", random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5));
        params.insert("bias", random_tensor({2}, rng, -0.2, 0.2));
        CompGraph g;
        NodeId img = g.constant(random_tensor({1, 2, 5, 5}, rng, 0.0, 1.0));
        NodeId loss = g.mean(g.conv2d(img, g.param("w"), g.param("bias")));
        GradCheckReport rep = finite_diff_check(g, {}, params, loss, 1e-6);
        CHECK(rep.pass);
    }
}

TEST_CASE("finite_diff_check flags analytic/numeric disagreement") {
    // Parameter sitting on the leaky-relu kink: the central difference
    // straddles both slopes, the analytic rule picks one. The checker must
    // notice rather than paper over it.
    ParamSet params;
    params.insert("x", Tensor::from_data({1}, {1e-7}));
    CompGraph g;
    NodeId loss = g.sum(g.leaky_relu(g.param("x"), 0.1));
    GradCheckReport rep = finite_diff_check(g, {}, params, loss, 1e-6);
    CHECK_FALSE(rep.pass);
    REQUIRE(rep.flagged.size() == 1);
    CHECK(rep.flagged[0] == "x");
}

TEST_CASE("finite_diff_check rejects oversized parameter sets") {
    ParamSet params;
    params.insert("big", Tensor::zeros({20, 20, 30}));
    CompGraph g;
    NodeId loss = g.mean(g.param("big"));
    CHECK_THROWS_AS(finite_diff_check(g, {}, params, loss, 1e-6), NumericError);
}

TEST_CASE("adam") {
    SUBCASE("defaults match the stated optimizer settings") {
        AdamConfig cfg;
        CHECK(cfg.beta1 == 0.9);
        CHECK(cfg.beta2 == 0.999);
        CHECK(cfg.epsilon == 1e-8);
        CHECK(cfg.lr == 1e-4);
    }

    SUBCASE("zero gradient from fresh state leaves params unchanged but counts the step") {
        ParamSet p;
        p.insert("w", Tensor::from_data({3}, {1.0, -2.0, 0.5}));
        adam_step(p, AdamConfig{});
        CHECK(p.at("w").value.data == std::vector<double>{1.0, -2.0, 0.5});
        CHECK(p.at("w").adam_t == 1);
    }

    SUBCASE("first step moves each weight by about lr times sign of gradient") {
        ParamSet p;
        p.insert("w", Tensor::from_data({2}, {0.0, 0.0}));
        p.at("w").grad.data = {0.37, -4.1};
        AdamConfig cfg;
        cfg.lr = 1e-3;
        adam_step(p, cfg);
        CHECK(p.at("w").value.data[0] == doctest::Approx(-1e-3).epsilon(1e-4));
        CHECK(p.at("w").value.data[1] == doctest::Approx(1e-3).epsilon(1e-4));
    }

    SUBCASE("non-positive learning rate is rejected") {
        ParamSet p;
        p.insert("w", Tensor::from_data({1}, {0.0}));
        AdamConfig cfg;
        cfg.lr = 0.0;
        CHECK_THROWS_AS(adam_step(p, cfg), NumericError);
    }

    SUBCASE("two accumulated backprops equal one summed step") {
        Rng rng(5);
        ParamSet a = testutil::small_conv_params(2, rng);
        ParamSet b = a;

        CompGraph g;
        NodeId out = testutil::small_conv_net(g, g.input("image"), 2);
        NodeId loss = g.mean(out);
        Bindings in{{"image", random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0)}};

        backprop(g, in, a, loss);
        backprop(g, in, a, loss);

        backprop(g, in, b, loss);
        for (const auto& name : b.names())
            for (double& v : b.at(name).grad.data) v *= 2.0;

        for (const auto& name : a.names())
            CHECK(a.at(name).grad.data == b.at(name).grad.data);
    }
}

TEST_CASE("param set serialization round-trips bit-exactly") {
    namespace fs = std::filesystem;
    Rng rng(31);
    ParamSet p = testutil::small_conv_params(3, rng);
    // Give the optimizer state non-trivial content.
    CompGraph g;
    NodeId loss = g.mean(testutil::small_conv_net(g, g.input("image"), 3));
    Bindings in{{"image", random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0)}};
    backprop(g, in, p, loss);
    adam_step(p, AdamConfig{});

    fs::path dir = fs::temp_directory_path() / "scaler_params_test";
    fs::create_directories(dir);
    fs::path f1 = dir / "a.params";
    fs::path f2 = dir / "b.params";
    p.save(f1);
    ParamSet q = ParamSet::load(f1);

    REQUIRE(q.names() == p.names());
    for (const auto& name : p.names()) {
        CHECK(q.at(name).value.data == p.at(name).value.data);
        CHECK(q.at(name).adam_m.data == p.at(name).adam_m.data);
        CHECK(q.at(name).adam_v.data == p.at(name).adam_v.data);
        CHECK(q.at(name).adam_t == p.at(name).adam_t);
    }

    q.save(f2);
    std::ifstream s1(f1, std::ios::binary), s2(f2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    fs::remove_all(dir);
}

TEST_CASE("param file corruption is reported as an io error") {
    namespace fs = std::filesystem;
    Rng rng(32);
    ParamSet p = testutil::small_conv_params(2, rng);
    fs::path dir = fs::temp_directory_path() / "scaler_params_corrupt";
    fs::create_directories(dir);
    fs::path f = dir / "p.params";
    p.save(f);

    SUBCASE("truncation") {
        auto size = fs::file_size(f);
        fs::resize_file(f, size / 2);
        CHECK_THROWS_AS(ParamSet::load(f), IoError);
    }
    SUBCASE("bad magic") {
        std::fstream s(f, std::ios::in | std::ios::out | std::ios::binary);
        s.seekp(0);
        s.write("XXXXXXXX", 8);
        s.close();
        CHECK_THROWS_AS(ParamSet::load(f), ArtifactError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(ParamSet::load(dir / "nope.params"), IoError); }
    fs::remove_all(dir);
}

TEST_CASE("incremental evaluation extends without recomputation drift") {
    Rng rng(44);
    ParamSet params = testutil::small_conv_params(2, rng);
    CompGraph g;
    NodeId out = testutil::small_conv_net(g, g.input("image"), 2);
    Bindings in{{"image", random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0)}};
    Evaluation ev = evaluate(g, in, params);
    Tensor first = ev.value(out);

    NodeId loss = g.mean(out);
    extend_evaluation(g, in, params, ev);
    CHECK(ev.value(out).data == first.data);

    Evaluation fresh = evaluate(g, in, params);
    CHECK(ev.value(loss).data == fresh.value(loss).data);
}
