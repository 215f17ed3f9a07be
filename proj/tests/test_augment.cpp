#include <doctest.h>

#include <cmath>

#include "scaler/augment.hpp"
#include "scaler/error.hpp"
#include "scaler/rng.hpp"
#include "test_util.hpp"

using namespace scaler;

namespace {

using testutil::smooth_mask;

int count_label(const Tensor& ann, double v) {
    int n = 0;
    for (double a : ann.data)
        if (a == v) ++n;
    return n;
}

} // namespace

TEST_CASE("weak aug apply is deterministic and square-only") {
    Rng rng(1);
    Tensor m = testutil::random_mask(16, 16, rng);
    WeakAug a{true, false, 3, 1.0};
    Tensor o1 = apply(a, m);
    Tensor o2 = apply(a, m);
    CHECK(o1.data == o2.data);

    Tensor rect = Tensor::zeros({4, 8});
    CHECK_THROWS_AS(apply(WeakAug{}, rect), NumericError);
}

TEST_CASE("flips are involutions and rotations have order four") {
    Rng rng(2);
    Tensor m = testutil::random_mask(12, 12, rng);
    WeakAug h{true, false, 0, 1.0};
    CHECK(apply(h, apply(h, m)).data == m.data);
    WeakAug v{false, true, 0, 1.0};
    CHECK(apply(v, apply(v, m)).data == m.data);

    WeakAug r1{false, false, 1, 1.0};
    Tensor t = m;
    for (int i = 0; i < 4; ++i) t = apply(r1, t);
    CHECK(t.data == m.data);
}

TEST_CASE("invert composes with apply to the identity, exactly, for all flip/rot combos") {
    Rng rng(3);
    for (int hf = 0; hf < 2; ++hf)
        for (int vf = 0; vf < 2; ++vf)
            for (int rot = 0; rot < 4; ++rot) {
                WeakAug a{hf == 1, vf == 1, rot, 1.0};
                Tensor m = testutil::random_mask(16, 16, rng);
                Tensor round = invert_to_reference(a, apply(a, m));
                CHECK(round.data == m.data);
            }
}

TEST_CASE("scale round trip stays within tolerance on band-limited masks") {
    Rng rng(4);
    for (double scale : {0.5, 2.0}) {
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            Tensor m = smooth_mask(32, rng);
            WeakAug a{trial % 2 == 0, false, trial % 4, scale};
            Tensor round = invert_to_reference(a, apply(a, m));
            REQUIRE(round.dims == m.dims);
            for (size_t i = 0; i < m.data.size(); ++i)
                worst = std::max(worst, std::fabs(round.data[i] - m.data[i]));
        }
        CHECK(worst <= 0.05);
    }
}

TEST_CASE("annotation warp permutes labels exactly under flips and rotations") {
    Tensor ann = Tensor::zeros({8, 8});
    ann.at2(2, 1) = 1.0;
    ann.at2(6, 5) = -1.0;
    for (int rot = 0; rot < 4; ++rot) {
        WeakAug a{true, false, rot, 1.0};
        Tensor w = warp_annotation(a, ann);
        CHECK(count_label(w, 1.0) == 1);
        CHECK(count_label(w, -1.0) == 1);
        // Round trip through the mask path (a permutation must invert cleanly).
        Tensor back = invert_to_reference(a, w);
        CHECK(back.data == ann.data);
    }
}

TEST_CASE("annotation warp under scaling keeps labels alive and invents none") {
    Tensor ann = Tensor::zeros({16, 16});
    ann.at2(3, 12) = 1.0;
    ann.at2(11, 2) = -1.0;
    for (double scale : {0.5, 2.0}) {
        WeakAug a{false, true, 1, scale};
        Tensor w = warp_annotation(a, ann);
        CHECK(w.dims[0] == static_cast<int64_t>(16 * scale));
        CHECK(count_label(w, 1.0) == 1);
        CHECK(count_label(w, -1.0) == 1);
        for (double v : w.data) CHECK((v == 0.0 || v == 1.0 || v == -1.0));
    }
}

TEST_CASE("strong aug with neutral photometric parameters equals its weak base") {
    Rng rng(5);
    Tensor m = testutil::random_mask(16, 16, rng);
    StrongAug s;
    s.base = WeakAug{true, true, 2, 1.0};
    Tensor weak = apply(s.base, m);
    Tensor strong = apply_strong(s, m);
    CHECK(strong.data == weak.data);
}

TEST_CASE("strong aug keeps the base geometry and only moves values") {
    Rng rng(6);
    Tensor m = testutil::random_mask(16, 16, rng);
    WeakAug base = sample_weak(rng);
    StrongAug s = sample_strong(rng, base);
    CHECK(s.base.hflip == base.hflip);
    CHECK(s.base.vflip == base.vflip);
    CHECK(s.base.rot == base.rot);
    CHECK(s.base.scale == base.scale);
    Tensor strong = apply_strong(s, m);
    CHECK(strong.dims == apply(base, m).dims);
    for (double v : strong.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(s.cut_frac <= 0.25);

    // Same StrongAug applied twice (seeded noise) is bit-identical.
    Tensor again = apply_strong(s, m);
    CHECK(strong.data == again.data);
}

TEST_CASE("brightness shifts unclamped pixels by exactly the offset") {
    Tensor m = Tensor::full({8, 8}, 0.5);
    StrongAug s;
    s.brightness = 0.125;
    Tensor out = apply_strong(s, m);
    for (double v : out.data) CHECK(v == 0.625);
}

TEST_CASE("cutout paints a square with the neutral value") {
    Tensor m = Tensor::full({16, 16}, 1.0);
    StrongAug s;
    s.has_cutout = true;
    s.cut_frac = 0.25;
    s.cut_cy = 0.5;
    s.cut_cx = 0.5;
    Tensor out = apply_strong(s, m);
    int gray = 0;
    for (double v : out.data)
        if (v == 0.5) ++gray;
    CHECK(gray == 16); // 4x4 block
}

TEST_CASE("weak sampler covers the group uniformly") {
    Rng rng(7);
    int rot_counts[4] = {0, 0, 0, 0};
    int scale_counts[3] = {0, 0, 0};
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        WeakAug a = sample_weak(rng);
        rot_counts[a.rot]++;
        scale_counts[a.scale == 0.5 ? 0 : (a.scale == 1.0 ? 1 : 2)]++;
    }
    double chi2 = 0.0;
    for (int counts : rot_counts) {
        double d = counts - n / 4.0;
        chi2 += d * d / (n / 4.0);
    }
    CHECK(chi2 < 16.27); // chi-square critical value, df=3, alpha=0.001
    double chi2s = 0.0;
    for (int counts : scale_counts) {
        double d = counts - n / 3.0;
        chi2s += d * d / (n / 3.0);
    }
    CHECK(chi2s < 13.82); // df=2, alpha=0.001

    for (int i = 0; i < 100; ++i) CHECK(sample_weak(rng, false).scale == 1.0);
}
