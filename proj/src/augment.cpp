#include "scaler/augment.hpp"

#include <algorithm>
#include <cmath>

#include "scaler/error.hpp"

namespace scaler {

namespace {

void require_square(const Tensor& t, const char* who) {
    if (t.rank() != 2)
        throw NumericError(std::string(who) + ": expected rank-2, got " + t.shape_str());
    if (t.dims[0] != t.dims[1])
        throw NumericError(std::string(who) + ": inputs must be square, got " + t.shape_str());
}

Tensor flip_h(const Tensor& t) {
    int64_t H = t.dims[0], W = t.dims[1];
    Tensor out = Tensor::zeros({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) out.at2(y, x) = t.at2(y, W - 1 - x);
    return out;
}

Tensor flip_v(const Tensor& t) {
    int64_t H = t.dims[0], W = t.dims[1];
    Tensor out = Tensor::zeros({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) out.at2(y, x) = t.at2(H - 1 - y, x);
    return out;
}

// One quarter turn counter-clockwise: out[y][x] = in[x][S-1-y].
Tensor rot_ccw_once(const Tensor& t) {
    int64_t S = t.dims[0];
    Tensor out = Tensor::zeros({S, S});
    for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) out.at2(y, x) = t.at2(x, S - 1 - y);
    return out;
}

Tensor rot_ccw(const Tensor& t, int k) {
    Tensor out = t;
    for (int i = 0; i < ((k % 4) + 4) % 4; ++i) out = rot_ccw_once(out);
    return out;
}

int64_t scaled_side(int64_t side, double scale) {
    return static_cast<int64_t>(std::llround(static_cast<double>(side) * scale));
}

} // namespace

Tensor resize_bilinear(const Tensor& hw, int64_t out_side) {
    require_square(hw, "resize_bilinear");
    int64_t S = hw.dims[0];
    if (out_side < 2) throw NumericError("resize_bilinear: output side too small");
    if (out_side == S) return hw;
    Tensor out = Tensor::zeros({out_side, out_side});
    double ratio = static_cast<double>(S) / static_cast<double>(out_side);
    for (int64_t y = 0; y < out_side; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * ratio - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(S - 1));
        int64_t y0 = static_cast<int64_t>(sy);
        int64_t y1 = std::min(y0 + 1, S - 1);
        double fy = sy - static_cast<double>(y0);
        for (int64_t x = 0; x < out_side; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * ratio - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(S - 1));
            int64_t x0 = static_cast<int64_t>(sx);
            int64_t x1 = std::min(x0 + 1, S - 1);
            double fx = sx - static_cast<double>(x0);
            double top = hw.at2(y0, x0) * (1.0 - fx) + hw.at2(y0, x1) * fx;
            double bot = hw.at2(y1, x0) * (1.0 - fx) + hw.at2(y1, x1) * fx;
            out.at2(y, x) = top * (1.0 - fy) + bot * fy;
        }
    }
    return out;
}

WeakAug sample_weak(Rng& rng, bool with_scales) {
    WeakAug a;
    a.hflip = rng.bernoulli(0.5);
    a.vflip = rng.bernoulli(0.5);
    a.rot = static_cast<int>(rng.uniform_int(0, 3));
    if (with_scales) {
        static const double kScales[3] = {0.5, 1.0, 2.0};
        a.scale = kScales[rng.uniform_int(0, 2)];
    }
    return a;
}

StrongAug sample_strong(Rng& rng, const WeakAug& base) {
    StrongAug s;
    s.base = base;
    s.brightness = rng.uniform(-0.2, 0.2);
    s.contrast = rng.uniform(0.7, 1.3);
    s.noise_sigma = rng.uniform(0.0, 0.1);
    s.noise_seed = rng.next_u64();
    s.has_cutout = rng.bernoulli(0.5);
    if (s.has_cutout) {
        s.cut_frac = rng.uniform(0.05, 0.25);
        s.cut_cy = rng.uniform();
        s.cut_cx = rng.uniform();
    }
    return s;
}

Tensor apply(const WeakAug& a, const Tensor& hw) {
    require_square(hw, "apply");
    Tensor t = hw;
    if (a.hflip) t = flip_h(t);
    if (a.vflip) t = flip_v(t);
    if (a.rot) t = rot_ccw(t, a.rot);
    if (a.scale != 1.0) {
        int64_t side = t.dims[0];
        if (a.scale == 0.5 && side % 2 != 0)
            throw NumericError("apply: 0.5 scale needs an even side");
        t = resize_bilinear(t, scaled_side(side, a.scale));
    }
    return t;
}

Tensor invert_to_reference(const WeakAug& a, const Tensor& hw) {
    require_square(hw, "invert_to_reference");
    Tensor t = hw;
    if (a.scale != 1.0) {
        int64_t ref_side = scaled_side(t.dims[0], 1.0 / a.scale);
        t = resize_bilinear(t, ref_side);
    }
    if (a.rot) t = rot_ccw(t, 4 - a.rot);
    if (a.vflip) t = flip_v(t);
    if (a.hflip) t = flip_h(t);
    return t;
}

Tensor apply_strong(const StrongAug& a, const Tensor& hw) {
    Tensor t = apply(a.base, hw);
    int64_t S = t.dims[0];
    for (double& v : t.data) v = 0.5 + a.contrast * (v - 0.5) + a.brightness;
    if (a.noise_sigma > 0.0) {
        Rng noise(a.noise_seed);
        for (double& v : t.data) v += a.noise_sigma * noise.normal();
    }
    for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
    if (a.has_cutout) {
        int64_t side = std::max<int64_t>(1, static_cast<int64_t>(a.cut_frac * static_cast<double>(S)));
        int64_t cy = static_cast<int64_t>(a.cut_cy * static_cast<double>(S - 1));
        int64_t cx = static_cast<int64_t>(a.cut_cx * static_cast<double>(S - 1));
        int64_t y0 = std::clamp<int64_t>(cy - side / 2, 0, S - 1);
        int64_t x0 = std::clamp<int64_t>(cx - side / 2, 0, S - 1);
        int64_t y1 = std::min(y0 + side, S);
        int64_t x1 = std::min(x0 + side, S);
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) t.at2(y, x) = 0.5;
    }
    return t;
}

Tensor warp_annotation(const WeakAug& a, const Tensor& ann_hw) {
    require_square(ann_hw, "warp_annotation");
    Tensor t = ann_hw;
    if (a.hflip) t = flip_h(t);
    if (a.vflip) t = flip_v(t);
    if (a.rot) t = rot_ccw(t, a.rot);
    if (a.scale != 1.0) {
        int64_t S = t.dims[0];
        int64_t out_side = scaled_side(S, a.scale);
        Tensor out = Tensor::zeros({out_side, out_side});
        for (int64_t y = 0; y < S; ++y) {
            for (int64_t x = 0; x < S; ++x) {
                double v = t.at2(y, x);
                if (v == 0.0) continue;
                int64_t oy = std::clamp<int64_t>(
                    static_cast<int64_t>((static_cast<double>(y) + 0.5) * a.scale), 0, out_side - 1);
                int64_t ox = std::clamp<int64_t>(
                    static_cast<int64_t>((static_cast<double>(x) + 0.5) * a.scale), 0, out_side - 1);
                out.at2(oy, ox) = v;
            }
        }
        t = std::move(out);
    }
    return t;
}

} // namespace scaler
