#pragma once

#include <cstdint>

#include "scaler/rng.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

// Spatial transform applied in a fixed order: hflip, vflip, rotate CCW by
// quarter turns, then scale. Inputs must be square; scale resizes by
// bilinear interpolation (probabilities stay smooth), flips/rotations are
// exact index permutations. invert_to_reference applies the reverse chain,
// so invert(apply(x)) == x exactly whenever scale == 1.
struct WeakAug {
    bool hflip = false;
    bool vflip = false;
    int rot = 0;        // 0..3 quarter turns CCW
    double scale = 1.0; // one of 0.5, 1.0, 2.0
};

// Shares the base geometry (so weak/strong predictions of one sample stay
// pixel-aligned) and only perturbs values: contrast about 0.5, brightness,
// seeded gaussian noise, clamp to [0,1], then an optional square cutout
// filled with 0.5. The noise field is regenerated from noise_seed at apply
// time, so applying the same StrongAug twice gives identical pixels.
struct StrongAug {
    WeakAug base;
    double brightness = 0.0; // additive, in [-0.2, 0.2]
    double contrast = 1.0;   // gain about 0.5, in [0.7, 1.3]
    double noise_sigma = 0.0; // in [0, 0.1]
    uint64_t noise_seed = 0;
    bool has_cutout = false;
    double cut_cy = 0.0, cut_cx = 0.0; // center as fraction of the side
    double cut_frac = 0.0;             // side as fraction of H, <= 1/4
};

struct AugPolicy {
    int k = 12;              // ensemble size for pseudo-label fusion
    bool with_scales = true; // scale draws can be disabled (exactness tests)
    uint64_t seed = 0;
};

WeakAug sample_weak(Rng& rng, bool with_scales = true);
StrongAug sample_strong(Rng& rng, const WeakAug& base);

// Probability masks and images, rank-2 (H,W), square.
Tensor apply(const WeakAug& a, const Tensor& hw);
Tensor invert_to_reference(const WeakAug& a, const Tensor& hw);
Tensor apply_strong(const StrongAug& a, const Tensor& hw);

// Ternary annotation maps (+1 fg, -1 bg, 0 unknown). Flips/rotations permute
// exactly; scaling forward-splats each labeled pixel onto its nearest target
// cell, so labels are never interpolated into existence and a downscale
// cannot drop every label.
Tensor warp_annotation(const WeakAug& a, const Tensor& ann_hw);

// Shared helper (also used by synthetic data generation): bilinear resize of
// a square rank-2 tensor to side `out_side`.
Tensor resize_bilinear(const Tensor& hw, int64_t out_side);

} // namespace scaler
