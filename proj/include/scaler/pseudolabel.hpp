#pragma once

#include <functional>

#include "scaler/augment.hpp"
#include "scaler/models.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

// Everything here returns plain tensors, detached by construction: supervision
// targets enter loss graphs as constants, so no gradient can reach a
// pseudo-label producer.

// Mean per-pixel binary entropy in bits (log base 2, floors at the global
// log clamp). 1.0 for an all-0.5 mask, 0.0 for any binary mask.
double entropy(const Tensor& mask_hw);

// Per-pixel confidence weight (2p-1)^2: 0 at p=0.5, 1 at p in {0,1}.
Tensor uncertainty(const Tensor& mask_hw);

// Binary trust: 0 where p lies inside [lo, hi] (both ends closed, i.e. the
// ambiguous band is distrusted), 1 outside.
Tensor trust_mask(const Tensor& mask_hw, double lo = 0.1, double hi = 0.9);

// Elementwise average of two prediction masks.
Tensor consensus(const Tensor& a_hw, const Tensor& b_hw);

// Teacher prediction under a weak augmentation, inverted back to the
// reference frame. No gradient state is touched.
Tensor teacher_pseudo(const ParamSet& teacher, const SegmenterArch& arch, const Tensor& image_hw,
                      const WeakAug& weak);

// Forward function the fusion drives: image (already augmented) plus an
// optional prompt warped into the same frame. Injectable so oracles can
// stand in for the real model.
using GeneralistFn = std::function<Tensor(const Tensor& image_aug_hw, const Tensor* prompt_aug_hw)>;

// Draws policy.k weak augmentations from policy.seed, runs `fn` on each
// warped view, inverts every output to the reference frame and averages.
Tensor ensemble_fuse(const GeneralistFn& fn, const Tensor& image_hw, const Tensor* prompt_hw,
                     const AugPolicy& policy);

// Production wrapper over the promptable model.
Tensor ensemble_fuse(const ParamSet& generalist, const SegmenterArch& arch, const Tensor& image_hw,
                     const Tensor* prompt_hw, const AugPolicy& policy);

} // namespace scaler
