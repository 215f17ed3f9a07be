#include "scaler/pseudolabel.hpp"

#include <cmath>

#include "scaler/error.hpp"
#include "scaler/graph.hpp"

namespace scaler {

namespace {

void require_hw(const Tensor& t, const char* what) {
  if (t.dims.size() != 2) throw NumericError(std::string(what) + " must be rank-2, got " + t.shape_str());
}

} // namespace

double entropy(const Tensor& mask_hw) {
  require_hw(mask_hw, "entropy input");
  double acc = 0.0;
  for (double p : mask_hw.data) {
    const double q = 1.0 - p;
    const double lp = std::log2(p < kLogClampFloor ? kLogClampFloor : p);
    const double lq = std::log2(q < kLogClampFloor ? kLogClampFloor : q);
    acc += -(p * lp + q * lq);
  }
  return acc / static_cast<double>(mask_hw.numel());
}

Tensor uncertainty(const Tensor& mask_hw) {
  require_hw(mask_hw, "uncertainty input");
  Tensor out = mask_hw;
  for (double& v : out.data) {
    const double d = 2.0 * v - 1.0;
    v = d * d;
  }
  return out;
}

Tensor trust_mask(const Tensor& mask_hw, double lo, double hi) {
  require_hw(mask_hw, "trust_mask input");
  if (!(lo <= hi)) throw NumericError("trust_mask band is inverted");
  Tensor out = mask_hw;
  for (double& v : out.data) v = (v >= lo && v <= hi) ? 0.0 : 1.0;
  return out;
}

Tensor consensus(const Tensor& a_hw, const Tensor& b_hw) {
  require_hw(a_hw, "consensus input");
  if (!a_hw.same_shape(b_hw))
    throw NumericError("consensus shape mismatch " + a_hw.shape_str() + " vs " + b_hw.shape_str());
  Tensor out = a_hw;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (a_hw.data[i] + b_hw.data[i]) / 2.0;
  return out;
}

Tensor teacher_pseudo(const ParamSet& teacher, const SegmenterArch& arch, const Tensor& image_hw,
                      const WeakAug& weak) {
  require_hw(image_hw, "teacher_pseudo image");
  const Tensor aug = apply(weak, image_hw);
  const Tensor pred = teacher_forward(aug, teacher, arch);
  return invert_to_reference(weak, pred);
}

Tensor ensemble_fuse(const GeneralistFn& fn, const Tensor& image_hw, const Tensor* prompt_hw,
                     const AugPolicy& policy) {
  require_hw(image_hw, "ensemble_fuse image");
  if (policy.k < 1) throw NumericError("ensemble_fuse needs at least one variant");
  if (prompt_hw != nullptr) require_hw(*prompt_hw, "ensemble_fuse prompt");

  Rng rng(policy.seed);
  Tensor acc = Tensor::zeros(image_hw.dims);
  for (int k = 0; k < policy.k; ++k) {
    const WeakAug aug = sample_weak(rng, policy.with_scales);
    const Tensor img_aug = apply(aug, image_hw);
    Tensor prompt_aug;
    const Tensor* prompt_ptr = nullptr;
    if (prompt_hw != nullptr) {
      prompt_aug = warp_annotation(aug, *prompt_hw);
      prompt_ptr = &prompt_aug;
    }
    Tensor out = fn(img_aug, prompt_ptr);
    if (!out.same_shape(img_aug))
      throw NumericError("ensemble_fuse: variant output " + out.shape_str() +
                         " does not match its view " + img_aug.shape_str());
    const Tensor back = invert_to_reference(aug, out);
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += back.data[i];
  }
  const double inv = 1.0 / static_cast<double>(policy.k);
  for (double& v : acc.data) v *= inv;
  return acc;
}

Tensor ensemble_fuse(const ParamSet& generalist, const SegmenterArch& arch, const Tensor& image_hw,
                     const Tensor* prompt_hw, const AugPolicy& policy) {
  GeneralistFn fn = [&](const Tensor& img_aug, const Tensor* prompt_aug) {
    return generalist_forward(img_aug, prompt_aug, generalist, arch);
  };
  return ensemble_fuse(fn, image_hw, prompt_hw, policy);
}

} // namespace scaler
