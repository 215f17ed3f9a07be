#include "scaler/losses.hpp"

#include <cmath>

#include "scaler/error.hpp"
#include "scaler/pseudolabel.hpp"

namespace scaler {

namespace {

void require_hw(const Tensor& t, const char* what) {
  if (t.dims.size() != 2) throw NumericError(std::string(what) + " must be rank-2, got " + t.shape_str());
}

Tensor lift(const Tensor& hw) { return as_nchw(hw); }

// w * ce as graph nodes; `weights` may be null. Returns the per-pixel node,
// callers reduce it.
NodeId weighted_ce(CompGraph& g, NodeId pred, const Tensor& target_hw, const Tensor* weights_hw) {
  const Tensor t4 = lift(target_hw);
  Tensor one_minus_t = t4;
  for (double& v : one_minus_t.data) v = 1.0 - v;

  NodeId t = g.constant(t4);
  NodeId omt = g.constant(one_minus_t);
  NodeId ones = g.constant(Tensor::full(t4.dims, 1.0));
  NodeId one_minus_p = g.add(ones, g.scalar_mul(pred, -1.0));
  NodeId pos = g.mul(t, g.log_clamped(pred));
  NodeId neg = g.mul(omt, g.log_clamped(one_minus_p));
  NodeId ce = g.scalar_mul(g.add(pos, neg), -1.0);
  if (weights_hw != nullptr) ce = g.mul(ce, g.constant(lift(*weights_hw)));
  return ce;
}

Tensor ones_like(const Tensor& hw) { return Tensor::full(hw.dims, 1.0); }

// Shared body of the refined losses: optional extra per-pixel weight folded
// into the uncertainty weights, optional (1 - E) scalar factor.
NodeId refine_weighted(CompGraph& g, const Tensor& pl_hw, NodeId pred, const LossOptions& opts,
                       const Tensor* extra_weight_hw) {
  const Tensor* weights = nullptr;
  Tensor w;
  if (opts.use_uncertainty_weight) {
    w = uncertainty(pl_hw);
    if (extra_weight_hw != nullptr)
      for (size_t i = 0; i < w.data.size(); ++i) w.data[i] *= extra_weight_hw->data[i];
    weights = &w;
  } else if (extra_weight_hw != nullptr) {
    w = *extra_weight_hw;
    weights = &w;
  }
  NodeId inner = g.add(bce_loss(g, pred, pl_hw, weights),
                       soft_iou_loss(g, pred, pl_hw, weights, opts.iou_smoothing));
  if (!opts.use_entropy_weight) return inner;
  return g.scalar_mul(inner, 1.0 - entropy(pl_hw));
}

void append_supervision(CompGraph& g, NodeId pred, const Tensor* annotation_hw,
                        const Tensor* dense_label_hw, const LossOptions& opts, TermList& terms) {
  if (annotation_hw != nullptr && dense_label_hw != nullptr)
    throw NumericError("a sample cannot carry both sparse and dense supervision");
  if (annotation_hw != nullptr)
    terms.emplace_back("partial_ce", partial_ce_loss(g, pred, *annotation_hw));
  if (dense_label_hw != nullptr) {
    terms.emplace_back("supervised_bce", bce_loss(g, pred, *dense_label_hw));
    terms.emplace_back("supervised_iou",
                       soft_iou_loss(g, pred, *dense_label_hw, nullptr, opts.iou_smoothing));
  }
}

NodeId sum_terms(CompGraph& g, const TermList& terms) {
  if (terms.empty()) throw NumericError("loss has no terms");
  NodeId acc = terms[0].second;
  for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i].second);
  return acc;
}

} // namespace

const char* branch_name(RefineBranch b) {
  switch (b) {
    case RefineBranch::Hard: return "hard";
    case RefineBranch::Easy: return "easy";
    case RefineBranch::Normal: return "normal";
  }
  return "?";
}

RefineBranch branch_for(double pl_entropy, double pred_entropy, const RefineThresholds& thr) {
  if (pl_entropy >= thr.hard_entropy) return RefineBranch::Hard;
  if (pred_entropy <= thr.easy_entropy) return RefineBranch::Easy;
  return RefineBranch::Normal;
}

NodeId bce_loss(CompGraph& g, NodeId pred, const Tensor& target_hw, const Tensor* weights_hw) {
  require_hw(target_hw, "bce target");
  if (weights_hw != nullptr && !weights_hw->same_shape(target_hw))
    throw NumericError("bce weights " + weights_hw->shape_str() + " do not match target " +
                       target_hw.shape_str());
  return g.mean(weighted_ce(g, pred, target_hw, weights_hw));
}

NodeId soft_iou_loss(CompGraph& g, NodeId pred, const Tensor& target_hw, const Tensor* weights_hw,
                     double smoothing) {
  require_hw(target_hw, "iou target");
  if (weights_hw != nullptr && !weights_hw->same_shape(target_hw))
    throw NumericError("iou weights " + weights_hw->shape_str() + " do not match target " +
                       target_hw.shape_str());
  if (!(smoothing > 0.0)) throw NumericError("iou smoothing must be positive");

  Tensor w_own;
  const Tensor* w_src = weights_hw;
  if (w_src == nullptr) {
    w_own = ones_like(target_hw);
    w_src = &w_own;
  }
  const Tensor& w = *w_src;
  Tensor wt = w; // w * t, constant
  double wt_sum = 0.0;
  for (size_t i = 0; i < wt.data.size(); ++i) {
    wt.data[i] *= target_hw.data[i];
    wt_sum += wt.data[i];
  }

  // I = sum(p * w * t); U = sum(w*p) + sum(w*t) - I. Constants are folded so
  // a binary perfect match cancels exactly: num == den bit for bit.
  NodeId inter = g.sum(g.mul(pred, g.constant(lift(wt))));
  NodeId wp = g.sum(g.mul(pred, g.constant(lift(w))));
  NodeId num = g.add(inter, g.constant(Tensor::scalar(smoothing)));
  NodeId den = g.add(g.add(wp, g.constant(Tensor::scalar(wt_sum + smoothing))),
                     g.scalar_mul(inter, -1.0));
  NodeId ratio = g.div(num, den);
  return g.add(g.constant(Tensor::scalar(1.0)), g.scalar_mul(ratio, -1.0));
}

NodeId partial_ce_loss(CompGraph& g, NodeId pred, const Tensor& annotation_hw) {
  require_hw(annotation_hw, "annotation");
  Tensor target = annotation_hw;
  Tensor weights = annotation_hw;
  int64_t labeled = 0;
  for (size_t i = 0; i < annotation_hw.data.size(); ++i) {
    const double a = annotation_hw.data[i];
    if (a != 0.0 && a != 1.0 && a != -1.0)
      throw NumericError("annotation values must be -1, 0, or +1");
    target.data[i] = (a == 1.0) ? 1.0 : 0.0;
    weights.data[i] = (a == 0.0) ? 0.0 : 1.0;
    if (a != 0.0) ++labeled;
  }
  if (labeled == 0) throw NumericError("partial cross-entropy needs at least one labeled pixel");
  NodeId ce = weighted_ce(g, pred, target, &weights);
  return g.scalar_mul(g.sum(ce), 1.0 / static_cast<double>(labeled));
}

NodeId refine_basic(CompGraph& g, const Tensor& pl_hw, NodeId pred, const LossOptions& opts) {
  require_hw(pl_hw, "refined-loss target");
  return refine_weighted(g, pl_hw, pred, opts, nullptr);
}

RefineResult refine_piecewise(CompGraph& g, const Tensor& pl_hw, NodeId pred_weak,
                              const Tensor& pred_weak_value_hw, std::optional<NodeId> pred_strong,
                              const LossOptions& opts, const Tensor* trust_source_hw) {
  require_hw(pl_hw, "refined-loss target");
  require_hw(pred_weak_value_hw, "weak prediction value");

  RefineResult r;
  r.branch = branch_for(entropy(pl_hw), entropy(pred_weak_value_hw), opts.thresholds);
  switch (r.branch) {
    case RefineBranch::Hard: {
      const Tensor& src = trust_source_hw != nullptr ? *trust_source_hw : pl_hw;
      if (!src.same_shape(pl_hw))
        throw NumericError("trust source " + src.shape_str() + " does not match target " +
                           pl_hw.shape_str());
      Tensor trust = trust_mask(src, opts.thresholds.trust_lo, opts.thresholds.trust_hi);
      r.node = refine_weighted(g, pl_hw, pred_weak, opts, &trust);
      break;
    }
    case RefineBranch::Easy: {
      if (!pred_strong.has_value())
        throw NumericError("easy case needs a strong-view prediction node");
      NodeId a = refine_weighted(g, pl_hw, pred_weak, opts, nullptr);
      NodeId b = refine_weighted(g, pl_hw, *pred_strong, opts, nullptr);
      r.node = g.add(a, b);
      break;
    }
    case RefineBranch::Normal: r.node = refine_weighted(g, pl_hw, pred_weak, opts, nullptr); break;
  }
  return r;
}

NodeId aug_invariance_loss(CompGraph& g, NodeId pred_strong, const Tensor& weak_value_hw,
                           const LossOptions& opts) {
  require_hw(weak_value_hw, "invariance target");
  return g.add(bce_loss(g, pred_strong, weak_value_hw),
               soft_iou_loss(g, pred_strong, weak_value_hw, nullptr, opts.iou_smoothing));
}

NodeId noise_resistance_loss(CompGraph& g, NodeId pred, const Tensor& consensus_hw,
                             const LossOptions& opts) {
  require_hw(consensus_hw, "consensus target");
  const Tensor* weights = nullptr;
  Tensor u;
  if (opts.use_uncertainty_weight) {
    u = uncertainty(consensus_hw);
    weights = &u;
  }
  return g.add(bce_loss(g, pred, consensus_hw, weights),
               soft_iou_loss(g, pred, consensus_hw, weights, opts.iou_smoothing));
}

Phase1Build phase1_loss(CompGraph& g, NodeId pred_weak, const Tensor& pred_weak_value_hw,
                        std::optional<NodeId> pred_strong, const Tensor& pl_teacher_hw,
                        const Tensor* pl_fused_hw, const Tensor* annotation_hw,
                        const Tensor* dense_label_hw, const LossOptions& opts) {
  Phase1Build out;
  const Tensor* trust_src =
      (opts.trust_from_fused && pl_fused_hw != nullptr) ? pl_fused_hw : nullptr;

  RefineResult rt =
      refine_piecewise(g, pl_teacher_hw, pred_weak, pred_weak_value_hw, pred_strong, opts, trust_src);
  out.branch_teacher = rt.branch;
  out.terms.emplace_back("refine_teacher", rt.node);

  if (pl_fused_hw != nullptr) {
    RefineResult rf = refine_piecewise(g, *pl_fused_hw, pred_weak, pred_weak_value_hw, pred_strong,
                                       opts, trust_src);
    out.branch_fused = rf.branch;
    out.terms.emplace_back("refine_fused", rf.node);
  }

  append_supervision(g, pred_weak, annotation_hw, dense_label_hw, opts, out.terms);
  out.total = sum_terms(g, out.terms);
  g.mark_output("loss", out.total);
  return out;
}

Phase2Build phase2_loss(CompGraph& g, NodeId pred_weak, const Tensor& pred_weak_value_hw,
                        NodeId pred_strong, const Tensor& consensus_hw,
                        const Tensor* annotation_hw, const Tensor* dense_label_hw,
                        const LossOptions& opts, bool lnr_with_refine) {
  Phase2Build out;
  out.terms.emplace_back("aug_invariance", aug_invariance_loss(g, pred_strong, pred_weak_value_hw, opts));

  if (lnr_with_refine) {
    RefineResult rr =
        refine_piecewise(g, consensus_hw, pred_weak, pred_weak_value_hw, pred_strong, opts);
    out.nr_refined = true;
    out.nr_branch = rr.branch;
    out.terms.emplace_back("noise_resistance", rr.node);
  } else {
    out.terms.emplace_back("noise_resistance", noise_resistance_loss(g, pred_weak, consensus_hw, opts));
  }

  append_supervision(g, pred_weak, annotation_hw, dense_label_hw, opts, out.terms);
  out.total = sum_terms(g, out.terms);
  g.mark_output("loss", out.total);
  return out;
}

} // namespace scaler
