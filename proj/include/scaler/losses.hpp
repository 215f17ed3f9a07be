#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scaler/graph.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

// Branch thresholds for the piecewise refined loss. A pseudo-label whose
// mean entropy reaches hard_entropy is treated as unreliable (hard case); a
// confident current prediction (entropy at or below easy_entropy) upgrades
// to the two-view easy case. trust_lo/hi bound the distrusted probability
// band used by the hard case.
struct RefineThresholds {
    double hard_entropy = 0.8;
    double easy_entropy = 0.2;
    double trust_lo = 0.1;
    double trust_hi = 0.9;
};

enum class RefineBranch { Hard, Easy, Normal };
const char* branch_name(RefineBranch b);

// Pure branch decision, hard case checked first. Exposed so callers can
// decide whether a strong-view forward is needed before building the graph.
RefineBranch branch_for(double pl_entropy, double pred_entropy, const RefineThresholds& thr);

struct LossOptions {
    bool use_entropy_weight = true;     // scalar (1 - E(target)) factor on refined losses
    bool use_uncertainty_weight = true; // per-pixel (2p-1)^2 weights from the target
    double iou_smoothing = 1.0;
    RefineThresholds thresholds;
    bool trust_from_fused = false; // hard-case trust band read off the fused
                                   // pseudo-label instead of the refined target
};

// All builders append to `g` and return the scalar loss node. Predictions
// are graph nodes shaped [1,1,H,W]; targets/weights are detached rank-2
// tensors entering as constants.

// mean(w * ce); plain mean when no weights. All-zero weights give exactly 0.
NodeId bce_loss(CompGraph& g, NodeId pred, const Tensor& target_hw,
                const Tensor* weights_hw = nullptr);

// 1 - (I+s)/(U+s) with I = sum(w*p*t), U = sum(w*(p+t-p*t)). Exactly 0 when
// the prediction equals a binary target (and when all weights are zero).
NodeId soft_iou_loss(CompGraph& g, NodeId pred, const Tensor& target_hw,
                     const Tensor* weights_hw = nullptr, double smoothing = 1.0);

// Cross-entropy over the labeled pixels of a ternary annotation (+1 fg,
// -1 bg, 0 unlabeled), normalized by the labeled count. Unlabeled pixels
// contribute exactly nothing. Throws if no pixel is labeled.
NodeId partial_ce_loss(CompGraph& g, NodeId pred, const Tensor& annotation_hw);

// (1 - E(pl)) * [bce(pred, pl, U(pl)) + iou(pred, pl, U(pl))], the
// entropy/uncertainty weighted consistency term. Option flags drop either
// weighting.
NodeId refine_basic(CompGraph& g, const Tensor& pl_hw, NodeId pred, const LossOptions& opts);

struct RefineResult {
    NodeId node = -1;
    RefineBranch branch = RefineBranch::Normal;
};

// Piecewise refined loss. Hard case: trust-band weights multiply in (band
// read off `pl`, or `trust_source_hw` when given). Easy case: the basic term
// is charged against both the weak and the strong view, so `pred_strong`
// must be present whenever branch_for says Easy. Normal case: refine_basic.
RefineResult refine_piecewise(CompGraph& g, const Tensor& pl_hw, NodeId pred_weak,
                              const Tensor& pred_weak_value_hw, std::optional<NodeId> pred_strong,
                              const LossOptions& opts, const Tensor* trust_source_hw = nullptr);

// Strong view learns to match the detached weak view prediction.
NodeId aug_invariance_loss(CompGraph& g, NodeId pred_strong, const Tensor& weak_value_hw,
                           const LossOptions& opts);

// Uncertainty-weighted consistency against the student/teacher consensus
// mask; unlike the refined losses there is no (1 - E) factor, so a fully
// ambiguous consensus still zeroes it through the weights alone.
NodeId noise_resistance_loss(CompGraph& g, NodeId pred, const Tensor& consensus_hw,
                             const LossOptions& opts);

// Named scalar terms plus their sum; the evaluation step reads reports off
// the term ids.
using TermList = std::vector<std::pair<std::string, NodeId>>;

struct Phase1Build {
    NodeId total = -1;
    RefineBranch branch_teacher = RefineBranch::Normal;
    RefineBranch branch_fused = RefineBranch::Normal;
    TermList terms;
};

// Segmenter-phase loss: refined terms against the teacher pseudo-label and
// (when present) the fused one, plus whichever supervision the sample
// carries. `annotation_hw` (sparse) and `dense_label_hw` are mutually
// exclusive; pass neither for an unlabeled sample. All target tensors must
// already live in the prediction's augmented frame.
Phase1Build phase1_loss(CompGraph& g, NodeId pred_weak, const Tensor& pred_weak_value_hw,
                        std::optional<NodeId> pred_strong, const Tensor& pl_teacher_hw,
                        const Tensor* pl_fused_hw, const Tensor* annotation_hw,
                        const Tensor* dense_label_hw, const LossOptions& opts);

struct Phase2Build {
    NodeId total = -1;
    RefineBranch nr_branch = RefineBranch::Normal; // meaningful when nr_refined
    bool nr_refined = false;
    TermList terms;
};

// Generalist-phase loss: augmentation invariance (strong view vs detached
// weak view) plus noise resistance against the consensus mask, plus the
// sample's supervision. `lnr_with_refine` swaps the noise-resistance term
// for the piecewise refined loss (ablation axis).
Phase2Build phase2_loss(CompGraph& g, NodeId pred_weak, const Tensor& pred_weak_value_hw,
                        NodeId pred_strong, const Tensor& consensus_hw,
                        const Tensor* annotation_hw, const Tensor* dense_label_hw,
                        const LossOptions& opts, bool lnr_with_refine = false);

} // namespace scaler
