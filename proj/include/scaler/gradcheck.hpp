#pragma once

#include <string>
#include <vector>

#include "scaler/graph.hpp"

namespace scaler {

struct GradCheckEntry {
    std::string param;
    double max_rel_error = 0.0;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool pass = true;
    std::vector<std::string> flagged;
};

// Central differences (default h = 1e-5) against a fresh backprop of `loss`.
// Relative error uses a small floor in the denominator so true-zero gradients
// are not failed on O(eps/h) finite-difference noise; any gradient that is
// wrong by a multiplicative factor still lands far above tolerance.
// The caller's gradient accumulators are left untouched. Refuses parameter
// sets above 10k elements (this is a verification tool, not a profiler).
GradCheckReport finite_diff_check(const CompGraph& g, const Bindings& inputs, ParamSet& params,
                                  NodeId loss, double tolerance, double h = 1e-5);

} // namespace scaler
