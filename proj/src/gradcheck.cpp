#include "scaler/gradcheck.hpp"

#include <cmath>

#include "scaler/error.hpp"

namespace scaler {

namespace {
constexpr double kDenomFloor = 1e-3;
}

GradCheckReport finite_diff_check(const CompGraph& g, const Bindings& inputs, ParamSet& params,
                                  NodeId loss, double tolerance, double h) {
    if (params.total_elements() > 10000)
        throw NumericError("finite_diff_check: parameter set too large (" +
                           std::to_string(params.total_elements()) + " > 10000 elements)");

    // Analytic gradients into a scratch copy so the caller's accumulators
    // stay untouched.
    ParamSet scratch = params;
    scratch.zero_grads();
    backprop(g, inputs, scratch, loss);

    auto loss_value = [&]() {
        Evaluation ev = evaluate(g, inputs, scratch);
        return ev.value(loss).data[0];
    };

    GradCheckReport report;
    for (const auto& name : scratch.names()) {
        ParamEntry& e = scratch.at(name);
        GradCheckEntry entry;
        entry.param = name;
        for (size_t i = 0; i < e.value.data.size(); ++i) {
            double saved = e.value.data[i];
            e.value.data[i] = saved + h;
            double up = loss_value();
            e.value.data[i] = saved - h;
            double down = loss_value();
            e.value.data[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = e.grad.data[i];
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), kDenomFloor});
            double rel = std::fabs(analytic - numeric) / denom;
            if (rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = static_cast<int64_t>(i);
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        entry.pass = entry.max_rel_error <= tolerance;
        if (!entry.pass) {
            report.pass = false;
            report.flagged.push_back(name);
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace scaler
