#pragma once

#include <cmath>
#include <vector>

#include "scaler/graph.hpp"
#include "scaler/rng.hpp"
#include "scaler/tensor.hpp"

namespace testutil {

inline scaler::Tensor random_tensor(std::vector<int64_t> dims, scaler::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    scaler::Tensor t = scaler::Tensor::zeros(std::move(dims));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline scaler::Tensor random_mask(int64_t h, int64_t w, scaler::Rng& rng) {
    scaler::Tensor t = scaler::Tensor::zeros({h, w});
    for (double& v : t.data) v = rng.uniform();
    return t;
}

// Smooth test masks: a couple of low-frequency modes squashed into [0,1].
// Band-limited on purpose so bilinear scale round trips stay within their
// stated tolerance.
inline scaler::Tensor smooth_mask(int64_t side, scaler::Rng& rng) {
    double f1 = static_cast<double>(rng.uniform_int(1, 2));
    double f2 = static_cast<double>(rng.uniform_int(1, 2));
    double p1 = rng.uniform(0.0, 6.28);
    double p2 = rng.uniform(0.0, 6.28);
    scaler::Tensor t = scaler::Tensor::zeros({side, side});
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
            double u = static_cast<double>(y) / static_cast<double>(side);
            double v = static_cast<double>(x) / static_cast<double>(side);
            t.at2(y, x) = 0.5 + 0.15 * std::sin(6.283185 * f1 * u + p1) +
                          0.1 * std::cos(6.283185 * f2 * v + p2);
        }
    return t;
}

// Binary cross-entropy assembled from raw graph primitives. Test-side twin
// of the loss the production code builds; kept separate on purpose so the
// finite-difference checks do not depend on the module under test.
inline scaler::NodeId raw_bce(scaler::CompGraph& g, scaler::NodeId pred,
                              const scaler::Tensor& target) {
    using scaler::Tensor;
    scaler::NodeId t = g.constant(target);
    scaler::NodeId ones = g.constant(Tensor::full(target.dims, 1.0));
    scaler::NodeId one_minus_t = g.add(ones, g.scalar_mul(t, -1.0));
    scaler::NodeId one_minus_p = g.add(ones, g.scalar_mul(pred, -1.0));
    scaler::NodeId pos = g.mul(t, g.log_clamped(pred));
    scaler::NodeId neg = g.mul(one_minus_t, g.log_clamped(one_minus_p));
    return g.scalar_mul(g.mean(g.add(pos, neg)), -1.0);
}

// Two conv layers with a sigmoid head; params named conv0/conv1.
inline scaler::NodeId small_conv_net(scaler::CompGraph& g, scaler::NodeId image, int hidden) {
    scaler::NodeId h =
        g.leaky_relu(g.conv2d(image, g.param("conv0.weight"), g.param("conv0.bias")), 0.1);
    scaler::NodeId o = g.conv2d(h, g.param("conv1.weight"), g.param("conv1.bias"));
    (void)hidden;
    return g.sigmoid(o);
}

inline scaler::ParamSet small_conv_params(int hidden, scaler::Rng& rng) {
    scaler::ParamSet p;
    p.insert("conv0.weight", random_tensor({hidden, 1, 3, 3}, rng, -0.5, 0.5));
    p.insert("conv0.bias", random_tensor({hidden}, rng, -0.1, 0.1));
    p.insert("conv1.weight", random_tensor({1, hidden, 3, 3}, rng, -0.5, 0.5));
    p.insert("conv1.bias", random_tensor({1}, rng, -0.1, 0.1));
    return p;
}

} // namespace testutil
