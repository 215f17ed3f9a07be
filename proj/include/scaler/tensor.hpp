#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scaler {

// Dense row-major tensor of doubles, rank 0..4. Rank-4 is laid out N,C,H,W.
// Masks and images move around as rank-2 (H,W); model code lifts them to
// rank-4 views when needed (same data, different dims).
struct Tensor {
    std::vector<int64_t> dims;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> d, std::vector<double> v);

    static Tensor zeros(std::vector<int64_t> dims);
    static Tensor full(std::vector<int64_t> dims, double value);
    static Tensor scalar(double value);
    // Validating entry point for external data: rejects NaN/Inf and
    // dims/data length mismatches.
    static Tensor from_data(std::vector<int64_t> dims, std::vector<double> v);

    int rank() const { return static_cast<int>(dims.size()); }
    int64_t numel() const;
    bool same_shape(const Tensor& o) const { return dims == o.dims; }
    std::string shape_str() const;

    double& at2(int64_t y, int64_t x);
    double at2(int64_t y, int64_t x) const;
    double& at4(int64_t n, int64_t c, int64_t y, int64_t x);
    double at4(int64_t n, int64_t c, int64_t y, int64_t x) const;

    bool all_finite() const;
};

int64_t numel_of(const std::vector<int64_t>& dims);

// Reshape copies between the rank-2 mask view and the rank-4 single-sample,
// single-channel view. Both require the obvious shape.
Tensor as_nchw(const Tensor& hw);
Tensor as_hw(const Tensor& nchw);

} // namespace scaler
