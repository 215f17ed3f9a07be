#include "scaler/tensor.hpp"

#include <cmath>
#include <sstream>

#include "scaler/error.hpp"

namespace scaler {

int64_t numel_of(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int64_t> d, std::vector<double> v)
    : dims(std::move(d)), data(std::move(v)) {}

Tensor Tensor::zeros(std::vector<int64_t> dims) {
    int64_t n = numel_of(dims);
    return Tensor(std::move(dims), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> dims, double value) {
    int64_t n = numel_of(dims);
    return Tensor(std::move(dims), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) {
    return Tensor({}, {value});
}

Tensor Tensor::from_data(std::vector<int64_t> dims, std::vector<double> v) {
    if (dims.size() > 4)
        throw NumericError("tensor rank " + std::to_string(dims.size()) + " exceeds 4");
    for (int64_t d : dims)
        if (d <= 0) throw NumericError("tensor dim must be positive");
    if (numel_of(dims) != static_cast<int64_t>(v.size()))
        throw NumericError("tensor data length " + std::to_string(v.size()) +
                           " does not match dims");
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError("non-finite value in tensor data");
    return Tensor(std::move(dims), std::move(v));
}

int64_t Tensor::numel() const { return numel_of(dims); }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

double& Tensor::at2(int64_t y, int64_t x) {
    return data[static_cast<size_t>(y * dims[1] + x)];
}
double Tensor::at2(int64_t y, int64_t x) const {
    return data[static_cast<size_t>(y * dims[1] + x)];
}
double& Tensor::at4(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data[static_cast<size_t>(((n * dims[1] + c) * dims[2] + y) * dims[3] + x)];
}
double Tensor::at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>(((n * dims[1] + c) * dims[2] + y) * dims[3] + x)];
}

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor as_nchw(const Tensor& hw) {
    if (hw.rank() != 2) throw NumericError("as_nchw expects rank-2, got " + hw.shape_str());
    return Tensor({1, 1, hw.dims[0], hw.dims[1]}, hw.data);
}

Tensor as_hw(const Tensor& nchw) {
    if (nchw.rank() != 4 || nchw.dims[0] != 1 || nchw.dims[1] != 1)
        throw NumericError("as_hw expects [1x1xHxW], got " + nchw.shape_str());
    return Tensor({nchw.dims[2], nchw.dims[3]}, nchw.data);
}

} // namespace scaler
