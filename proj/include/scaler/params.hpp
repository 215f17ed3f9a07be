#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "scaler/tensor.hpp"

namespace scaler {

// One learnable tensor plus its gradient accumulator and Adam state.
// Gradients accumulate across backprop calls until zero_grads().
struct ParamEntry {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    int64_t adam_t = 0;
};

class ParamSet {
public:
    void insert(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;
    // Insertion order; serialization and optimizer sweeps follow it.
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }
    int64_t total_elements() const;

    void zero_grads();
    // FNV-1a over names and value bytes; used to assert a model was untouched.
    uint64_t content_hash() const;

    // Binary format, little-endian: magic "SCLRPS01", u64 record count, then
    // records of (u32 name length, name bytes, u32 rank, u64 dims[],
    // f64 data[]). Adam state rides along as extra records named
    // "<param>.adam_m" / ".adam_v" / ".adam_t" so a round-trip is bit-exact
    // including optimizer state (required for resume).
    void save(const std::filesystem::path& file) const;
    static ParamSet load(const std::filesystem::path& file);

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, ParamEntry> entries_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// One bias-corrected Adam update over every entry, driven by the accumulated
// gradients. Does not clear them; callers pair this with zero_grads().
void adam_step(ParamSet& params, const AdamConfig& cfg);

} // namespace scaler
