#include "scaler/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "scaler/error.hpp"

namespace scaler {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'L', 'R', 'P', 'S', '0', '1'};

// This code assumes a little-endian host (checked once at load/save); the
// sandbox and every deployment target are LE, so no byte swapping.
bool host_is_little_endian() {
    uint16_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("param file truncated while reading ") + what);
    return v;
}

void write_record(std::ofstream& os, const std::string& name, const Tensor& t) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.dims.size()));
    for (int64_t d : t.dims) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

struct RawRecord {
    std::string name;
    Tensor tensor;
};

RawRecord read_record(std::ifstream& is) {
    uint32_t name_len = read_pod<uint32_t>(is, "name length");
    if (name_len > 4096) throw IoError("param record name length is implausible");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("param file truncated while reading name");
    uint32_t rank = read_pod<uint32_t>(is, "rank");
    if (rank > 4) throw IoError("param record rank " + std::to_string(rank) + " exceeds 4");
    std::vector<int64_t> dims;
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint64_t d = read_pod<uint64_t>(is, "dim");
        dims.push_back(static_cast<int64_t>(d));
        n *= static_cast<int64_t>(d);
    }
    if (n < 0 || n > (1ll << 32)) throw IoError("param record size is implausible");
    std::vector<double> data(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw IoError("param file truncated while reading data for " + name);
    return RawRecord{std::move(name), Tensor(std::move(dims), std::move(data))};
}

bool has_suffix(const std::string& s, const std::string& suffix, std::string* stem) {
    if (s.size() <= suffix.size() || s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0)
        return false;
    *stem = s.substr(0, s.size() - suffix.size());
    return true;
}

} // namespace

void ParamSet::insert(const std::string& name, Tensor value) {
    if (contains(name)) throw NumericError("duplicate parameter name: " + name);
    ParamEntry e;
    e.grad = Tensor::zeros(value.dims);
    e.adam_m = Tensor::zeros(value.dims);
    e.adam_v = Tensor::zeros(value.dims);
    e.value = std::move(value);
    order_.push_back(name);
    entries_.emplace(name, std::move(e));
}

bool ParamSet::contains(const std::string& name) const {
    return entries_.count(name) != 0;
}

ParamEntry& ParamSet::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NumericError("unknown parameter: " + name);
    return it->second;
}

const ParamEntry& ParamSet::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NumericError("unknown parameter: " + name);
    return it->second;
}

int64_t ParamSet::total_elements() const {
    int64_t n = 0;
    for (const auto& name : order_) n += at(name).value.numel();
    return n;
}

void ParamSet::zero_grads() {
    for (const auto& name : order_) {
        Tensor& g = at(name).grad;
        std::fill(g.data.begin(), g.data.end(), 0.0);
    }
}

uint64_t ParamSet::content_hash() const {
    uint64_t h = 0xCBF29CE484222325ull;
    auto feed = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001B3ull;
        }
    };
    for (const auto& name : order_) {
        feed(name.data(), name.size());
        const Tensor& v = at(name).value;
        feed(v.data.data(), v.data.size() * sizeof(double));
    }
    return h;
}

void ParamSet::save(const std::filesystem::path& file) const {
    if (!host_is_little_endian()) throw IoError("param files require a little-endian host");
    std::ofstream os(file, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + file.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint64_t>(os, static_cast<uint64_t>(order_.size()) * 4);
    for (const auto& name : order_) {
        const ParamEntry& e = at(name);
        write_record(os, name, e.value);
        write_record(os, name + ".adam_m", e.adam_m);
        write_record(os, name + ".adam_v", e.adam_v);
        write_record(os, name + ".adam_t", Tensor::scalar(static_cast<double>(e.adam_t)));
    }
    if (!os) throw IoError("write failed: " + file.string());
}

ParamSet ParamSet::load(const std::filesystem::path& file) {
    if (!host_is_little_endian()) throw IoError("param files require a little-endian host");
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("cannot open: " + file.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is) throw IoError("param file truncated while reading magic: " + file.string());
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ArtifactError("bad magic in param file: " + file.string());
    uint64_t count = read_pod<uint64_t>(is, "record count");

    ParamSet out;
    for (uint64_t i = 0; i < count; ++i) {
        RawRecord rec = read_record(is);
        std::string stem;
        if (has_suffix(rec.name, ".adam_m", &stem)) {
            out.at(stem).adam_m = std::move(rec.tensor);
        } else if (has_suffix(rec.name, ".adam_v", &stem)) {
            out.at(stem).adam_v = std::move(rec.tensor);
        } else if (has_suffix(rec.name, ".adam_t", &stem)) {
            out.at(stem).adam_t = static_cast<int64_t>(rec.tensor.data.at(0));
        } else {
            out.insert(rec.name, std::move(rec.tensor));
        }
    }
    for (const auto& name : out.order_) {
        const ParamEntry& e = out.at(name);
        if (!e.value.same_shape(e.adam_m) || !e.value.same_shape(e.adam_v))
            throw ArtifactError("optimizer state shape mismatch for " + name);
    }
    return out;
}

void adam_step(ParamSet& params, const AdamConfig& cfg) {
    if (cfg.lr <= 0.0) throw NumericError("adam_step: learning rate must be positive");
    for (const auto& name : params.names()) {
        ParamEntry& e = params.at(name);
        e.adam_t += 1;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.adam_t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.adam_t));
        double* th = e.value.data.data();
        double* m = e.adam_m.data.data();
        double* v = e.adam_v.data.data();
        const double* g = e.grad.data.data();
        size_t n = e.value.data.size();
        for (size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            th[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

} // namespace scaler
