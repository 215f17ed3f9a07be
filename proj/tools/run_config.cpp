#include "run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "scaler/error.hpp"

namespace scaler {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw UsageError("config key '" + key + "' expects true or false, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    int64_t out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
    if (used != v.size())
        throw UsageError("config key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
    int64_t x = parse_int(key, v);
    if (x < 0) throw UsageError("config key '" + key + "' must be nonnegative");
    return static_cast<uint64_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' expects a number, got '" + v + "'");
    }
    if (used != v.size())
        throw UsageError("config key '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw UsageError("config line " + std::to_string(lineno) + ": empty key");
        if (value.empty())
            throw UsageError("config key '" + key + "' has no value");
        if (kv.count(key)) throw UsageError("duplicate config key: " + key);
        kv.emplace(std::move(key), std::move(value));
    }
    return kv;
}

RunConfig run_config_from(const std::map<std::string, std::string>& kv) {
    RunConfig rc;
    TrainConfig& t = rc.train;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"mode", [&](const std::string&, const std::string& v) { t.mode = supervision_mode_from(v); }},
        {"semi_fraction", [&](const std::string& k, const std::string& v) { t.semi_fraction = parse_double(k, v); }},
        {"batch_size", [&](const std::string& k, const std::string& v) { t.batch_size = static_cast<int>(parse_int(k, v)); }},
        {"lr", [&](const std::string& k, const std::string& v) { t.lr = parse_double(k, v); }},
        {"lr_decay_epochs", [&](const std::string& k, const std::string& v) { t.lr_decay_epochs = static_cast<int>(parse_int(k, v)); }},
        {"eta", [&](const std::string& k, const std::string& v) { t.eta = parse_double(k, v); }},
        {"stage1_epochs", [&](const std::string& k, const std::string& v) { t.stage1_epochs = static_cast<int>(parse_int(k, v)); }},
        {"stage2_epochs", [&](const std::string& k, const std::string& v) { t.stage2_epochs = static_cast<int>(parse_int(k, v)); }},
        {"stage3_alternations", [&](const std::string& k, const std::string& v) { t.stage3_alternations = static_cast<int>(parse_int(k, v)); }},
        {"aux_epochs", [&](const std::string& k, const std::string& v) { t.aux_epochs = static_cast<int>(parse_int(k, v)); }},
        {"aux_count", [&](const std::string& k, const std::string& v) { t.aux_count = static_cast<int>(parse_int(k, v)); }},
        {"fuse_k", [&](const std::string& k, const std::string& v) { t.fuse_k = static_cast<int>(parse_int(k, v)); }},
        {"fuse_with_scales", [&](const std::string& k, const std::string& v) { t.fuse_with_scales = parse_bool(k, v); }},
        {"hard_entropy", [&](const std::string& k, const std::string& v) { t.thresholds.hard_entropy = parse_double(k, v); }},
        {"easy_entropy", [&](const std::string& k, const std::string& v) { t.thresholds.easy_entropy = parse_double(k, v); }},
        {"trust_lo", [&](const std::string& k, const std::string& v) { t.thresholds.trust_lo = parse_double(k, v); }},
        {"trust_hi", [&](const std::string& k, const std::string& v) { t.thresholds.trust_hi = parse_double(k, v); }},
        {"adam_beta1", [&](const std::string& k, const std::string& v) { t.adam_beta1 = parse_double(k, v); }},
        {"adam_beta2", [&](const std::string& k, const std::string& v) { t.adam_beta2 = parse_double(k, v); }},
        {"adam_epsilon", [&](const std::string& k, const std::string& v) { t.adam_epsilon = parse_double(k, v); }},
        {"seed", [&](const std::string& k, const std::string& v) { t.seed = parse_uint(k, v); }},
        {"use_plf", [&](const std::string& k, const std::string& v) { t.use_plf = parse_bool(k, v); }},
        {"use_entropy_weight", [&](const std::string& k, const std::string& v) { t.use_entropy_weight = parse_bool(k, v); }},
        {"use_uncertainty_weight", [&](const std::string& k, const std::string& v) { t.use_uncertainty_weight = parse_bool(k, v); }},
        {"use_phase2", [&](const std::string& k, const std::string& v) { t.use_phase2 = parse_bool(k, v); }},
        {"lai_weak_weak", [&](const std::string& k, const std::string& v) { t.lai_weak_weak = parse_bool(k, v); }},
        {"lnr_with_refine", [&](const std::string& k, const std::string& v) { t.lnr_with_refine = parse_bool(k, v); }},
        {"no_stage1", [&](const std::string& k, const std::string& v) { t.no_stage1 = parse_bool(k, v); }},
        {"no_stage2", [&](const std::string& k, const std::string& v) { t.no_stage2 = parse_bool(k, v); }},
        {"trust_from_plf", [&](const std::string& k, const std::string& v) { t.trust_from_plf = parse_bool(k, v); }},
        {"check_phase_isolation", [&](const std::string& k, const std::string& v) { t.check_phase_isolation = parse_bool(k, v); }},
        {"side", [&](const std::string& k, const std::string& v) { rc.side = parse_int(k, v); }},
        {"contrast_lo", [&](const std::string& k, const std::string& v) { rc.contrast_lo = parse_double(k, v); }},
        {"contrast_hi", [&](const std::string& k, const std::string& v) { rc.contrast_hi = parse_double(k, v); }},
        {"annotation", [&](const std::string&, const std::string& v) { rc.annotation = annotation_mode_from(v); }},
        {"test_count", [&](const std::string& k, const std::string& v) { rc.test_count = parse_int(k, v); }},
    };
    for (const auto& [key, value] : kv) {
        auto it = setters.find(key);
        if (it == setters.end()) throw UsageError("unknown config key: " + key);
        it->second(key, value);
    }
    validate(rc.train);
    if (rc.test_count < 0) throw UsageError("test_count must be nonnegative");
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from(parse_kv_file(path));
}

std::string echo_run_config(const RunConfig& rc) {
    const TrainConfig& t = rc.train;
    std::ostringstream os;
    os << "# effective configuration (defaults filled in)\n";
    os << "mode = " << supervision_mode_name(t.mode) << "\n";
    os << "semi_fraction = " << fmt_double(t.semi_fraction) << "\n";
    os << "batch_size = " << t.batch_size << "\n";
    os << "lr = " << fmt_double(t.lr) << "\n";
    os << "lr_decay_epochs = " << t.lr_decay_epochs << "\n";
    os << "eta = " << fmt_double(t.eta) << "\n";
    os << "stage1_epochs = " << t.stage1_epochs << "\n";
    os << "stage2_epochs = " << t.stage2_epochs << "\n";
    os << "stage3_alternations = " << t.stage3_alternations << "\n";
    os << "aux_epochs = " << t.aux_epochs << "\n";
    os << "aux_count = " << t.aux_count << "\n";
    os << "fuse_k = " << t.fuse_k << "\n";
    os << "fuse_with_scales = " << (t.fuse_with_scales ? "true" : "false") << "\n";
    os << "hard_entropy = " << fmt_double(t.thresholds.hard_entropy) << "\n";
    os << "easy_entropy = " << fmt_double(t.thresholds.easy_entropy) << "\n";
    os << "trust_lo = " << fmt_double(t.thresholds.trust_lo) << "\n";
    os << "trust_hi = " << fmt_double(t.thresholds.trust_hi) << "\n";
    os << "adam_beta1 = " << fmt_double(t.adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt_double(t.adam_beta2) << "\n";
    os << "adam_epsilon = " << fmt_double(t.adam_epsilon) << "\n";
    os << "seed = " << t.seed << "\n";
    os << "use_plf = " << (t.use_plf ? "true" : "false") << "\n";
    os << "use_entropy_weight = " << (t.use_entropy_weight ? "true" : "false") << "\n";
    os << "use_uncertainty_weight = " << (t.use_uncertainty_weight ? "true" : "false") << "\n";
    os << "use_phase2 = " << (t.use_phase2 ? "true" : "false") << "\n";
    os << "lai_weak_weak = " << (t.lai_weak_weak ? "true" : "false") << "\n";
    os << "lnr_with_refine = " << (t.lnr_with_refine ? "true" : "false") << "\n";
    os << "no_stage1 = " << (t.no_stage1 ? "true" : "false") << "\n";
    os << "no_stage2 = " << (t.no_stage2 ? "true" : "false") << "\n";
    os << "trust_from_plf = " << (t.trust_from_plf ? "true" : "false") << "\n";
    os << "check_phase_isolation = " << (t.check_phase_isolation ? "true" : "false") << "\n";
    os << "side = " << rc.side << "\n";
    os << "contrast_lo = " << fmt_double(rc.contrast_lo) << "\n";
    os << "contrast_hi = " << fmt_double(rc.contrast_hi) << "\n";
    os << "annotation = " << annotation_mode_name(rc.annotation) << "\n";
    os << "test_count = " << rc.test_count << "\n";
    return os.str();
}

} // namespace scaler
