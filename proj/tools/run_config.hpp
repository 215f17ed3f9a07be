#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "scaler/synthdata.hpp"
#include "scaler/trainer.hpp"

namespace scaler {

// Experiment configuration: the training knobs plus the scene parameters
// used when a held-out synthetic test set is generated on the fly
// (test_count > 0 and no --test-data directory given).
struct RunConfig {
    TrainConfig train;
    int64_t side = 64;
    double contrast_lo = 0.2;
    double contrast_hi = 0.2;
    AnnotationMode annotation = AnnotationMode::Point;
    int64_t test_count = 0;
};

// Flat `key = value` text. '#' starts a comment, blank lines are skipped,
// duplicate or unknown keys are rejected. Every key is optional.
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);

RunConfig run_config_from(const std::map<std::string, std::string>& kv);
RunConfig load_run_config(const std::filesystem::path& path);

// Effective configuration (defaults filled in), written as a parseable
// key = value document. Used to echo provenance into output directories.
std::string echo_run_config(const RunConfig& rc);

} // namespace scaler
