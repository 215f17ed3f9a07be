#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scaler/rng.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

// Concealed-object scenes: foreground and background share one smoothed
// noise texture and differ only by a contrast offset, so `contrast` directly
// controls how concealed the object is (0 = invisible, 1 = plain).

enum class AnnotationMode { Point, Scribble };

const char* annotation_mode_name(AnnotationMode m);
AnnotationMode annotation_mode_from(const std::string& name);

struct SceneSpec {
    int64_t side = 64;      // square; multiple of 4 so half-scale twice stays integral
    double contrast = 0.2;  // in [0,1]
    uint64_t seed = 0;
};

struct Sample {
    Tensor image;      // (H,W) in [0,1]
    Tensor mask;       // (H,W) binary ground truth
    Tensor annotation; // (H,W) ternary (+1 fg, -1 bg, 0 unlabeled); may be all zero
};

// One blob (randomized superellipse with low-frequency radial perturbation)
// over the shared texture. The texture and shape depend only on the seed,
// not on the contrast, so contrast sweeps reuse identical scenes.
Sample gen_sample(const SceneSpec& spec);

// Sparse supervision off a dense mask: one interior point per class, or one
// short random walk per class. Interior means the surrounding Chebyshev
// window is single-class (radius 2, relaxing toward 0 for thin shapes).
Tensor sparse_annotate(const Tensor& mask_hw, AnnotationMode mode, Rng& rng);

struct Split {
    std::vector<int64_t> labeled;
    std::vector<int64_t> unlabeled;
};

// First floor(n * labeled_fraction) ids are the labeled subset.
Split make_split(int64_t n, double labeled_fraction);

struct DatasetSpec {
    int64_t count = 160;
    int64_t side = 64;
    double contrast_lo = 0.2;
    double contrast_hi = 0.2;
    uint64_t seed = 0;
    AnnotationMode annotation = AnnotationMode::Point;
};

// Deterministic in the spec: per-sample streams are derived from the seed,
// and a per-sample contrast is drawn from [contrast_lo, contrast_hi].
std::vector<Sample> gen_dataset(const DatasetSpec& spec);

// Flips ground-truth pixels lying within `band` (Chebyshev) of the
// fg/bg boundary with probability `rate`; pixels outside the band are
// untouched and consume no randomness.
Tensor corrupt_boundary_band(const Tensor& mask_hw, int band, double rate, Rng& rng);

// On-disk layout: images/NNNN.bin, masks/NNNN.bin, annots/NNNN.bin plus
// manifest.json. Each .bin is a 16-byte header (8-byte magic "SCLRDS01",
// u32 rank = 2, two u16 dims, little endian) followed by raw f64 data.
void write_tensor_file(const std::filesystem::path& path, const Tensor& hw);
Tensor read_tensor_file(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const std::vector<Sample>& samples);

struct LoadedDataset {
    DatasetSpec spec;
    std::vector<Sample> samples;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

} // namespace scaler
