#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scaler/graph.hpp"
#include "scaler/params.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

// Plain conv stacks: 3x3 convs with leaky-relu between, a 1-channel conv
// head, sigmoid output. Parameters are named conv<i>.weight/.bias and
// head.weight/.bias.
struct SegmenterArch {
    int in_channels = 1;
    std::vector<int> hidden = {8, 16, 16, 8};
    double leaky_slope = 0.1;
};

// The segmenter pair (student == teacher shape), ~4.8k parameters.
SegmenterArch student_arch();
// The promptable model: image + prompt channel in, doubled widths and two
// extra layers, ~21k parameters.
SegmenterArch generalist_arch();

int64_t param_count(const SegmenterArch& arch);

// He-uniform by fan-in for weights, zero biases. Same seed, same params.
ParamSet init_segmenter(const SegmenterArch& arch, uint64_t seed);

// Appends the conv stack to a graph; `input` must be rank-4 with
// arch.in_channels channels. Returns the sigmoid output node.
NodeId build_segmenter(CompGraph& g, NodeId input, const SegmenterArch& arch);

// A forward whose graph is kept so losses can be appended and backprop run.
struct ForwardPass {
    CompGraph graph;
    Bindings inputs;
    NodeId output = -1;
    Tensor prob; // rank-2 (H,W) copy of the evaluated output
};

ForwardPass student_forward(const Tensor& image_hw, const ParamSet& params,
                            const SegmenterArch& arch);
// Evaluation only: no graph survives, no gradient buffers are touched.
Tensor teacher_forward(const Tensor& image_hw, const ParamSet& params, const SegmenterArch& arch);

// Prompt is a ternary map (+1 fg, -1 bg, 0 unknown) concatenated as a second
// channel; pass nullptr for an all-zero prompt channel.
ForwardPass generalist_forward_graph(const Tensor& image_hw, const Tensor* prompt_hw,
                                     const ParamSet& params, const SegmenterArch& arch);
Tensor generalist_forward(const Tensor& image_hw, const Tensor* prompt_hw,
                          const ParamSet& params, const SegmenterArch& arch);

struct EMAConfig {
    double eta = 0.996;
};

// teacher <- eta * teacher + (1 - eta) * student, elementwise over values.
// Optimizer state of the teacher is not touched (the teacher is never
// trained directly).
void ema_update(ParamSet& teacher, const ParamSet& student, double eta);

struct ModelBundle {
    SegmenterArch seg_arch;
    SegmenterArch gen_arch;
    ParamSet student;
    ParamSet teacher;
    ParamSet generalist;
    EMAConfig ema;

    void save(const std::filesystem::path& dir) const;
    static ModelBundle load(const std::filesystem::path& dir);
};

// Fresh bundle: student and teacher start from the same init (classic
// mean-teacher), the generalist from an independent stream of the seed.
ModelBundle init_bundle(uint64_t seed);

} // namespace scaler
