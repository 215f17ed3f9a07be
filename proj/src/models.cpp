#include "scaler/models.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "scaler/error.hpp"
#include "scaler/rng.hpp"

namespace scaler {

namespace {

std::string layer_name(size_t i) { return "conv" + std::to_string(i); }

Tensor he_uniform(std::vector<int64_t> dims, int64_t fan_in, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(dims));
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

nlohmann::json arch_to_json(const SegmenterArch& a) {
    return nlohmann::json{
        {"in_channels", a.in_channels}, {"hidden", a.hidden}, {"leaky_slope", a.leaky_slope}};
}

SegmenterArch arch_from_json(const nlohmann::json& j) {
    SegmenterArch a;
    a.in_channels = j.at("in_channels").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.leaky_slope = j.at("leaky_slope").get<double>();
    return a;
}

} // namespace

SegmenterArch student_arch() { return SegmenterArch{1, {8, 16, 16, 8}, 0.1}; }

SegmenterArch generalist_arch() { return SegmenterArch{2, {16, 32, 32, 16, 16}, 0.1}; }

int64_t param_count(const SegmenterArch& arch) {
    int64_t n = 0;
    int64_t prev = arch.in_channels;
    for (int hidden : arch.hidden) {
        n += static_cast<int64_t>(hidden) * prev * 9 + hidden;
        prev = hidden;
    }
    n += prev * 9 + 1; // head
    return n;
}

ParamSet init_segmenter(const SegmenterArch& arch, uint64_t seed) {
    Rng rng(seed);
    ParamSet p;
    int64_t prev = arch.in_channels;
    for (size_t i = 0; i < arch.hidden.size(); ++i) {
        int64_t ch = arch.hidden[i];
        p.insert(layer_name(i) + ".weight", he_uniform({ch, prev, 3, 3}, prev * 9, rng));
        p.insert(layer_name(i) + ".bias", Tensor::zeros({ch}));
        prev = ch;
    }
    p.insert("head.weight", he_uniform({1, prev, 3, 3}, prev * 9, rng));
    p.insert("head.bias", Tensor::zeros({1}));
    return p;
}

NodeId build_segmenter(CompGraph& g, NodeId input, const SegmenterArch& arch) {
    NodeId h = input;
    for (size_t i = 0; i < arch.hidden.size(); ++i) {
        NodeId c = g.conv2d(h, g.param(layer_name(i) + ".weight"), g.param(layer_name(i) + ".bias"));
        h = g.leaky_relu(c, arch.leaky_slope);
    }
    NodeId head = g.conv2d(h, g.param("head.weight"), g.param("head.bias"));
    return g.sigmoid(head);
}

ForwardPass student_forward(const Tensor& image_hw, const ParamSet& params,
                            const SegmenterArch& arch) {
    if (arch.in_channels != 1)
        throw NumericError("student_forward: architecture expects 1 channel");
    ForwardPass fp;
    NodeId in = fp.graph.input("image");
    fp.output = build_segmenter(fp.graph, in, arch);
    fp.graph.mark_output("prob", fp.output);
    fp.inputs["image"] = as_nchw(image_hw);
    Evaluation ev = evaluate(fp.graph, fp.inputs, params);
    fp.prob = as_hw(ev.value(fp.output));
    return fp;
}

Tensor teacher_forward(const Tensor& image_hw, const ParamSet& params, const SegmenterArch& arch) {
    CompGraph g;
    NodeId out = build_segmenter(g, g.input("image"), arch);
    Bindings in{{"image", as_nchw(image_hw)}};
    Evaluation ev = evaluate(g, in, params);
    return as_hw(ev.value(out));
}

ForwardPass generalist_forward_graph(const Tensor& image_hw, const Tensor* prompt_hw,
                                     const ParamSet& params, const SegmenterArch& arch) {
    if (arch.in_channels != 2)
        throw NumericError("generalist_forward: architecture expects 2 channels");
    if (prompt_hw != nullptr && prompt_hw->dims != image_hw.dims)
        throw NumericError("generalist_forward: prompt shape " + prompt_hw->shape_str() +
                           " does not match image " + image_hw.shape_str());
    ForwardPass fp;
    NodeId img = fp.graph.input("image");
    NodeId prm = fp.graph.input("prompt");
    NodeId stacked = fp.graph.concat_channels(img, prm);
    fp.output = build_segmenter(fp.graph, stacked, arch);
    fp.graph.mark_output("prob", fp.output);
    fp.inputs["image"] = as_nchw(image_hw);
    fp.inputs["prompt"] =
        prompt_hw ? as_nchw(*prompt_hw) : Tensor::zeros({1, 1, image_hw.dims[0], image_hw.dims[1]});
    Evaluation ev = evaluate(fp.graph, fp.inputs, params);
    fp.prob = as_hw(ev.value(fp.output));
    return fp;
}

Tensor generalist_forward(const Tensor& image_hw, const Tensor* prompt_hw, const ParamSet& params,
                          const SegmenterArch& arch) {
    return generalist_forward_graph(image_hw, prompt_hw, params, arch).prob;
}

void ema_update(ParamSet& teacher, const ParamSet& student, double eta) {
    if (eta < 0.0 || eta > 1.0) throw NumericError("ema_update: eta must be in [0, 1]");
    if (teacher.names() != student.names())
        throw NumericError("ema_update: parameter sets do not match");
    for (const auto& name : teacher.names()) {
        Tensor& t = teacher.at(name).value;
        const Tensor& s = student.at(name).value;
        if (!t.same_shape(s)) throw NumericError("ema_update: shape mismatch for " + name);
        for (size_t i = 0; i < t.data.size(); ++i)
            t.data[i] = eta * t.data[i] + (1.0 - eta) * s.data[i];
    }
}

void ModelBundle::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    student.save(dir / "student.params");
    teacher.save(dir / "teacher.params");
    generalist.save(dir / "generalist.params");
    nlohmann::json j{{"segmenter", arch_to_json(seg_arch)},
                     {"generalist", arch_to_json(gen_arch)},
                     {"ema_eta", ema.eta}};
    std::ofstream os(dir / "arch.json");
    if (!os) throw IoError("cannot write " + (dir / "arch.json").string());
    os << j.dump(2) << "\n";
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "arch.json");
    if (!is) throw IoError("cannot open " + (dir / "arch.json").string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("bad arch.json: " + std::string(e.what()));
    }
    ModelBundle b;
    b.seg_arch = arch_from_json(j.at("segmenter"));
    b.gen_arch = arch_from_json(j.at("generalist"));
    b.ema.eta = j.at("ema_eta").get<double>();
    b.student = ParamSet::load(dir / "student.params");
    b.teacher = ParamSet::load(dir / "teacher.params");
    b.generalist = ParamSet::load(dir / "generalist.params");
    return b;
}

ModelBundle init_bundle(uint64_t seed) {
    ModelBundle b;
    b.seg_arch = student_arch();
    b.gen_arch = generalist_arch();
    uint64_t seg_seed = mix_seed(seed, {hash_tag("segmenter-init")});
    uint64_t gen_seed = mix_seed(seed, {hash_tag("generalist-init")});
    b.student = init_segmenter(b.seg_arch, seg_seed);
    b.teacher = b.student;
    b.generalist = init_segmenter(b.gen_arch, gen_seed);
    return b;
}

} // namespace scaler
