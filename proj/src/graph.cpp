#include "scaler/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scaler/error.hpp"

namespace scaler {

namespace {

#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

std::string node_label(const CompGraph& g, NodeId id) {
    const Node& n = g.nodes()[static_cast<size_t>(id)];
    std::ostringstream os;
    os << "node #" << id << " (" << op_name(n.kind);
    if (!n.name.empty()) os << " '" << n.name << "'";
    os << ")";
    return os.str();
}

[[noreturn]] void fail_node(const CompGraph& g, NodeId id, const std::string& why) {
    throw NumericError(node_label(g, id) + ": " + why);
}

void require_same_shape(const CompGraph& g, NodeId id, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        fail_node(g, id, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void check_finite(const CompGraph& g, NodeId id, const Tensor& t, const char* phase) {
    if (!g_debug_checks) return;
    if (!t.all_finite()) fail_node(g, id, std::string("non-finite value in ") + phase);
}

// 3x3, stride 1, pad 1. Inner loops run over contiguous rows so the
// compiler can vectorize them; this is the hot path of the whole project.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    int64_t N = x.dims[0], Ci = x.dims[1], H = x.dims[2], W = x.dims[3];
    int64_t Co = w.dims[0];
    Tensor y = Tensor::zeros({N, Co, H, W});
    const double* xd = x.data.data();
    const double* wd = w.data.data();
    double* yd = y.data.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Co; ++co) {
            double* yp = yd + (n * Co + co) * H * W;
            double bias = b.data[static_cast<size_t>(co)];
            for (int64_t i = 0; i < H * W; ++i) yp[i] = bias;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const double* xp = xd + (n * Ci + ci) * H * W;
                const double* wp = wd + (co * Ci + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    int64_t dy = ky - 1;
                    int64_t y0 = std::max<int64_t>(0, -dy);
                    int64_t y1 = std::min<int64_t>(H, H - dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        int64_t dx = kx - 1;
                        int64_t x0 = std::max<int64_t>(0, -dx);
                        int64_t x1 = std::min<int64_t>(W, W - dx);
                        double wv = wp[ky * 3 + kx];
                        for (int64_t yy = y0; yy < y1; ++yy) {
                            double* yrow = yp + yy * W;
                            const double* xrow = xp + (yy + dy) * W + dx;
                            for (int64_t xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor& gx,
                     Tensor& gw, Tensor& gb) {
    int64_t N = x.dims[0], Ci = x.dims[1], H = x.dims[2], W = x.dims[3];
    int64_t Co = w.dims[0];
    const double* xd = x.data.data();
    const double* wd = w.data.data();
    const double* gyd = gy.data.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Co; ++co) {
            const double* gyp = gyd + (n * Co + co) * H * W;
            double acc = 0.0;
            for (int64_t i = 0; i < H * W; ++i) acc += gyp[i];
            gb.data[static_cast<size_t>(co)] += acc;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const double* xp = xd + (n * Ci + ci) * H * W;
                double* gxp = gx.data.data() + (n * Ci + ci) * H * W;
                const double* wp = wd + (co * Ci + ci) * 9;
                double* gwp = gw.data.data() + (co * Ci + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    int64_t dy = ky - 1;
                    int64_t y0 = std::max<int64_t>(0, -dy);
                    int64_t y1 = std::min<int64_t>(H, H - dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        int64_t dx = kx - 1;
                        int64_t x0 = std::max<int64_t>(0, -dx);
                        int64_t x1 = std::min<int64_t>(W, W - dx);
                        double wv = wp[ky * 3 + kx];
                        // Two passes per tap: the axpy update vectorizes, the
                        // dot product does not (strict FP forbids reassociation),
                        // so the dot runs on four independent accumulator chains.
                        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                        for (int64_t yy = y0; yy < y1; ++yy) {
                            const double* grow = gyp + yy * W;
                            const double* xrow = xp + (yy + dy) * W + dx;
                            double* gxrow = gxp + (yy + dy) * W + dx;
                            for (int64_t xx = x0; xx < x1; ++xx) gxrow[xx] += wv * grow[xx];
                            int64_t xx = x0;
                            for (; xx + 4 <= x1; xx += 4) {
                                a0 += grow[xx] * xrow[xx];
                                a1 += grow[xx + 1] * xrow[xx + 1];
                                a2 += grow[xx + 2] * xrow[xx + 2];
                                a3 += grow[xx + 3] * xrow[xx + 3];
                            }
                            for (; xx < x1; ++xx) a0 += grow[xx] * xrow[xx];
                        }
                        gwp[ky * 3 + kx] += ((a0 + a1) + (a2 + a3));
                    }
                }
            }
        }
    }
}

} // namespace

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Constant: return "const";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::ScalarMul: return "scalar_mul";
        case OpKind::Div: return "div";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::LogClamped: return "log_clamped";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::ConcatChannels: return "concat_channels";
    }
    return "?";
}

void CompGraph::check_id(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw NumericError("node id " + std::to_string(id) + " out of range");
}

NodeId CompGraph::push(Node n) {
    for (NodeId in : n.inputs) check_id(in);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId CompGraph::input(const std::string& name) {
    auto it = inputs_by_name_.find(name);
    if (it != inputs_by_name_.end()) return it->second;
    NodeId id = push(Node{OpKind::Input, {}, 0.0, name, {}});
    inputs_by_name_[name] = id;
    return id;
}

NodeId CompGraph::param(const std::string& name) {
    auto it = params_by_name_.find(name);
    if (it != params_by_name_.end()) return it->second;
    NodeId id = push(Node{OpKind::Param, {}, 0.0, name, {}});
    params_by_name_[name] = id;
    return id;
}

NodeId CompGraph::constant(Tensor t) {
    return push(Node{OpKind::Constant, {}, 0.0, "", std::move(t)});
}

NodeId CompGraph::conv2d(NodeId x, NodeId w, NodeId b) {
    return push(Node{OpKind::Conv2d, {x, w, b}, 0.0, "", {}});
}
NodeId CompGraph::add(NodeId a, NodeId b) { return push(Node{OpKind::Add, {a, b}, 0.0, "", {}}); }
NodeId CompGraph::mul(NodeId a, NodeId b) { return push(Node{OpKind::Mul, {a, b}, 0.0, "", {}}); }
NodeId CompGraph::scalar_mul(NodeId a, double factor) {
    return push(Node{OpKind::ScalarMul, {a}, factor, "", {}});
}
NodeId CompGraph::div(NodeId a, NodeId b) { return push(Node{OpKind::Div, {a, b}, 0.0, "", {}}); }
NodeId CompGraph::leaky_relu(NodeId x, double slope) {
    return push(Node{OpKind::LeakyRelu, {x}, slope, "", {}});
}
NodeId CompGraph::sigmoid(NodeId x) { return push(Node{OpKind::Sigmoid, {x}, 0.0, "", {}}); }
NodeId CompGraph::log_clamped(NodeId x) { return push(Node{OpKind::LogClamped, {x}, 0.0, "", {}}); }
NodeId CompGraph::mean(NodeId x) { return push(Node{OpKind::Mean, {x}, 0.0, "", {}}); }
NodeId CompGraph::sum(NodeId x) { return push(Node{OpKind::Sum, {x}, 0.0, "", {}}); }
NodeId CompGraph::concat_channels(NodeId a, NodeId b) {
    return push(Node{OpKind::ConcatChannels, {a, b}, 0.0, "", {}});
}

void CompGraph::mark_output(const std::string& name, NodeId id) {
    check_id(id);
    outputs_[name] = id;
}

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

void extend_evaluation(const CompGraph& g, const Bindings& inputs, const ParamSet& params,
                       Evaluation& ev) {
    const auto& nodes = g.nodes();
    ev.values.resize(nodes.size());
    ev.computed.resize(nodes.size(), 0);
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (ev.computed[i]) continue;
        NodeId id = static_cast<NodeId>(i);
        const Node& n = nodes[i];
        Tensor out;
        auto val = [&](int k) -> const Tensor& {
            return ev.values[static_cast<size_t>(n.inputs[static_cast<size_t>(k)])];
        };
        switch (n.kind) {
            case OpKind::Input: {
                auto it = inputs.find(n.name);
                if (it == inputs.end()) fail_node(g, id, "no binding for input");
                out = it->second;
                if (!out.all_finite()) fail_node(g, id, "non-finite value in bound input");
                break;
            }
            case OpKind::Param: {
                if (!params.contains(n.name)) fail_node(g, id, "parameter not in set");
                out = params.at(n.name).value;
                break;
            }
            case OpKind::Constant:
                out = n.literal;
                break;
            case OpKind::Conv2d: {
                const Tensor &x = val(0), &w = val(1), &b = val(2);
                if (x.rank() != 4) fail_node(g, id, "conv input must be rank-4, got " + x.shape_str());
                if (w.rank() != 4 || w.dims[2] != 3 || w.dims[3] != 3)
                    fail_node(g, id, "conv weight must be [CoxCix3x3], got " + w.shape_str());
                if (w.dims[1] != x.dims[1])
                    fail_node(g, id, "conv channel mismatch " + x.shape_str() + " vs " + w.shape_str());
                if (b.rank() != 1 || b.dims[0] != w.dims[0])
                    fail_node(g, id, "conv bias must be [Co], got " + b.shape_str());
                out = conv2d_forward(x, w, b);
                break;
            }
            case OpKind::Add: {
                require_same_shape(g, id, val(0), val(1));
                out = val(0);
                const double* bd = val(1).data.data();
                for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += bd[k];
                break;
            }
            case OpKind::Mul: {
                require_same_shape(g, id, val(0), val(1));
                out = val(0);
                const double* bd = val(1).data.data();
                for (size_t k = 0; k < out.data.size(); ++k) out.data[k] *= bd[k];
                break;
            }
            case OpKind::ScalarMul: {
                out = val(0);
                for (double& v : out.data) v *= n.scalar;
                break;
            }
            case OpKind::Div: {
                require_same_shape(g, id, val(0), val(1));
                out = val(0);
                const double* bd = val(1).data.data();
                for (size_t k = 0; k < out.data.size(); ++k) out.data[k] /= bd[k];
                break;
            }
            case OpKind::LeakyRelu: {
                out = val(0);
                for (double& v : out.data) v = v > 0.0 ? v : n.scalar * v;
                break;
            }
            case OpKind::Sigmoid: {
                out = val(0);
                for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
                break;
            }
            case OpKind::LogClamped: {
                out = val(0);
                for (double& v : out.data) v = std::log(std::max(v, kLogClampFloor));
                break;
            }
            case OpKind::Mean: {
                const Tensor& x = val(0);
                double acc = 0.0;
                for (double v : x.data) acc += v;
                out = Tensor::scalar(acc / static_cast<double>(x.numel()));
                break;
            }
            case OpKind::Sum: {
                const Tensor& x = val(0);
                double acc = 0.0;
                for (double v : x.data) acc += v;
                out = Tensor::scalar(acc);
                break;
            }
            case OpKind::ConcatChannels: {
                const Tensor &a = val(0), &b = val(1);
                if (a.rank() != 4 || b.rank() != 4)
                    fail_node(g, id, "concat operands must be rank-4");
                if (a.dims[0] != b.dims[0] || a.dims[2] != b.dims[2] || a.dims[3] != b.dims[3])
                    fail_node(g, id,
                              "concat mismatch " + a.shape_str() + " vs " + b.shape_str());
                int64_t N = a.dims[0], Ca = a.dims[1], Cb = b.dims[1];
                int64_t plane = a.dims[2] * a.dims[3];
                out = Tensor::zeros({N, Ca + Cb, a.dims[2], a.dims[3]});
                for (int64_t s = 0; s < N; ++s) {
                    std::copy_n(a.data.begin() + s * Ca * plane, Ca * plane,
                                out.data.begin() + s * (Ca + Cb) * plane);
                    std::copy_n(b.data.begin() + s * Cb * plane, Cb * plane,
                                out.data.begin() + (s * (Ca + Cb) + Ca) * plane);
                }
                break;
            }
        }
        check_finite(g, id, out, "forward value");
        ev.values[i] = std::move(out);
        ev.computed[i] = 1;
    }
}

Evaluation evaluate(const CompGraph& g, const Bindings& inputs, const ParamSet& params) {
    Evaluation ev;
    extend_evaluation(g, inputs, params, ev);
    return ev;
}

std::map<std::string, Tensor> evaluate_outputs(const CompGraph& g, const Bindings& inputs,
                                               const ParamSet& params) {
    Evaluation ev = evaluate(g, inputs, params);
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : g.outputs()) out[name] = ev.value(id);
    return out;
}

void backprop(const CompGraph& g, const Bindings& inputs, ParamSet& params, NodeId loss,
              const Evaluation* reuse) {
    const auto& nodes = g.nodes();
    if (loss < 0 || static_cast<size_t>(loss) >= nodes.size())
        throw NumericError("backprop: loss node id out of range");

    Evaluation local;
    const Evaluation* ev = reuse;
    if (ev == nullptr || ev->values.size() < nodes.size() ||
        !ev->computed[static_cast<size_t>(loss)]) {
        local = evaluate(g, inputs, params);
        ev = &local;
    }
    if (ev->value(loss).numel() != 1)
        fail_node(g, loss, "backprop requires a scalar loss, got shape " +
                               ev->value(loss).shape_str());

    // Only nodes the loss actually depends on get adjoints.
    std::vector<char> needed(nodes.size(), 0);
    needed[static_cast<size_t>(loss)] = 1;
    for (int64_t i = loss; i >= 0; --i) {
        if (!needed[static_cast<size_t>(i)]) continue;
        for (NodeId in : nodes[static_cast<size_t>(i)].inputs) needed[static_cast<size_t>(in)] = 1;
    }

    std::vector<Tensor> adj(nodes.size());
    auto adj_of = [&](NodeId id) -> Tensor& {
        Tensor& a = adj[static_cast<size_t>(id)];
        if (a.data.empty() && ev->value(id).numel() > 0)
            a = Tensor::zeros(ev->value(id).dims);
        return a;
    };
    adj_of(loss).data[0] = 1.0;

    for (int64_t i = loss; i >= 0; --i) {
        NodeId id = static_cast<NodeId>(i);
        if (!needed[static_cast<size_t>(i)]) continue;
        const Node& n = nodes[static_cast<size_t>(i)];
        const Tensor& gy = adj[static_cast<size_t>(i)];
        if (gy.data.empty()) continue; // never touched: contributes nothing
        check_finite(g, id, gy, "adjoint");
        auto val = [&](int k) -> const Tensor& {
            return ev->value(n.inputs[static_cast<size_t>(k)]);
        };
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Constant:
                break; // detached by construction
            case OpKind::Param: {
                Tensor& acc = params.at(n.name).grad;
                if (!acc.same_shape(gy))
                    fail_node(g, id, "gradient shape mismatch for parameter");
                for (size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += gy.data[k];
                break;
            }
            case OpKind::Conv2d: {
                Tensor& gx = adj_of(n.inputs[0]);
                Tensor& gw = adj_of(n.inputs[1]);
                Tensor& gb = adj_of(n.inputs[2]);
                conv2d_backward(val(0), val(1), gy, gx, gw, gb);
                break;
            }
            case OpKind::Add: {
                for (int k = 0; k < 2; ++k) {
                    Tensor& ga = adj_of(n.inputs[static_cast<size_t>(k)]);
                    for (size_t j = 0; j < ga.data.size(); ++j) ga.data[j] += gy.data[j];
                }
                break;
            }
            case OpKind::Mul: {
                Tensor& ga = adj_of(n.inputs[0]);
                Tensor& gb = adj_of(n.inputs[1]);
                const Tensor &a = val(0), &b = val(1);
                for (size_t j = 0; j < ga.data.size(); ++j) {
                    ga.data[j] += gy.data[j] * b.data[j];
                    gb.data[j] += gy.data[j] * a.data[j];
                }
                break;
            }
            case OpKind::ScalarMul: {
                Tensor& ga = adj_of(n.inputs[0]);
                for (size_t j = 0; j < ga.data.size(); ++j) ga.data[j] += n.scalar * gy.data[j];
                break;
            }
            case OpKind::Div: {
                Tensor& ga = adj_of(n.inputs[0]);
                Tensor& gb = adj_of(n.inputs[1]);
                const Tensor &a = val(0), &b = val(1);
                for (size_t j = 0; j < ga.data.size(); ++j) {
                    ga.data[j] += gy.data[j] / b.data[j];
                    gb.data[j] -= gy.data[j] * a.data[j] / (b.data[j] * b.data[j]);
                }
                break;
            }
            case OpKind::LeakyRelu: {
                Tensor& ga = adj_of(n.inputs[0]);
                const Tensor& x = val(0);
                for (size_t j = 0; j < ga.data.size(); ++j)
                    ga.data[j] += gy.data[j] * (x.data[j] > 0.0 ? 1.0 : n.scalar);
                break;
            }
            case OpKind::Sigmoid: {
                Tensor& ga = adj_of(n.inputs[0]);
                const Tensor& y = ev->value(id);
                for (size_t j = 0; j < ga.data.size(); ++j)
                    ga.data[j] += gy.data[j] * y.data[j] * (1.0 - y.data[j]);
                break;
            }
            case OpKind::LogClamped: {
                Tensor& ga = adj_of(n.inputs[0]);
                const Tensor& x = val(0);
                // Zero slope on the clamp plateau (subgradient choice keeps
                // finite-difference checks consistent there too).
                for (size_t j = 0; j < ga.data.size(); ++j)
                    if (x.data[j] > kLogClampFloor) ga.data[j] += gy.data[j] / x.data[j];
                break;
            }
            case OpKind::Mean: {
                Tensor& ga = adj_of(n.inputs[0]);
                double s = gy.data[0] / static_cast<double>(val(0).numel());
                for (double& v : ga.data) v += s;
                break;
            }
            case OpKind::Sum: {
                Tensor& ga = adj_of(n.inputs[0]);
                double s = gy.data[0];
                for (double& v : ga.data) v += s;
                break;
            }
            case OpKind::ConcatChannels: {
                Tensor& ga = adj_of(n.inputs[0]);
                Tensor& gb = adj_of(n.inputs[1]);
                int64_t N = ga.dims[0], Ca = ga.dims[1], Cb = gb.dims[1];
                int64_t plane = ga.dims[2] * ga.dims[3];
                for (int64_t s = 0; s < N; ++s) {
                    const double* src = gy.data.data() + s * (Ca + Cb) * plane;
                    double* pa = ga.data.data() + s * Ca * plane;
                    double* pb = gb.data.data() + s * Cb * plane;
                    for (int64_t j = 0; j < Ca * plane; ++j) pa[j] += src[j];
                    for (int64_t j = 0; j < Cb * plane; ++j) pb[j] += src[Ca * plane + j];
                }
                break;
            }
        }
    }
}

} // namespace scaler
