#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scaler/params.hpp"
#include "scaler/tensor.hpp"

namespace scaler {

using NodeId = int32_t;

// The whole system compiles to this op set plus the three leaf kinds.
// Elementwise ops require identical shapes (no broadcasting); conv2d is
// fixed 3x3 / stride 1 / pad 1 with a per-channel bias; Mean and Sum reduce
// to a rank-0 scalar. Div exists for the IoU ratio; denominators at the call
// sites are bounded away from zero by the smoothing constant.
enum class OpKind : uint8_t {
    Input,
    Param,
    Constant,
    Conv2d,
    Add,
    Mul,
    ScalarMul,
    Div,
    LeakyRelu,
    Sigmoid,
    LogClamped,
    Mean,
    Sum,
    ConcatChannels,
};

const char* op_name(OpKind k);

constexpr double kLogClampFloor = 1e-12;

struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    double scalar = 0.0; // ScalarMul factor / LeakyRelu slope
    std::string name;    // Input / Param
    Tensor literal;      // Constant payload
};

// Append-only DAG builder. Node inputs always reference earlier nodes, so
// the node order is a topological order. input()/param() are deduplicated by
// name: binding one image and referencing a weight twice both work naturally
// (reverse accumulation sums over all uses).
class CompGraph {
public:
    NodeId input(const std::string& name);
    NodeId param(const std::string& name);
    NodeId constant(Tensor t);

    NodeId conv2d(NodeId x, NodeId w, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scalar_mul(NodeId a, double factor);
    NodeId div(NodeId a, NodeId b);
    NodeId leaky_relu(NodeId x, double slope = 0.1);
    NodeId sigmoid(NodeId x);
    NodeId log_clamped(NodeId x);
    NodeId mean(NodeId x);
    NodeId sum(NodeId x);
    NodeId concat_channels(NodeId a, NodeId b);

    void mark_output(const std::string& name, NodeId id);

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::map<std::string, NodeId>& outputs() const { return outputs_; }
    size_t size() const { return nodes_.size(); }

private:
    NodeId push(Node n);
    void check_id(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> inputs_by_name_;
    std::map<std::string, NodeId> params_by_name_;
    std::map<std::string, NodeId> outputs_;
};

using Bindings = std::map<std::string, Tensor>;

// Forward values for every node, indexed by NodeId. `computed[i]` guards
// incremental extension: nodes appended to a graph after a first evaluation
// are filled in without recomputing the prefix.
struct Evaluation {
    std::vector<Tensor> values;
    std::vector<char> computed;

    const Tensor& value(NodeId id) const { return values[static_cast<size_t>(id)]; }
};

Evaluation evaluate(const CompGraph& g, const Bindings& inputs, const ParamSet& params);
void extend_evaluation(const CompGraph& g, const Bindings& inputs, const ParamSet& params,
                       Evaluation& ev);
std::map<std::string, Tensor> evaluate_outputs(const CompGraph& g, const Bindings& inputs,
                                               const ParamSet& params);

// Reverse-mode sweep from a scalar loss node. Accumulates into the grad
// buffers of `params` (existing contents are kept: gradients add up until
// zero_grads). `reuse` skips the forward pass when the caller already has one.
void backprop(const CompGraph& g, const Bindings& inputs, ParamSet& params, NodeId loss,
              const Evaluation* reuse = nullptr);

// When on, every op's output (forward and backward) is checked for NaN/Inf
// and failures name the offending node. Defaults to on in debug builds.
void set_debug_checks(bool on);
bool debug_checks();

} // namespace scaler
