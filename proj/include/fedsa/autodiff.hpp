#pragma once

// Tape-based reverse-mode differentiation over small dense tensors.
//
// A Graph records every primitive applied during one forward pass. Values are
// computed eagerly; backward() walks the record in reverse insertion order and
// accumulates gradients. Parameters live outside the graph as Tensors and
// receive their gradient in Tensor::grad, so a graph can be cleared and rebuilt
// for every mini-batch without touching model state.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fedsa::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> values;  // row-major
    std::vector<double> grad;    // empty until a gradient has been requested
    bool requires_grad = false;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(std::vector<double> values, Shape shape, bool requires_grad = false);

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void zero_grad();
};

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
    std::uint32_t id = 0;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Leaf bound to an external tensor; backward accumulates into t.grad when
    // t.requires_grad is set. The tensor must outlive the graph's use of it.
    Var parameter(Tensor& t);
    Var constant(std::vector<double> values, Shape shape);
    Var constant(std::span<const double> values);
    Var scalar(double value);

    // W[out x in] * x[in]
    Var matvec(Var w, Var x);
    Var relu(Var x);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double factor);
    Var add_scalar(Var a, double offset);
    // Elementwise sum / mean of equally shaped nodes.
    Var sum(std::span<const Var> xs);
    Var mean(std::span<const Var> xs);
    // Packs scalar nodes into a vector node.
    Var stack(std::span<const Var> scalars);
    Var euclidean_distance(Var a, Var b);
    Var squared_norm(Var a);
    // -log softmax(logits)[label], max-subtracted.
    Var softmax_cross_entropy(Var logits, std::size_t label);

    std::span<const double> value(Var v) const;
    double scalar_value(Var v) const;
    const Shape& shape(Var v) const;
    // Gradient of the last backward() root with respect to this node.
    std::span<const double> grad(Var v) const;

    // Requires a scalar root. Parameter grads are accumulated, not overwritten.
    void backward(Var root);
    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        Leaf,
        Parameter,
        MatVec,
        Relu,
        Add,
        Sub,
        Scale,
        AddScalar,
        Sum,
        Stack,
        Distance,
        SquaredNorm,
        SoftmaxCE,
    };

    struct Node {
        Op op = Op::Leaf;
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        std::vector<std::uint32_t> inputs;  // n-ary ops
        double aux = 0.0;                   // scale factor, label, cached norm
        std::vector<double> cache;          // softmax probabilities
        Tensor* param = nullptr;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    void backward_node(std::size_t index);

    std::vector<Node> nodes_;
};

struct GradCheckOptions {
    double eps = 1e-5;
    // Multiplies the analytic gradient before comparison. Only useful to prove
    // that the checker flags a wrong gradient.
    double analytic_scale = 1.0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    bool finite = true;
    std::size_t coordinates = 0;

    bool passed(double tolerance) const { return finite && max_relative_error <= tolerance; }
};

// Builds a scalar loss on the supplied graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

// Compares reverse-mode gradients of `build` against central differences,
// coordinate by coordinate, over every tensor in `params`. The error per
// coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckResult finite_diff_check(const LossBuilder& build, std::span<Tensor* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace fedsa::ad
