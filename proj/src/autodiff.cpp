#include "fedsa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedsa::ad {

std::size_t numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    Tensor t;
    t.values.assign(numel(shape), 0.0);
    t.shape = std::move(shape);
    t.requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(std::vector<double> values, Shape shape, bool requires_grad)
{
    if (values.size() != numel(shape)) {
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_string(shape));
    }
    Tensor t;
    t.values = std::move(values);
    t.shape = std::move(shape);
    t.requires_grad = requires_grad;
    return t;
}

void Tensor::zero_grad()
{
    grad.assign(values.size(), 0.0);
}

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument(what);
}

bool is_vector(const Shape& s) { return s.size() == 1; }

}  // namespace

Var Graph::push(Node node)
{
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const
{
    if (v.id >= nodes_.size()) throw std::out_of_range("graph: stale or foreign Var");
    return nodes_[v.id];
}

Var Graph::parameter(Tensor& t)
{
    require(t.values.size() == numel(t.shape), "parameter: values do not fill shape");
    Node n;
    n.op = Op::Parameter;
    n.shape = t.shape;
    n.value = t.values;
    n.param = &t;
    return push(std::move(n));
}

Var Graph::constant(std::vector<double> values, Shape shape)
{
    require(values.size() == numel(shape), "constant: values do not fill shape " + shape_string(shape));
    Node n;
    n.op = Op::Leaf;
    n.shape = std::move(shape);
    n.value = std::move(values);
    return push(std::move(n));
}

Var Graph::constant(std::span<const double> values)
{
    return constant(std::vector<double>(values.begin(), values.end()), Shape{values.size()});
}

Var Graph::scalar(double value)
{
    return constant(std::vector<double>{value}, Shape{});
}

Var Graph::matvec(Var w, Var x)
{
    const auto& wn = node(w);
    const auto& xn = node(x);
    require(wn.shape.size() == 2 && is_vector(xn.shape) && wn.shape[1] == xn.shape[0],
            "matvec: cannot multiply " + shape_string(wn.shape) + " by " + shape_string(xn.shape));
    const std::size_t rows = wn.shape[0];
    const std::size_t cols = wn.shape[1];
    Node n;
    n.op = Op::MatVec;
    n.shape = Shape{rows};
    n.value.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = wn.value.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xn.value[c];
        n.value[r] = acc;
    }
    n.a = w.id;
    n.b = x.id;
    return push(std::move(n));
}

Var Graph::relu(Var x)
{
    const auto& xn = node(x);
    Node n;
    n.op = Op::Relu;
    n.shape = xn.shape;
    n.value.resize(xn.value.size());
    std::transform(xn.value.begin(), xn.value.end(), n.value.begin(),
                   [](double v) { return v > 0.0 ? v : 0.0; });
    n.a = x.id;
    return push(std::move(n));
}

Var Graph::add(Var a, Var b)
{
    const auto& an = node(a);
    const auto& bn = node(b);
    require(an.shape == bn.shape, "add: shape " + shape_string(an.shape) + " vs " + shape_string(bn.shape));
    Node n;
    n.op = Op::Add;
    n.shape = an.shape;
    n.value.resize(an.value.size());
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] + bn.value[i];
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b)
{
    const auto& an = node(a);
    const auto& bn = node(b);
    require(an.shape == bn.shape, "sub: shape " + shape_string(an.shape) + " vs " + shape_string(bn.shape));
    Node n;
    n.op = Op::Sub;
    n.shape = an.shape;
    n.value.resize(an.value.size());
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] - bn.value[i];
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Graph::scale(Var a, double factor)
{
    const auto& an = node(a);
    Node n;
    n.op = Op::Scale;
    n.shape = an.shape;
    n.value.resize(an.value.size());
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] * factor;
    n.a = a.id;
    n.aux = factor;
    return push(std::move(n));
}

Var Graph::add_scalar(Var a, double offset)
{
    const auto& an = node(a);
    Node n;
    n.op = Op::AddScalar;
    n.shape = an.shape;
    n.value.resize(an.value.size());
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] + offset;
    n.a = a.id;
    return push(std::move(n));
}

Var Graph::sum(std::span<const Var> xs)
{
    require(!xs.empty(), "sum: no operands");
    const Shape shape = node(xs.front()).shape;
    Node n;
    n.op = Op::Sum;
    n.shape = shape;
    n.value.assign(numel(shape), 0.0);
    n.inputs.reserve(xs.size());
    for (auto x : xs) {
        const auto& xn = node(x);
        require(xn.shape == shape, "sum: mixed shapes " + shape_string(shape) + " and " + shape_string(xn.shape));
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += xn.value[i];
        n.inputs.push_back(x.id);
    }
    return push(std::move(n));
}

Var Graph::mean(std::span<const Var> xs)
{
    return scale(sum(xs), 1.0 / static_cast<double>(xs.size()));
}

Var Graph::stack(std::span<const Var> scalars)
{
    require(!scalars.empty(), "stack: no operands");
    Node n;
    n.op = Op::Stack;
    n.shape = Shape{scalars.size()};
    n.value.reserve(scalars.size());
    n.inputs.reserve(scalars.size());
    for (auto s : scalars) {
        const auto& sn = node(s);
        require(sn.value.size() == 1, "stack: operand is not a scalar");
        n.value.push_back(sn.value[0]);
        n.inputs.push_back(s.id);
    }
    return push(std::move(n));
}

Var Graph::euclidean_distance(Var a, Var b)
{
    const auto& an = node(a);
    const auto& bn = node(b);
    require(an.value.size() == bn.value.size(),
            "euclidean_distance: length " + std::to_string(an.value.size()) + " vs " +
                std::to_string(bn.value.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < an.value.size(); ++i) {
        const double d = an.value[i] - bn.value[i];
        acc += d * d;
    }
    Node n;
    n.op = Op::Distance;
    n.value = {std::sqrt(acc)};
    n.aux = n.value[0];
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
}

Var Graph::squared_norm(Var a)
{
    const auto& an = node(a);
    double acc = 0.0;
    for (double v : an.value) acc += v * v;
    Node n;
    n.op = Op::SquaredNorm;
    n.value = {acc};
    n.a = a.id;
    return push(std::move(n));
}

Var Graph::softmax_cross_entropy(Var logits, std::size_t label)
{
    const auto& ln = node(logits);
    require(is_vector(ln.shape) && !ln.value.empty(), "softmax_cross_entropy: logits must be a non-empty vector");
    if (label >= ln.value.size()) {
        throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(ln.value.size()) + ")");
    }
    const double top = *std::max_element(ln.value.begin(), ln.value.end());
    std::vector<double> probs(ln.value.size());
    double z = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] = std::exp(ln.value[i] - top);
        z += probs[i];
    }
    for (auto& p : probs) p /= z;
    Node n;
    n.op = Op::SoftmaxCE;
    n.value = {-(ln.value[label] - top - std::log(z))};
    n.cache = std::move(probs);
    n.aux = static_cast<double>(label);
    n.a = logits.id;
    return push(std::move(n));
}

std::span<const double> Graph::value(Var v) const
{
    return node(v).value;
}

double Graph::scalar_value(Var v) const
{
    const auto& n = node(v);
    if (n.value.size() != 1) throw std::invalid_argument("scalar_value: node holds " + std::to_string(n.value.size()) + " values");
    return n.value[0];
}

const Shape& Graph::shape(Var v) const
{
    return node(v).shape;
}

std::span<const double> Graph::grad(Var v) const
{
    return node(v).grad;
}

namespace {

std::vector<double>& accumulate_into(std::vector<double>& g, std::size_t n)
{
    if (g.empty()) g.assign(n, 0.0);
    return g;
}

}  // namespace

void Graph::backward(Var root)
{
    auto& r = nodes_.at(root.id);
    if (r.value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.clear();
    r.grad.assign(1, 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (!nodes_[i].grad.empty()) backward_node(i);
    }
}

void Graph::backward_node(std::size_t index)
{
    Node& n = nodes_[index];
    const auto& g = n.grad;
    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::Parameter: {
        Tensor* t = n.param;
        if (t->requires_grad) {
            if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
        }
        break;
    }
    case Op::MatVec: {
        Node& w = nodes_[n.a];
        Node& x = nodes_[n.b];
        const std::size_t rows = w.shape[0];
        const std::size_t cols = w.shape[1];
        auto& gw = accumulate_into(w.grad, w.value.size());
        auto& gx = accumulate_into(x.grad, x.value.size());
        for (std::size_t r = 0; r < rows; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            const double* row = w.value.data() + r * cols;
            double* grow = gw.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                grow[c] += gr * x.value[c];
                gx[c] += gr * row[c];
            }
        }
        break;
    }
    case Op::Relu: {
        Node& x = nodes_[n.a];
        auto& gx = accumulate_into(x.grad, x.value.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x.value[i] > 0.0) gx[i] += g[i];
        }
        break;
    }
    case Op::Add:
    case Op::Sub: {
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        {
            auto& ga = accumulate_into(nodes_[n.a].grad, g.size());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        auto& gb = accumulate_into(nodes_[n.b].grad, g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        break;
    }
    case Op::Scale: {
        auto& ga = accumulate_into(nodes_[n.a].grad, g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.aux * g[i];
        break;
    }
    case Op::AddScalar: {
        auto& ga = accumulate_into(nodes_[n.a].grad, g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
    }
    case Op::Sum:
        for (auto id : n.inputs) {
            auto& gi = accumulate_into(nodes_[id].grad, g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        break;
    case Op::Stack:
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            auto& gi = accumulate_into(nodes_[n.inputs[k]].grad, 1);
            gi[0] += g[k];
        }
        break;
    case Op::Distance: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        auto& ga = accumulate_into(a.grad, a.value.size());
        auto& gb = accumulate_into(b.grad, b.value.size());
        // Zero gradient at coincident points.
        if (n.aux == 0.0) break;
        const double s = g[0] / n.aux;
        for (std::size_t i = 0; i < a.value.size(); ++i) ga[i] += s * (a.value[i] - b.value[i]);
        for (std::size_t i = 0; i < b.value.size(); ++i) gb[i] -= s * (a.value[i] - b.value[i]);
        break;
    }
    case Op::SquaredNorm: {
        Node& a = nodes_[n.a];
        auto& ga = accumulate_into(a.grad, a.value.size());
        for (std::size_t i = 0; i < a.value.size(); ++i) ga[i] += 2.0 * g[0] * a.value[i];
        break;
    }
    case Op::SoftmaxCE: {
        Node& l = nodes_[n.a];
        auto& gl = accumulate_into(l.grad, l.value.size());
        const auto label = static_cast<std::size_t>(n.aux);
        for (std::size_t i = 0; i < gl.size(); ++i) {
            gl[i] += g[0] * (n.cache[i] - (i == label ? 1.0 : 0.0));
        }
        break;
    }
    }
}

void Graph::clear()
{
    for (auto& n : nodes_) {
        if (n.op == Op::Parameter && n.param->requires_grad) n.param->zero_grad();
    }
    nodes_.clear();
}

GradCheckResult finite_diff_check(const LossBuilder& build, std::span<Tensor* const> params,
                                  const GradCheckOptions& options)
{
    GradCheckResult result;
    for (Tensor* p : params) {
        p->requires_grad = true;
        p->zero_grad();
    }

    std::vector<std::vector<double>> analytic;
    {
        Graph g;
        Var loss = build(g);
        if (!std::isfinite(g.scalar_value(loss))) {
            result.finite = false;
            return result;
        }
        g.backward(loss);
        for (Tensor* p : params) analytic.push_back(p->grad);
        g.clear();
    }

    auto evaluate = [&]() {
        Graph g;
        return g.scalar_value(build(g));
    };

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor* p = params[k];
        for (std::size_t i = 0; i < p->values.size(); ++i) {
            const double saved = p->values[i];
            p->values[i] = saved + options.eps;
            const double up = evaluate();
            p->values[i] = saved - options.eps;
            const double down = evaluate();
            p->values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                result.finite = false;
                continue;
            }
            const double numeric = (up - down) / (2.0 * options.eps);
            const double a = analytic[k][i] * options.analytic_scale;
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            result.max_relative_error = std::max(result.max_relative_error, err);
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace fedsa::ad
