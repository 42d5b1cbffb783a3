#include "fedsa/models.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fedsa/random.hpp"

namespace fedsa::models {

std::vector<ExtractorSpec> build_zoo(std::size_t zoo_size, std::size_t input_dim, std::size_t feature_dim,
                                     std::uint64_t seed)
{
    if (zoo_size < 1 || zoo_size > kMaxZooSize) {
        throw std::invalid_argument("build_zoo: zoo size " + std::to_string(zoo_size) + " outside [1, " +
                                    std::to_string(kMaxZooSize) + "]");
    }
    if (input_dim == 0 || feature_dim == 0) throw std::invalid_argument("build_zoo: zero input or feature dimension");

    auto rng = make_stream(seed, {stream::kZoo});
    std::uniform_int_distribution<std::size_t> jitter(0, 2);
    std::vector<ExtractorSpec> zoo;
    zoo.reserve(zoo_size);
    for (std::size_t depth = 0; depth < zoo_size; ++depth) {
        ExtractorSpec spec;
        spec.input_dim = input_dim;
        spec.feature_dim = feature_dim;
        const std::size_t width = 24 + 8 * depth + 4 * jitter(rng);
        spec.hidden_widths.assign(depth, width);
        zoo.push_back(std::move(spec));
    }
    return zoo;
}

std::vector<ad::Tensor*> ModelState::extractor_parameters()
{
    std::vector<ad::Tensor*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<ad::Tensor*> ModelState::parameters()
{
    auto out = extractor_parameters();
    out.push_back(&phi);
    return out;
}

std::size_t ModelState::parameter_count() const
{
    std::size_t n = phi.size();
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void ModelState::zero_grad()
{
    for (auto* p : parameters()) p->zero_grad();
}

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, std::size_t fan_in, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto t = ad::Tensor::zeros(std::move(shape), true);
    for (auto& v : t.values) v = dist(rng);
    return t;
}

}  // namespace

ModelState init_parameters(const ExtractorSpec& spec, std::size_t num_classes, std::uint64_t seed,
                           std::size_t architecture)
{
    if (num_classes < 2) throw std::invalid_argument("init_parameters: need at least two classes");
    auto rng = make_stream(seed, {stream::kInit});
    ModelState state;
    state.architecture = architecture;
    state.spec = spec;

    std::size_t fan_in = spec.input_dim;
    auto add_layer = [&](std::size_t out) {
        DenseLayer layer;
        layer.weight = uniform_tensor({out, fan_in}, fan_in, rng);
        layer.bias = uniform_tensor({out}, fan_in, rng);
        state.layers.push_back(std::move(layer));
        fan_in = out;
    };
    for (auto w : spec.hidden_widths) add_layer(w);
    add_layer(spec.feature_dim);
    state.phi = uniform_tensor({num_classes, spec.feature_dim}, spec.feature_dim, rng);
    return state;
}

BoundModel bind(ad::Graph& g, ModelState& state)
{
    BoundModel m;
    m.layers.reserve(state.layers.size());
    for (auto& l : state.layers) m.layers.emplace_back(g.parameter(l.weight), g.parameter(l.bias));
    m.phi = g.parameter(state.phi);
    return m;
}

ad::Var forward_features(ad::Graph& g, const BoundModel& model, const ModelState& state, ad::Var x)
{
    if (g.value(x).size() != state.spec.input_dim) {
        throw std::invalid_argument("forward_features: input has " + std::to_string(g.value(x).size()) +
                                    " values, extractor expects " + std::to_string(state.spec.input_dim));
    }
    ad::Var h = x;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        h = g.add(g.matvec(model.layers[i].first, h), model.layers[i].second);
        if (i + 1 < model.layers.size()) h = g.relu(h);
    }
    return h;
}

ad::Var forward_logits(ad::Graph& g, const BoundModel& model, const ModelState& state, ad::Var features)
{
    if (g.value(features).size() != state.feature_dim()) {
        throw std::invalid_argument("forward_logits: feature vector has " + std::to_string(g.value(features).size()) +
                                    " values, head expects " + std::to_string(state.feature_dim()));
    }
    return g.matvec(model.phi, features);
}

namespace {

std::vector<double> affine(const ad::Tensor& w, const ad::Tensor& b, std::span<const double> x)
{
    const std::size_t rows = w.rows();
    const std::size_t cols = w.cols();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.values.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        out[r] = acc + b.values[r];
    }
    return out;
}

}  // namespace

std::vector<double> features(const ModelState& state, std::span<const double> x)
{
    if (x.size() != state.spec.input_dim) {
        throw std::invalid_argument("features: input has " + std::to_string(x.size()) + " values, extractor expects " +
                                    std::to_string(state.spec.input_dim));
    }
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t i = 0; i < state.layers.size(); ++i) {
        h = affine(state.layers[i].weight, state.layers[i].bias, h);
        if (i + 1 < state.layers.size()) {
            for (auto& v : h) v = v > 0.0 ? v : 0.0;
        }
    }
    return h;
}

std::vector<double> logits(const ModelState& state, std::span<const double> f)
{
    if (f.size() != state.feature_dim()) {
        throw std::invalid_argument("logits: feature vector has " + std::to_string(f.size()) + " values, head expects " +
                                    std::to_string(state.feature_dim()));
    }
    const std::size_t rows = state.phi.rows();
    const std::size_t cols = state.phi.cols();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += state.phi.values[r * cols + c] * f[c];
        out[r] = acc;
    }
    return out;
}

std::size_t predict(const ModelState& state, std::span<const double> x)
{
    const auto z = logits(state, features(state, x));
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c) {
        if (z[c] > z[best]) best = c;
    }
    return best;
}

void sgd_step(ModelState& state, double learning_rate)
{
    for (auto* p : state.parameters()) {
        if (p->grad.size() != p->values.size()) continue;
        for (std::size_t i = 0; i < p->values.size(); ++i) p->values[i] -= learning_rate * p->grad[i];
    }
}

}  // namespace fedsa::models
