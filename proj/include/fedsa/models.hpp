#pragma once

// Heterogeneous feature extractors sharing a K-dimensional output, plus a
// bias-free linear classifier head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsa/autodiff.hpp"

namespace fedsa::models {

inline constexpr std::size_t kMaxZooSize = 8;

struct ExtractorSpec {
    std::vector<std::size_t> hidden_widths;  // empty for the linear-probe member
    std::size_t input_dim = 0;
    std::size_t feature_dim = 0;  // K

    bool operator==(const ExtractorSpec&) const = default;
};

// Member j has j ReLU hidden layers (j = 0 is a single linear map). Widths
// grow with depth and get a small seed-dependent jitter.
std::vector<ExtractorSpec> build_zoo(std::size_t zoo_size, std::size_t input_dim, std::size_t feature_dim,
                                     std::uint64_t seed);

inline std::size_t architecture_for_client(std::size_t client_id, std::size_t zoo_size)
{
    return client_id % zoo_size;
}

struct DenseLayer {
    ad::Tensor weight;  // out x in
    ad::Tensor bias;    // out
};

struct ModelState {
    std::size_t architecture = 0;
    ExtractorSpec spec;
    std::vector<DenseLayer> layers;
    ad::Tensor phi;  // C x K, row c is the class-c proxy

    std::size_t num_classes() const { return phi.rows(); }
    std::size_t feature_dim() const { return spec.feature_dim; }

    std::vector<ad::Tensor*> extractor_parameters();
    std::vector<ad::Tensor*> parameters();
    std::size_t parameter_count() const;
    void zero_grad();
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
ModelState init_parameters(const ExtractorSpec& spec, std::size_t num_classes, std::uint64_t seed,
                           std::size_t architecture = 0);

// Parameters of one model bound into a graph.
struct BoundModel {
    std::vector<std::pair<ad::Var, ad::Var>> layers;
    ad::Var phi;
};

BoundModel bind(ad::Graph& g, ModelState& state);

ad::Var forward_features(ad::Graph& g, const BoundModel& model, const ModelState& state, ad::Var x);
ad::Var forward_logits(ad::Graph& g, const BoundModel& model, const ModelState& state, ad::Var features);

// Graph-free inference with the same arithmetic.
std::vector<double> features(const ModelState& state, std::span<const double> x);
std::vector<double> logits(const ModelState& state, std::span<const double> features);

// Argmax of the logits; ties go to the lowest class index.
std::size_t predict(const ModelState& state, std::span<const double> x);

// One plain gradient descent step on every parameter holding a gradient.
void sgd_step(ModelState& state, double learning_rate);

}  // namespace fedsa::models
