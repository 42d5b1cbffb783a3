#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsa/random.hpp"

namespace fedsa::data {

struct Dataset {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;  // row-major, size() x input_dim
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * input_dim, input_dim}; }
};

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t input_dim = 20;
    double center_scale = 1.0;  // std-dev of the class means
    double noise_sigma = 1.0;
    std::size_t samples_per_class = 200;
};

// Gaussian class clusters: one mean per class drawn once, then
// mean + N(0, noise_sigma^2) per sample. Samples are grouped by class.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Comma-separated rows: features..., integer label. A first row that does not
// parse as numbers is treated as a header. Classes are 0..max(label).
Dataset load_table(const std::filesystem::path& path);

// One draw from Dir(concentration * 1_m) via normalised gamma variates.
std::vector<double> sample_dirichlet(std::size_t m, double concentration, Rng& rng);

// Integer counts summing exactly to `total`, proportional to `shares`
// (largest-remainder rounding, ties to the lower index).
std::vector<std::size_t> largest_remainder(std::span<const double> shares, std::size_t total);

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    std::vector<std::vector<double>> proportions;  // [class][client]
    std::size_t attempts = 0;
};

PartitionPlan dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_classes, std::size_t clients,
                                  double beta, std::uint64_t seed, std::size_t min_per_client,
                                  std::size_t max_attempts = 1000);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// floor(ratio * n) samples go to train after a seeded shuffle.
Split split_train_test(std::span<const std::size_t> indices, double ratio, std::uint64_t seed);

}  // namespace fedsa::data
