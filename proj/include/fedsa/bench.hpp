#pragma once

// Bundled desk-scale benchmark presets.
//
//   statistical  one architecture, FedSA / FedProto / FedTGP / LocalOnly
//   model-het    four architectures (HtFE_4), same four algorithms
//   ablation     model-het data with FedSA minus one component at a time,
//                plus the FedProto baseline
//
// Shared setting: 10 classes, 20-dim inputs (centre scale 0.7, noise 1),
// 200 samples per class, 20 clients all participating, Dir(0.1) label skew,
// K = 16, 150 rounds, alpha = 0.99.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedsa/fed.hpp"

namespace fedsa::cli {

struct BenchVariant {
    std::string label;
    fed::RunConfig config;
};

struct BenchPreset {
    std::string name;
    std::vector<BenchVariant> variants;
};

const std::vector<std::string>& preset_names();
fed::RunConfig bench_base_config();
BenchPreset make_preset(const std::string& name);

struct VariantResult {
    std::string label;
    fed::Algorithm algorithm = fed::Algorithm::FedSA;
    std::vector<std::uint64_t> seeds;
    std::vector<double> final_accuracy;    // per seed
    std::vector<double> final_proto_dist;  // per seed, global prototypes / anchors
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // sample standard deviation
};

struct BenchReport {
    std::string preset;
    std::vector<VariantResult> variants;

    const VariantResult& at(const std::string& label) const;
};

struct BenchOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::optional<std::size_t> rounds;
    std::size_t threads = 1;
    std::function<void(const std::string&)> progress;
};

BenchReport run_bench(const BenchPreset& preset, const BenchOptions& options = {});

// variant,algorithm,seeds,mean_final_accuracy,std_final_accuracy,mean_final_proto_dist
void write_summary(const BenchReport& report, std::ostream& out);
// variant,seed,final_accuracy,final_proto_dist
void write_per_seed(const BenchReport& report, std::ostream& out);

}  // namespace fedsa::cli
