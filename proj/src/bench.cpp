#include "fedsa/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "fedsa/metrics.hpp"

namespace fedsa::cli {

const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"statistical", "model-het", "ablation"};
    return names;
}

fed::RunConfig bench_base_config()
{
    fed::RunConfig c;
    c.num_classes = 10;
    c.input_dim = 20;
    c.samples_per_class = 200;
    c.center_scale = 0.7;
    c.noise_sigma = 1.0;
    c.clients = 20;
    c.rho = 1.0;
    c.beta = 0.1;
    c.feature_dim = 16;
    c.zoo_size = 4;
    c.rounds = 150;
    c.alpha = 0.99;
    c.local_epochs = 1;
    c.batch_size = 10;
    c.learning_rate = 0.01;
    c.lambda1 = 0.1;
    c.lambda2 = 1.0;
    c.lambda3 = 1.0;
    return c;
}

namespace {

fed::RunConfig with_algorithm(fed::RunConfig c, fed::Algorithm a)
{
    c.algorithm = a;
    return c;
}

std::vector<BenchVariant> algorithm_variants(const fed::RunConfig& base)
{
    std::vector<BenchVariant> out;
    for (auto a : {fed::Algorithm::FedSA, fed::Algorithm::FedProto, fed::Algorithm::FedTGP, fed::Algorithm::LocalOnly}) {
        out.push_back({fed::to_string(a), with_algorithm(base, a)});
    }
    return out;
}

}  // namespace

BenchPreset make_preset(const std::string& name)
{
    BenchPreset p;
    p.name = name;
    if (name == "statistical") {
        auto base = bench_base_config();
        base.zoo_size = 1;
        base.lambda2 = 0.01;
        p.variants = algorithm_variants(base);
    } else if (name == "model-het") {
        p.variants = algorithm_variants(bench_base_config());
    } else if (name == "ablation") {
        const auto base = with_algorithm(bench_base_config(), fed::Algorithm::FedSA);
        p.variants.push_back({"FedSA", base});
        auto no_er = base;
        no_er.ablation.embedding_projection = false;
        p.variants.push_back({"FedSA-noER", no_er});
        auto no_mcl = base;
        no_mcl.ablation.mcl = false;
        p.variants.push_back({"FedSA-noMCL", no_mcl});
        auto no_cc = base;
        no_cc.ablation.cc = false;
        p.variants.push_back({"FedSA-noCC", no_cc});
        p.variants.push_back({"FedProto", with_algorithm(base, fed::Algorithm::FedProto)});
    } else {
        throw std::invalid_argument("unknown preset '" + name + "' (expected statistical, model-het or ablation)");
    }
    return p;
}

const VariantResult& BenchReport::at(const std::string& label) const
{
    for (const auto& v : variants) {
        if (v.label == label) return v;
    }
    throw std::out_of_range("bench report has no variant '" + label + "'");
}

BenchReport run_bench(const BenchPreset& preset, const BenchOptions& options)
{
    BenchReport report;
    report.preset = preset.name;
    for (const auto& variant : preset.variants) {
        VariantResult r;
        r.label = variant.label;
        r.algorithm = variant.config.algorithm;
        for (auto seed : options.seeds) {
            auto config = variant.config;
            config.seed = seed;
            config.threads = options.threads;
            if (options.rounds) config.rounds = *options.rounds;
            const auto metrics = fed::run_experiment(config);
            const double acc = metrics.empty() ? 0.0 : metrics.back().mean_accuracy;
            const double dist = metrics.empty() ? std::nan("") : metrics.back().global_proto_mean_pairwise_dist;
            r.seeds.push_back(seed);
            r.final_accuracy.push_back(acc);
            r.final_proto_dist.push_back(dist);
            if (options.progress) {
                options.progress(preset.name + " " + variant.label + " seed " + std::to_string(seed) +
                                 " final accuracy " + format_number(acc));
            }
        }
        const double n = static_cast<double>(r.final_accuracy.size());
        if (n > 0) {
            r.mean_accuracy = std::accumulate(r.final_accuracy.begin(), r.final_accuracy.end(), 0.0) / n;
            double ss = 0.0;
            for (double a : r.final_accuracy) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
            r.std_accuracy = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        }
        report.variants.push_back(std::move(r));
    }
    return report;
}

void write_summary(const BenchReport& report, std::ostream& out)
{
    out << "variant,algorithm,seeds,mean_final_accuracy,std_final_accuracy,mean_final_proto_dist\n";
    for (const auto& v : report.variants) {
        double dist = 0.0;
        for (double d : v.final_proto_dist) dist += d;
        dist /= static_cast<double>(std::max<std::size_t>(1, v.final_proto_dist.size()));
        out << v.label << ',' << fed::to_string(v.algorithm) << ',' << v.seeds.size() << ','
            << format_number(v.mean_accuracy) << ',' << format_number(v.std_accuracy) << ',' << format_number(dist)
            << '\n';
    }
}

void write_per_seed(const BenchReport& report, std::ostream& out)
{
    out << "variant,seed,final_accuracy,final_proto_dist\n";
    for (const auto& v : report.variants) {
        for (std::size_t i = 0; i < v.seeds.size(); ++i) {
            out << v.label << ',' << v.seeds[i] << ',' << format_number(v.final_accuracy[i]) << ','
                << format_number(v.final_proto_dist[i]) << '\n';
        }
    }
}

}  // namespace fedsa::cli
