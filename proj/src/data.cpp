#include "fedsa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fedsa::data {

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed)
{
    if (spec.num_classes < 2) throw std::invalid_argument("generate_synthetic: need at least 2 classes");
    if (spec.samples_per_class < 4) throw std::invalid_argument("generate_synthetic: need at least 4 samples per class");
    if (spec.input_dim == 0) throw std::invalid_argument("generate_synthetic: zero input dimension");

    auto rng = make_stream(seed, {stream::kData});
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> means(spec.num_classes * spec.input_dim);
    for (auto& v : means) v = spec.center_scale * normal(rng);

    Dataset ds;
    ds.input_dim = spec.input_dim;
    ds.num_classes = spec.num_classes;
    ds.features.reserve(spec.num_classes * spec.samples_per_class * spec.input_dim);
    ds.labels.reserve(spec.num_classes * spec.samples_per_class);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            for (std::size_t d = 0; d < spec.input_dim; ++d) {
                const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal(rng) : 0.0;
                ds.features.push_back(means[c * spec.input_dim + d] + noise);
            }
            ds.labels.push_back(c);
        }
    }
    return ds;
}

namespace {

bool parse_row(const std::string& line, std::vector<double>& out)
{
    out.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const char* begin = cell.c_str();
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) return false;
        while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
        if (*end != '\0') return false;
        out.push_back(v);
    }
    return !out.empty();
}

}  // namespace

Dataset load_table(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_table: cannot open " + path.string());

    Dataset ds;
    std::string line;
    std::vector<double> row;
    std::size_t line_no = 0;
    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (!parse_row(line, row)) {
            if (line_no == 1) continue;  // header
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        if (row.size() < 2) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": need features and a label");
        }
        const std::size_t dim = row.size() - 1;
        if (ds.input_dim == 0) ds.input_dim = dim;
        if (dim != ds.input_dim) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(ds.input_dim) + " features, found " + std::to_string(dim));
        }
        const double label = row.back();
        if (label < 0 || label != std::floor(label)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
        }
        ds.features.insert(ds.features.end(), row.begin(), row.end() - 1);
        ds.labels.push_back(static_cast<std::size_t>(label));
        max_label = std::max(max_label, ds.labels.back());
    }
    if (ds.labels.empty()) throw std::runtime_error("load_table: " + path.string() + " holds no samples");
    ds.num_classes = max_label + 1;
    if (ds.num_classes < 2) throw std::runtime_error("load_table: " + path.string() + " holds a single class");
    return ds;
}

std::vector<double> sample_dirichlet(std::size_t m, double concentration, Rng& rng)
{
    if (!(concentration > 0.0)) throw std::invalid_argument("sample_dirichlet: concentration must be positive");
    std::gamma_distribution<double> gamma(concentration, 1.0);
    std::vector<double> q(m);
    for (;;) {
        double total = 0.0;
        for (auto& v : q) {
            v = gamma(rng);
            total += v;
        }
        if (total > 0.0 && std::isfinite(total)) {
            for (auto& v : q) v /= total;
            return q;
        }
    }
}

std::vector<std::size_t> largest_remainder(std::span<const double> shares, std::size_t total)
{
    const double sum = std::accumulate(shares.begin(), shares.end(), 0.0);
    std::vector<std::size_t> counts(shares.size(), 0);
    if (shares.empty() || sum <= 0.0) return counts;

    std::vector<double> remainder(shares.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        const double exact = static_cast<double>(total) * shares[i] / sum;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(shares.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % order.size()]];
    return counts;
}

PartitionPlan dirichlet_partition(std::span<const std::size_t> labels, std::size_t num_classes, std::size_t clients,
                                  double beta, std::uint64_t seed, std::size_t min_per_client,
                                  std::size_t max_attempts)
{
    if (!(beta > 0.0)) throw std::invalid_argument("dirichlet_partition: beta must be positive");
    if (clients < 1) throw std::invalid_argument("dirichlet_partition: need at least one client");

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw std::invalid_argument("dirichlet_partition: label outside class range");
        by_class[labels[i]].push_back(i);
    }

    auto rng = make_stream(seed, {stream::kPartition});
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        PartitionPlan plan;
        plan.attempts = attempt;
        plan.client_indices.assign(clients, {});
        plan.proportions.assign(num_classes, {});
        for (std::size_t c = 0; c < num_classes; ++c) {
            auto q = sample_dirichlet(clients, beta, rng);
            auto members = by_class[c];
            std::shuffle(members.begin(), members.end(), rng);
            const auto counts = largest_remainder(q, members.size());
            std::size_t offset = 0;
            for (std::size_t i = 0; i < clients; ++i) {
                auto& dst = plan.client_indices[i];
                dst.insert(dst.end(), members.begin() + offset, members.begin() + offset + counts[i]);
                offset += counts[i];
            }
            plan.proportions[c] = std::move(q);
        }
        const bool ok = std::all_of(plan.client_indices.begin(), plan.client_indices.end(),
                                    [&](const auto& idx) { return idx.size() >= min_per_client; });
        if (ok) {
            for (auto& idx : plan.client_indices) std::sort(idx.begin(), idx.end());
            return plan;
        }
    }
    throw std::runtime_error("dirichlet_partition: no plan gave every one of " + std::to_string(clients) +
                             " clients at least " + std::to_string(min_per_client) + " samples after " +
                             std::to_string(max_attempts) + " attempts; use a larger dataset or fewer clients");
}

Split split_train_test(std::span<const std::size_t> indices, double ratio, std::uint64_t seed)
{
    if (indices.size() < 4) {
        throw std::invalid_argument("split_train_test: need at least 4 samples, got " + std::to_string(indices.size()));
    }
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split_train_test: ratio must lie in (0, 1)");
    std::vector<std::size_t> shuffled(indices.begin(), indices.end());
    auto rng = make_stream(seed, {stream::kSplit});
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(shuffled.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, shuffled.size() - 1);
    Split s;
    s.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    s.test.assign(shuffled.begin() + n_train, shuffled.end());
    return s;
}

}  // namespace fedsa::data
