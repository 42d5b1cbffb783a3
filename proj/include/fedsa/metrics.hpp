#pragma once

// Per-round metrics as comma-separated text. Column order is fixed and every
// number is printed with 9 significant digits, so a file is a deterministic
// function of (config, seeds).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedsa/fed.hpp"

namespace fedsa::cli {

inline constexpr const char* kMetricsHeader =
    "seed,round,algorithm,mean_accuracy,min_accuracy,max_accuracy,global_proto_mean_pairwise_dist,"
    "mean_intra_class_variance,d_global";

struct MetricsRow {
    std::uint64_t seed = 0;
    std::size_t round = 0;
    std::string algorithm;
    double mean_accuracy = 0.0;
    double min_accuracy = 0.0;
    double max_accuracy = 0.0;
    double global_proto_mean_pairwise_dist = 0.0;
    double mean_intra_class_variance = 0.0;
    double d_global = 0.0;
};

MetricsRow to_row(std::uint64_t seed, fed::Algorithm algorithm, const fed::RoundMetrics& m);
std::string format_number(double v);
std::string format_row(const MetricsRow& row);
MetricsRow parse_row(const std::string& line);
std::vector<MetricsRow> read_metrics(std::istream& in);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

// Writes the header on open and flushes after every row.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path);
    void write(const MetricsRow& row);
    std::size_t rows() const { return rows_; }

private:
    std::ofstream out_;
    std::size_t rows_ = 0;
};

}  // namespace fedsa::cli
