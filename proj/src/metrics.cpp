#include "fedsa/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>
#include <stdexcept>

namespace fedsa::cli {

MetricsRow to_row(std::uint64_t seed, fed::Algorithm algorithm, const fed::RoundMetrics& m)
{
    MetricsRow r;
    r.seed = seed;
    r.round = m.round;
    r.algorithm = fed::to_string(algorithm);
    r.mean_accuracy = m.mean_accuracy;
    r.min_accuracy = m.min_accuracy;
    r.max_accuracy = m.max_accuracy;
    r.global_proto_mean_pairwise_dist = m.global_proto_mean_pairwise_dist;
    r.mean_intra_class_variance = m.mean_intra_class_variance;
    r.d_global = m.d_global;
    return r;
}

std::string format_number(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string format_row(const MetricsRow& r)
{
    std::string s = std::to_string(r.seed) + "," + std::to_string(r.round) + "," + r.algorithm;
    for (double v : {r.mean_accuracy, r.min_accuracy, r.max_accuracy, r.global_proto_mean_pairwise_dist,
                     r.mean_intra_class_variance, r.d_global}) {
        s += ",";
        s += format_number(v);
    }
    return s;
}

namespace {

double parse_number(const std::string& cell)
{
    if (cell == "nan") return std::nan("");
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || *end != '\0') throw std::runtime_error("metrics: bad number '" + cell + "'");
    return v;
}

}  // namespace

MetricsRow parse_row(const std::string& line)
{
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw std::runtime_error("metrics: expected 9 columns, got " + std::to_string(cells.size()));
    MetricsRow r;
    r.seed = std::stoull(cells[0]);
    r.round = std::stoull(cells[1]);
    r.algorithm = cells[2];
    r.mean_accuracy = parse_number(cells[3]);
    r.min_accuracy = parse_number(cells[4]);
    r.max_accuracy = parse_number(cells[5]);
    r.global_proto_mean_pairwise_dist = parse_number(cells[6]);
    r.mean_intra_class_variance = parse_number(cells[7]);
    r.d_global = parse_number(cells[8]);
    return r;
}

std::vector<MetricsRow> read_metrics(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw std::runtime_error("metrics: missing or unexpected header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_row(line));
    }
    return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("metrics: cannot open " + path.string());
    return read_metrics(in);
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path)
{
    if (!out_) throw std::runtime_error("metrics: cannot write " + path.string());
    out_ << kMetricsHeader << '\n';
    out_.flush();
}

void MetricsWriter::write(const MetricsRow& row)
{
    out_ << format_row(row) << '\n';
    out_.flush();
    ++rows_;
}

}  // namespace fedsa::cli
