#pragma once

// Experiment configuration files.
//
// One `key = value` per line, `#` starts a comment. Keys:
//
//   algorithm            FedSA | FedProto | FedTGP | LocalOnly   (FedSA)
//   m                    number of clients                         (20)
//   rho                  participation ratio in (0, 1]             (1)
//   rounds               communication rounds T                    (1000)
//   local_epochs         E                                         (1)
//   batch_size                                                     (10)
//   learning_rate                                                  (0.01)
//   lambda1 lambda2 lambda3                                        (0.1, 0.01, 1)
//   alpha                anchor EMA decay                          (0.9999)
//   beta                 Dirichlet concentration                   (0.1)
//   K                    feature dimension                         (16)
//   X                    number of extractor architectures         (1)
//   seed                                                           (0)
//   embedding_projection mcl cc   FedSA components, true/false     (true)
//   output_path                                                    (metrics.csv)
//   seeds                comma-separated list; overrides `seed`
//   sweep.<key>          comma-separated values; one run set per grid point
//
// Data and solver knobs: num_classes, input_dim, samples_per_class,
// center_scale, noise_sigma, dataset_path, min_per_client, train_ratio,
// anchor_steps, anchor_learning_rate, tgp_steps, tgp_margin_cap,
// tgp_learning_rate, margin_normalization (as_printed | pair_count), threads.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedsa/fed.hpp"

namespace fedsa::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

struct ConfigFile {
    fed::RunConfig run;
    std::string output_path = "metrics.csv";
    std::vector<std::uint64_t> seeds;  // empty: just run.seed
    std::vector<SweepAxis> sweep;

    std::vector<std::uint64_t> effective_seeds() const;
};

// All recognised keys, sweep prefix excluded.
const std::vector<std::string>& known_keys();

// Applies one setting. `where` prefixes error messages (e.g. "run.cfg:7").
void apply_setting(ConfigFile& cfg, const std::string& key, const std::string& value, const std::string& where);

ConfigFile parse_config_text(const std::string& text, const std::string& source = "<config>");
ConfigFile parse_config(const std::filesystem::path& path);

// `key=value` as given to --override.
std::pair<std::string, std::string> split_override(const std::string& arg);

// Every combination of sweep values, each as (suffix, config). Without a
// sweep this is the config itself with an empty suffix.
std::vector<std::pair<std::string, ConfigFile>> expand_sweep(const ConfigFile& cfg);

}  // namespace fedsa::cli
