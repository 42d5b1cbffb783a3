#include "fedsa/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fedsa::cli {

namespace {

std::string trim(const std::string& s)
{
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

[[noreturn]] void fail(const std::string& where, const std::string& what)
{
    throw ConfigError(where + ": " + what);
}

std::uint64_t to_uint(const std::string& v, const std::string& where, const std::string& key)
{
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) fail(where, key + " expects a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& v, const std::string& where, const std::string& key)
{
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(out)) {
        fail(where, key + " expects a finite number, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& v, const std::string& where, const std::string& key)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(where, key + " expects true or false, got '" + v + "'");
}

using Setter = std::function<void(ConfigFile&, const std::string&, const std::string&, const std::string&)>;

template <typename T>
Setter uint_field(T fed::RunConfig::*field)
{
    return [field](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
        c.run.*field = static_cast<T>(to_uint(v, w, k));
    };
}

Setter double_field(double fed::RunConfig::*field)
{
    return [field](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
        c.run.*field = to_double(v, w, k);
    };
}

Setter ablation_field(bool fed::Ablation::*field)
{
    return [field](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
        c.run.ablation.*field = to_bool(v, w, k);
    };
}

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["algorithm"] = [](ConfigFile& c, const std::string&, const std::string& v, const std::string& w) {
            try {
                c.run.algorithm = fed::parse_algorithm(v);
            } catch (const std::invalid_argument& e) {
                fail(w, e.what());
            }
        };
        t["m"] = uint_field(&fed::RunConfig::clients);
        t["rho"] = double_field(&fed::RunConfig::rho);
        t["rounds"] = uint_field(&fed::RunConfig::rounds);
        t["local_epochs"] = uint_field(&fed::RunConfig::local_epochs);
        t["batch_size"] = uint_field(&fed::RunConfig::batch_size);
        t["learning_rate"] = double_field(&fed::RunConfig::learning_rate);
        t["lambda1"] = double_field(&fed::RunConfig::lambda1);
        t["lambda2"] = double_field(&fed::RunConfig::lambda2);
        t["lambda3"] = double_field(&fed::RunConfig::lambda3);
        t["alpha"] = double_field(&fed::RunConfig::alpha);
        t["beta"] = double_field(&fed::RunConfig::beta);
        t["K"] = uint_field(&fed::RunConfig::feature_dim);
        t["X"] = uint_field(&fed::RunConfig::zoo_size);
        t["seed"] = uint_field(&fed::RunConfig::seed);
        t["embedding_projection"] = ablation_field(&fed::Ablation::embedding_projection);
        t["mcl"] = ablation_field(&fed::Ablation::mcl);
        t["cc"] = ablation_field(&fed::Ablation::cc);
        t["num_classes"] = uint_field(&fed::RunConfig::num_classes);
        t["input_dim"] = uint_field(&fed::RunConfig::input_dim);
        t["samples_per_class"] = uint_field(&fed::RunConfig::samples_per_class);
        t["center_scale"] = double_field(&fed::RunConfig::center_scale);
        t["noise_sigma"] = double_field(&fed::RunConfig::noise_sigma);
        t["dataset_path"] = [](ConfigFile& c, const std::string&, const std::string& v, const std::string&) {
            c.run.dataset_path = v;
        };
        t["min_per_client"] = uint_field(&fed::RunConfig::min_per_client);
        t["train_ratio"] = double_field(&fed::RunConfig::train_ratio);
        t["anchor_steps"] = uint_field(&fed::RunConfig::anchor_steps);
        t["anchor_learning_rate"] = double_field(&fed::RunConfig::anchor_learning_rate);
        t["tgp_steps"] = uint_field(&fed::RunConfig::tgp_steps);
        t["tgp_margin_cap"] = double_field(&fed::RunConfig::tgp_margin_cap);
        t["tgp_learning_rate"] = double_field(&fed::RunConfig::tgp_learning_rate);
        t["margin_normalization"] = [](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
            if (v == "as_printed") {
                c.run.margin_normalization = proto::MarginNormalization::AsPrinted;
            } else if (v == "pair_count") {
                c.run.margin_normalization = proto::MarginNormalization::PairCount;
            } else {
                fail(w, k + " expects as_printed or pair_count, got '" + v + "'");
            }
        };
        t["threads"] = uint_field(&fed::RunConfig::threads);
        t["output_path"] = [](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
            if (v.empty()) fail(w, k + " must not be empty");
            c.output_path = v;
        };
        t["seeds"] = [](ConfigFile& c, const std::string& k, const std::string& v, const std::string& w) {
            c.seeds.clear();
            for (const auto& s : split_list(v)) c.seeds.push_back(to_uint(s, w, k));
            if (c.seeds.empty()) fail(w, k + " needs at least one seed");
        };
        return t;
    }();
    return table;
}

void validate_ranges(const ConfigFile& cfg, const std::string& source)
{
    try {
        cfg.run.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

}  // namespace

std::vector<std::uint64_t> ConfigFile::effective_seeds() const
{
    return seeds.empty() ? std::vector<std::uint64_t>{run.seed} : seeds;
}

const std::vector<std::string>& known_keys()
{
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

void apply_setting(ConfigFile& cfg, const std::string& key, const std::string& value, const std::string& where)
{
    if (key.rfind("sweep.", 0) == 0) {
        const std::string target = key.substr(6);
        if (!setters().count(target) || target == "seeds" || target == "output_path") {
            fail(where, "cannot sweep over unknown or reserved key '" + target + "'");
        }
        auto values = split_list(value);
        if (values.empty()) fail(where, key + " needs at least one value");
        // Validate every value now so typos surface before any run starts.
        for (const auto& v : values) {
            ConfigFile probe = cfg;
            setters().at(target)(probe, target, v, where);
        }
        auto it = std::find_if(cfg.sweep.begin(), cfg.sweep.end(), [&](const SweepAxis& a) { return a.key == target; });
        if (it != cfg.sweep.end()) {
            it->values = std::move(values);
        } else {
            cfg.sweep.push_back({target, std::move(values)});
        }
        return;
    }
    auto it = setters().find(key);
    if (it == setters().end()) fail(where, "unknown key '" + key + "'");
    it->second(cfg, key, value, where);
}

ConfigFile parse_config_text(const std::string& text, const std::string& source)
{
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(where, "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(where, "missing key");
        apply_setting(cfg, key, value, where);
    }
    validate_ranges(cfg, source);
    return cfg;
}

ConfigFile parse_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path.string());
}

std::pair<std::string, std::string> split_override(const std::string& arg)
{
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("--override expects key=value, got '" + arg + "'");
    return {trim(arg.substr(0, eq)), trim(arg.substr(eq + 1))};
}

std::vector<std::pair<std::string, ConfigFile>> expand_sweep(const ConfigFile& cfg)
{
    std::vector<std::pair<std::string, ConfigFile>> points{{"", cfg}};
    points.front().second.sweep.clear();
    for (const auto& axis : cfg.sweep) {
        std::vector<std::pair<std::string, ConfigFile>> next;
        for (const auto& [suffix, base] : points) {
            for (const auto& v : axis.values) {
                ConfigFile c = base;
                apply_setting(c, axis.key, v, "sweep." + axis.key);
                next.emplace_back(suffix + "." + axis.key + "=" + v, std::move(c));
            }
        }
        points = std::move(next);
    }
    for (const auto& [suffix, c] : points) validate_ranges(c, "sweep point '" + suffix + "'");
    return points;
}

}  // namespace fedsa::cli
