#include "fedsa/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>

#include "fedsa/bench.hpp"
#include "fedsa/metrics.hpp"

namespace fedsa::cli {

namespace {

struct Interrupted : std::runtime_error {
    Interrupted() : std::runtime_error("interrupted") {}
};

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix)
{
    if (suffix.empty()) return p;
    auto out = p;
    out.replace_filename(p.stem().string() + suffix + p.extension().string());
    return out;
}

}  // namespace

std::filesystem::path resolve_output(const std::string& path)
{
    std::filesystem::path p(path);
    if (p.is_relative()) {
        if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) p = std::filesystem::path(dir) / p;
    }
    return p;
}

int cmd_run(const ConfigFile& config, const RunCommandOptions& options, std::ostream& log)
{
    const auto points = expand_sweep(config);
    for (const auto& [suffix, cfg] : points) {
        const auto path = with_suffix(resolve_output(cfg.output_path), suffix);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        MetricsWriter writer(path);
        std::ofstream replay;
        if (options.replay_path) {
            replay.open(with_suffix(*options.replay_path, suffix));
            if (!replay) {
                log << "error: cannot write replay file " << with_suffix(*options.replay_path, suffix) << '\n';
                return 1;
            }
        }
        for (auto seed : cfg.effective_seeds()) {
            auto run = cfg.run;
            run.seed = seed;
            fed::RunOptions ro;
            if (replay.is_open()) ro.replay = &replay;
            ro.on_round = [&](const fed::RoundMetrics& m) {
                writer.write(to_row(seed, run.algorithm, m));
                if (options.should_stop && options.should_stop()) throw Interrupted();
            };
            try {
                fed::run_experiment(run, ro);
            } catch (const Interrupted&) {
                log << "interrupted: " << writer.rows() << " rows flushed to " << path.string() << '\n';
                return 3;
            } catch (const fed::TrainingDiverged& e) {
                log << "error: " << e.what() << "; " << writer.rows() << " rows flushed to " << path.string() << '\n';
                return 2;
            } catch (const std::exception& e) {
                log << "error: " << e.what() << "; " << writer.rows() << " rows flushed to " << path.string() << '\n';
                return 1;
            }
        }
        log << "wrote " << writer.rows() << " rows to " << path.string() << '\n';
    }
    return 0;
}

int cmd_bench(const std::string& preset_name, std::size_t seeds, std::optional<std::size_t> rounds,
              const std::string& output_path, std::size_t threads, std::ostream& log)
{
    const auto preset = make_preset(preset_name);
    BenchOptions opts;
    opts.seeds.resize(seeds);
    std::iota(opts.seeds.begin(), opts.seeds.end(), std::uint64_t{1});
    opts.rounds = rounds;
    opts.threads = threads;
    opts.progress = [&](const std::string& line) { log << line << '\n'; };
    const auto report = run_bench(preset, opts);

    const auto path = resolve_output(output_path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream summary(path);
    std::ofstream per_seed(with_suffix(path, ".seeds"));
    if (!summary || !per_seed) {
        log << "error: cannot write " << path.string() << '\n';
        return 1;
    }
    write_summary(report, summary);
    write_per_seed(report, per_seed);
    write_summary(report, log);
    return 0;
}

}  // namespace fedsa::cli
