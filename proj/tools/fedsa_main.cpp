#include <atomic>
#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "fedsa/bench.hpp"
#include "fedsa/commands.hpp"
#include "fedsa/config.hpp"
#include "fedsa/gradcheck.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

}  // namespace

int main(int argc, char** argv)
{
    using namespace fedsa::cli;

    CLI::App app{"FedSA federated learning lab"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run the experiment described by a config file");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::vector<std::string> overrides;
    std::optional<std::string> replay;
    std::optional<std::size_t> run_threads;
    run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "single seed, replaces seed and seeds");
    run->add_option("--output", output, "metrics file");
    run->add_option("--override", overrides, "key=value, applied after the file")->allow_extra_args(false);
    run->add_option("--replay", replay, "write every exchanged message as JSON lines");
    run->add_option("--threads", run_threads, "worker threads per round");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
    GradcheckOptions gopts;
    grad->add_option("--seed", gopts.seed, "instance seed");
    grad->add_option("--instances", gopts.instances, "instances per term")->check(CLI::PositiveNumber);
    grad->add_option("--corrupt", gopts.corrupt_scale)->group("");

    auto* bench = app.add_subcommand("bench", "run a bundled comparison preset");
    std::string preset;
    std::string bench_output = "bench.csv";
    std::size_t bench_seeds = 5;
    std::optional<std::size_t> bench_rounds;
    std::size_t bench_threads = 1;
    bench->add_option("preset", preset, "statistical | model-het | ablation")
        ->required()
        ->check(CLI::IsMember(preset_names()));
    bench->add_option("--output", bench_output, "summary file");
    bench->add_option("--seeds", bench_seeds, "seeds 1..n")->check(CLI::PositiveNumber);
    bench->add_option("--rounds", bench_rounds, "override the preset's round count");
    bench->add_option("--threads", bench_threads, "worker threads per round");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto cfg = parse_config(config_path);
            for (const auto& o : overrides) {
                const auto [k, v] = split_override(o);
                apply_setting(cfg, k, v, "--override " + o);
            }
            if (seed) {
                cfg.run.seed = *seed;
                cfg.seeds.clear();
            }
            if (output) cfg.output_path = *output;
            if (run_threads) cfg.run.threads = *run_threads;
            cfg.run.validate();
            RunCommandOptions ro;
            if (replay) ro.replay_path = *replay;
            std::signal(SIGINT, on_sigint);
            ro.should_stop = [] { return g_interrupted.load(); };
            return cmd_run(cfg, ro, std::cerr);
        }
        if (*grad) return report_gradcheck(run_gradcheck(gopts), std::cout);
        if (*bench) return cmd_bench(preset, bench_seeds, bench_rounds, bench_output, bench_threads, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
