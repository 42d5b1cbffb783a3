#include "fedsa/gradcheck.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "fedsa/fed.hpp"
#include "fedsa/random.hpp"

namespace fedsa::cli {

namespace {

constexpr std::size_t kInputDim = 5;
constexpr std::size_t kFeatureDim = 4;
constexpr std::size_t kClasses = 3;
constexpr std::size_t kBatch = 6;

struct Instance {
    models::ModelState model;
    std::vector<std::vector<double>> inputs;
    std::vector<std::size_t> labels;
    fed::ServerBroadcast broadcast;
    double d_star = 0.0;
};

Instance make_instance(std::uint64_t seed, std::size_t index)
{
    auto rng = make_stream(seed, {index});
    std::normal_distribution<double> normal(0.0, 1.0);

    models::ExtractorSpec spec;
    spec.input_dim = kInputDim;
    spec.feature_dim = kFeatureDim;
    spec.hidden_widths.assign(index % 3, 6);

    Instance inst;
    inst.model = models::init_parameters(spec, kClasses, derive_seed(seed, {index, 1}));
    for (std::size_t i = 0; i < kBatch; ++i) {
        std::vector<double> x(kInputDim);
        for (auto& v : x) v = normal(rng);
        inst.inputs.push_back(std::move(x));
        inst.labels.push_back(i % kClasses);
    }
    std::shuffle(inst.labels.begin(), inst.labels.end(), rng);

    inst.broadcast.kind = fed::BroadcastKind::Anchors;
    inst.broadcast.anchors.anchors.assign(kClasses, std::vector<double>(kFeatureDim));
    for (auto& a : inst.broadcast.anchors.anchors) {
        for (auto& v : a) v = 2.0 * normal(rng);
    }
    inst.broadcast.d_global = proto::global_margin(inst.broadcast.anchors);
    std::uniform_real_distribution<double> margin(0.5, 3.0);
    inst.d_star = margin(rng);
    return inst;
}

enum class Term { Supervised, Regularizer, Mcl, Cc, Total };

const char* term_name(Term t)
{
    switch (t) {
    case Term::Supervised: return "L_S";
    case Term::Regularizer: return "L_R";
    case Term::Mcl: return "L_MCL";
    case Term::Cc: return "L_CC";
    case Term::Total: return "L_total";
    }
    return "?";
}

}  // namespace

std::vector<TermCheck> run_gradcheck(const GradcheckOptions& options)
{
    fed::RunConfig config;
    config.algorithm = fed::Algorithm::FedSA;
    config.lambda1 = 0.1;
    config.lambda2 = 1.0;
    config.lambda3 = 1.0;

    ad::GradCheckOptions fd;
    fd.eps = options.eps;
    fd.analytic_scale = options.corrupt_scale;

    std::vector<TermCheck> checks;
    for (Term term : {Term::Supervised, Term::Regularizer, Term::Mcl, Term::Cc, Term::Total}) {
        TermCheck check;
        check.term = term_name(term);
        bool all_finite = true;
        for (std::size_t i = 0; i < options.instances; ++i) {
            Instance inst = make_instance(options.seed, i);
            std::vector<std::span<const double>> inputs(inst.inputs.begin(), inst.inputs.end());
            auto build = [&](ad::Graph& g) {
                const auto bound = models::bind(g, inst.model);
                const auto terms =
                    fed::build_local_loss(g, bound, inst.model, inputs, inst.labels, inst.broadcast, config, inst.d_star);
                switch (term) {
                case Term::Supervised: return terms.supervised;
                case Term::Regularizer: return *terms.regularizer;
                case Term::Mcl: return *terms.mcl;
                case Term::Cc: return *terms.cc;
                case Term::Total: return terms.total;
                }
                return terms.total;
            };
            const auto params = inst.model.parameters();
            const auto r = ad::finite_diff_check(build, params, fd);
            all_finite = all_finite && r.finite;
            check.max_relative_error = std::max(check.max_relative_error, r.max_relative_error);
            ++check.instances;
        }
        check.passed = all_finite && check.max_relative_error <= options.tolerance;
        checks.push_back(check);
    }
    return checks;
}

int report_gradcheck(const std::vector<TermCheck>& checks, std::ostream& out)
{
    bool ok = true;
    for (const auto& c : checks) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-8s instances=%zu max_rel_err=%.3e %s", c.term.c_str(), c.instances,
                      c.max_relative_error, c.passed ? "PASS" : "FAIL");
        out << line << '\n';
        ok = ok && c.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace fedsa::cli
