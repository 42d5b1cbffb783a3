#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fedsa/fed.hpp"
#include "oracles.hpp"

using namespace fedsa;
using namespace fedsa::fed;
using oracle::Vec;

namespace {

RunConfig small_config(Algorithm a = Algorithm::FedSA)
{
    RunConfig c;
    c.algorithm = a;
    c.clients = 4;
    c.rounds = 3;
    c.num_classes = 3;
    c.input_dim = 5;
    c.samples_per_class = 40;
    c.feature_dim = 4;
    c.zoo_size = 2;
    c.beta = 0.5;
    c.alpha = 0.9;
    c.anchor_steps = 20;
    c.seed = 3;
    return c;
}

data::Dataset toy_data(std::size_t classes, std::uint64_t seed, double scale = 3.0)
{
    data::SyntheticSpec s;
    s.num_classes = classes;
    s.input_dim = 5;
    s.center_scale = scale;
    s.noise_sigma = 0.5;
    s.samples_per_class = 30;
    return data::generate_synthetic(s, seed);
}

std::vector<std::size_t> all_indices(const data::Dataset& d)
{
    std::vector<std::size_t> v(d.size());
    std::iota(v.begin(), v.end(), 0);
    return v;
}

models::ModelState toy_model(const RunConfig& c, std::size_t arch, std::uint64_t seed)
{
    auto zoo = models::build_zoo(c.zoo_size, c.input_dim, c.feature_dim, c.seed);
    return models::init_parameters(zoo[arch], c.num_classes, seed, arch);
}

ServerBroadcast anchors_broadcast(const RunConfig& c)
{
    return init_server(c, c.num_classes).last;
}

std::vector<std::string> run_lines(const RunConfig& c, std::string* replay = nullptr)
{
    std::ostringstream log;
    RunOptions o;
    if (replay) o.replay = &log;
    std::vector<std::string> out;
    for (const auto& m : run_experiment(c, o)) {
        std::ostringstream s;
        s.precision(17);
        s << m.round << ' ' << m.mean_accuracy << ' ' << m.min_accuracy << ' ' << m.max_accuracy << ' '
          << m.global_proto_mean_pairwise_dist << ' ' << m.mean_intra_class_variance << ' ' << m.d_global << ' '
          << m.participants;
        for (double a : m.client_accuracy) s << ' ' << a;
        out.push_back(s.str());
    }
    if (replay) *replay = log.str();
    return out;
}

}  // namespace

TEST_CASE("algorithm names round trip")
{
    for (auto a : {Algorithm::FedSA, Algorithm::FedProto, Algorithm::FedTGP, Algorithm::LocalOnly}) {
        CHECK(parse_algorithm(to_string(a)) == a);
    }
    CHECK_THROWS(parse_algorithm("FedAvg"));
}

TEST_CASE("config validation")
{
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    c.rho = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RunConfig{};
    c.alpha = -0.1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RunConfig{};
    c.zoo_size = 9;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RunConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("client sampling")
{
    auto all = sample_clients(7, 1.0, 3, 1);
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
    auto ten = sample_clients(100, 0.1, 5, 9);
    CHECK(ten.size() == 10);
    CHECK(std::set<std::size_t>(ten.begin(), ten.end()).size() == 10);
    CHECK(std::is_sorted(ten.begin(), ten.end()));
    CHECK(sample_clients(100, 0.1, 5, 9) == ten);
    CHECK(sample_clients(100, 0.1, 6, 9) != ten);
    CHECK(sample_clients(5, 0.01, 0, 0).size() == 1);
}

TEST_CASE("messages round trip through JSON and carry only prototypes")
{
    ClientUpdate u{3, 7, {{0, {1.5, -2.25}, 4}, {2, {0.1, 1e-300}, 1}}};
    auto ju = to_json(u);
    CHECK(ju.at("schema") == kClientUpdateSchema);
    auto u2 = client_update_from_json(ju);
    CHECK(u2.client_id == 3);
    CHECK(u2.round == 7);
    CHECK(u2.prototypes == u.prototypes);

    ServerBroadcast b;
    b.kind = BroadcastKind::Anchors;
    b.anchors = {{{1, 2}, {3, 4}}, 5};
    b.d_global = 5.5;
    b.round = 5;
    auto b2 = server_broadcast_from_json(to_json(b));
    CHECK(b2.kind == BroadcastKind::Anchors);
    CHECK(b2.anchors == b.anchors);
    CHECK(*b2.d_global == 5.5);
    CHECK(b2.round == 5);

    ServerBroadcast p;
    p.kind = BroadcastKind::Prototypes;
    p.prototypes = {{1, {1, {9, 8}, 3}}};
    p.round = 2;
    auto p2 = server_broadcast_from_json(to_json(p));
    CHECK(p2.prototypes == p.prototypes);
    CHECK_FALSE(p2.d_global.has_value());

    CHECK_THROWS(client_update_from_json(to_json(b)));
}

TEST_CASE("combined FedSA loss passes the finite-difference check on a 2-class K=4 model")
{
    RunConfig c = small_config();
    c.num_classes = 2;
    c.lambda2 = 1.0;
    auto d = toy_data(2, 5);
    auto state = toy_model(c, 1, 11);
    auto broadcast = anchors_broadcast(c);
    std::vector<std::span<const double>> inputs;
    std::vector<std::size_t> labels;
    for (std::size_t i : {0u, 1u, 2u, 35u, 36u, 40u}) {
        inputs.push_back(d.row(i));
        labels.push_back(d.labels[i]);
    }
    auto params = state.parameters();
    auto r = ad::finite_diff_check(
        [&](ad::Graph& g) {
            auto bound = models::bind(g, state);
            auto t = build_local_loss(g, bound, state, inputs, labels, broadcast, c, 2.0);
            CHECK(t.mcl.has_value());
            CHECK(t.cc.has_value());
            CHECK(t.regularizer.has_value());
            return t.total;
        },
        params);
    CHECK(r.passed(1e-4));
}

TEST_CASE("loss terms follow algorithm, ablation and weights")
{
    RunConfig c = small_config();
    auto d = toy_data(3, 1);
    auto state = toy_model(c, 0, 1);
    std::vector<std::span<const double>> inputs{d.row(0), d.row(50)};
    std::vector<std::size_t> labels{d.labels[0], d.labels[50]};
    auto terms = [&](const RunConfig& cfg, const ServerBroadcast& b) {
        ad::Graph g;
        auto bound = models::bind(g, state);
        return build_local_loss(g, bound, state, inputs, labels, b, cfg, 1.0);
    };
    auto fedsa_b = anchors_broadcast(c);
    auto full = terms(c, fedsa_b);
    CHECK(full.regularizer);
    CHECK(full.mcl);
    CHECK(full.cc);
    auto no_cc = c;
    no_cc.ablation.cc = false;
    CHECK_FALSE(terms(no_cc, fedsa_b).cc);
    auto no_mcl = c;
    no_mcl.lambda2 = 0.0;
    CHECK_FALSE(terms(no_mcl, fedsa_b).mcl);

    auto local = c;
    local.algorithm = Algorithm::LocalOnly;
    auto lo = terms(local, ServerBroadcast{});
    CHECK_FALSE(lo.regularizer);
    CHECK_FALSE(lo.mcl);
    CHECK_FALSE(lo.cc);
}

TEST_CASE("zero weights reproduce plain supervised training")
{
    RunConfig c = small_config();
    c.lambda1 = c.lambda2 = c.lambda3 = 0.0;
    auto d = toy_data(3, 2);
    auto train = all_indices(d);
    auto a = toy_model(c, 1, 5);
    auto b = a;
    auto ra = client_local_train(a, d, train, anchors_broadcast(c), c, 2);
    auto local = c;
    local.algorithm = Algorithm::LocalOnly;
    ServerBroadcast none;
    none.round = 0;
    auto rb = client_local_train(b, d, train, none, local, 2);
    for (std::size_t l = 0; l < a.layers.size(); ++l) CHECK(a.layers[l].weight.values == b.layers[l].weight.values);
    CHECK(a.phi.values == b.phi.values);
    CHECK(ra.mean_loss == rb.mean_loss);
}

TEST_CASE("strong anchor regularization pulls prototypes toward fixed anchors")
{
    RunConfig c = small_config();
    c.lambda1 = 5.0;
    c.lambda2 = 0.0;
    c.lambda3 = 0.0;
    c.local_epochs = 10;
    auto d = toy_data(3, 4);
    auto train = all_indices(d);
    auto state = toy_model(c, 1, 9);
    auto b = anchors_broadcast(c);
    auto mean_dist = [&](const models::ModelState& s) {
        std::map<std::size_t, Vec> sum;
        std::map<std::size_t, double> n;
        for (std::size_t i : train) {
            auto f = models::features(s, d.row(i));
            auto& acc = sum[d.labels[i]];
            acc.resize(f.size(), 0.0);
            for (std::size_t k = 0; k < f.size(); ++k) acc[k] += f[k];
            n[d.labels[i]] += 1;
        }
        double total = 0;
        for (auto& [cls, v] : sum) {
            for (auto& x : v) x /= n[cls];
            total += oracle::dist(v, b.anchors.anchors[cls]);
        }
        return total / static_cast<double>(sum.size());
    };
    const double before = mean_dist(state);
    client_local_train(state, d, train, b, c, 0);
    CHECK(mean_dist(state) < before);
}

TEST_CASE("FedProto regularizer vanishes when global prototypes equal the batch means")
{
    RunConfig c = small_config(Algorithm::FedProto);
    auto d = toy_data(3, 6);
    auto state = toy_model(c, 0, 2);
    std::vector<std::size_t> idx{0, 1, 40, 41, 42, 80};
    std::vector<std::span<const double>> inputs;
    std::vector<std::size_t> labels;
    std::map<std::size_t, std::vector<proto::Vector>> grouped;
    for (auto i : idx) {
        inputs.push_back(d.row(i));
        labels.push_back(d.labels[i]);
        grouped[d.labels[i]].push_back(models::features(state, d.row(i)));
    }
    ServerBroadcast b;
    b.kind = BroadcastKind::Prototypes;
    for (auto& p : proto::compute_local_prototypes(grouped)) b.prototypes[p.class_id] = p;
    ad::Graph g;
    auto bound = models::bind(g, state);
    auto t = build_local_loss(g, bound, state, inputs, labels, b, c, 0.0);
    REQUIRE(t.regularizer);
    CHECK(g.scalar_value(*t.regularizer) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-class clients fall back to the global margin")
{
    RunConfig c = small_config();
    auto d = toy_data(3, 7);
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] == 1) train.push_back(i);
    }
    auto state = toy_model(c, 0, 3);
    auto b = anchors_broadcast(c);
    auto r = client_local_train(state, d, train, b, c, 1);
    CHECK_FALSE(r.margin.d_local.has_value());
    CHECK(r.margin.d_star == *b.d_global);
    REQUIRE(r.update.prototypes.size() == 1);
    CHECK(r.update.prototypes[0].class_id == 1);
    CHECK(r.update.prototypes[0].count == train.size());
}

TEST_CASE("server rounds")
{
    RunConfig c = small_config();
    c.alpha = 1.0;
    auto s = init_server(c, 3);
    CHECK(s.last.kind == BroadcastKind::Anchors);
    CHECK(s.last.round == 0);
    const auto anchors0 = s.anchors;
    std::vector<ClientUpdate> ups{{0, 0, {{0, {1, 1, 1, 1}, 5}}}, {1, 0, {{2, {2, 2, 2, 2}, 5}}}};
    auto b1 = server_round(ups, s, c);
    CHECK(b1.round == 1);
    CHECK(b1.anchors.anchors == anchors0.anchors);
    for (auto& u : ups) u.round = 1;
    auto b2 = server_round(ups, s, c);
    CHECK(b2.round == 2);
    CHECK_THROWS_AS(server_round(ups, s, c), std::logic_error);

    auto empty = server_round({}, s, c);
    CHECK(empty.skipped);
    CHECK(empty.round == 3);

    RunConfig fp = small_config(Algorithm::FedProto);
    auto sp = init_server(fp, 3);
    std::vector<ClientUpdate> one{{2, 0, {{0, {1, 2, 3, 4}, 9}, {1, {0, 0, 0, 1}, 2}}}};
    auto bp = server_round(one, sp, fp);
    CHECK(bp.kind == BroadcastKind::Prototypes);
    CHECK(bp.prototypes.at(0).vector == proto::Vector{1, 2, 3, 4});
    CHECK(bp.prototypes.at(1).vector == proto::Vector{0, 0, 0, 1});
}

TEST_CASE("FedSA server applies the EMA to present classes only")
{
    RunConfig c = small_config();
    c.alpha = 0.5;
    auto s = init_server(c, 3);
    const auto a0 = s.anchors;
    std::vector<ClientUpdate> ups{{0, 0, {{1, {1, 1, 1, 1}, 4}}}};
    auto b = server_round(ups, s, c);
    CHECK(b.anchors.anchors[0] == a0.anchors[0]);
    CHECK(b.anchors.anchors[2] == a0.anchors[2]);
    for (std::size_t k = 0; k < 4; ++k) CHECK(b.anchors.anchors[1][k] == doctest::Approx(0.5 * a0.anchors[1][k] + 0.5));
    CHECK(*b.d_global == doctest::Approx(oracle::margin_as_printed(b.anchors.anchors)).epsilon(1e-12));
}

TEST_CASE("evaluation")
{
    RunConfig c = small_config();
    data::Dataset d;
    d.input_dim = 5;
    d.num_classes = 3;
    d.features.assign(5 * 6, 0.5);
    d.labels.assign(6, 0);
    auto state = toy_model(c, 0, 1);
    std::fill(state.phi.values.begin(), state.phi.values.end(), 0.0);
    auto r = evaluate(state, d, all_indices(d));
    CHECK(r.accuracy == 1.0);
    CHECK(r.samples == 6);
    CHECK(r.per_class[0] == 1.0);
    CHECK(std::isnan(r.per_class[1]));

    d.labels = {0, 1, 2, 1, 0, 2};
    CHECK(evaluate(state, d, all_indices(d)).accuracy == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("a trained model separates a two-class toy problem")
{
    RunConfig c = small_config(Algorithm::LocalOnly);
    c.num_classes = 2;
    c.local_epochs = 20;
    c.learning_rate = 0.05;
    auto d = toy_data(2, 12);
    auto split = data::split_train_test(all_indices(d), 0.75, 1);
    auto state = toy_model(c, 1, 4);
    client_local_train(state, d, split.train, ServerBroadcast{}, c, 0);
    CHECK(evaluate(state, d, split.test).accuracy > 0.9);
}

TEST_CASE("non-finite losses abort")
{
    RunConfig c = small_config();
    c.learning_rate = 1e6;
    c.rounds = 20;
    CHECK_THROWS_AS(run_experiment(c), TrainingDiverged);
}

TEST_CASE("experiment loop")
{
    RunConfig c = small_config();
    c.rounds = 0;
    CHECK(run_experiment(c).empty());

    c.rounds = 3;
    auto a = run_lines(c);
    CHECK(a.size() == 3);
    CHECK(run_lines(c) == a);
    c.threads = 3;
    CHECK(run_lines(c) == a);
    c.seed = 4;
    c.threads = 1;
    CHECK(run_lines(c) != a);
}

TEST_CASE("every algorithm runs and reports its diagnostics")
{
    for (auto alg : {Algorithm::FedSA, Algorithm::FedProto, Algorithm::FedTGP, Algorithm::LocalOnly}) {
        RunConfig c = small_config(alg);
        c.rho = 0.5;
        auto m = run_experiment(c);
        REQUIRE(m.size() == 3);
        for (const auto& r : m) {
            CHECK(r.client_accuracy.size() == c.clients);
            CHECK(r.participants == 2);
            CHECK(r.mean_accuracy >= r.min_accuracy);
            CHECK(r.max_accuracy >= r.mean_accuracy);
            CHECK(std::isnan(r.d_global) == (alg != Algorithm::FedSA));
            CHECK(std::isnan(r.global_proto_mean_pairwise_dist) == (alg == Algorithm::LocalOnly));
        }
    }
}

TEST_CASE("with alpha = 1 anchors never move")
{
    RunConfig c = small_config();
    c.alpha = 1.0;
    std::string replay;
    run_lines(c, &replay);
    std::istringstream in(replay);
    std::string line;
    std::optional<proto::AnchorSet> first;
    std::size_t broadcasts = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        if (j.at("schema") != kServerBroadcastSchema) continue;
        auto b = server_broadcast_from_json(j);
        if (!first) first = b.anchors;
        CHECK(b.anchors.anchors == first->anchors);
        ++broadcasts;
    }
    CHECK(broadcasts == c.rounds + 1);
}

TEST_CASE("round-0 anchors do not depend on client data")
{
    RunConfig a = small_config();
    RunConfig b = a;
    b.samples_per_class = 77;
    b.noise_sigma = 3.0;
    b.beta = 5.0;
    b.clients = 6;
    auto first_anchors = [](const RunConfig& c) {
        std::ostringstream log;
        RunOptions o;
        o.replay = &log;
        auto cfg = c;
        cfg.rounds = 1;
        run_experiment(cfg, o);
        std::istringstream in(log.str());
        std::string line;
        while (std::getline(in, line)) {
            auto j = nlohmann::json::parse(line);
            if (j.at("schema") == kServerBroadcastSchema) return server_broadcast_from_json(j).anchors;
        }
        return proto::AnchorSet{};
    };
    const auto direct = proto::init_anchors(a.num_classes, a.feature_dim, a.seed, a.anchor_steps).second;
    CHECK(first_anchors(a).anchors == direct.anchors);
    CHECK(first_anchors(b).anchors == direct.anchors);
}
