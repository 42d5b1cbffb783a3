#include "fedsa/fed.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "fedsa/random.hpp"

namespace fedsa::fed {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument("config: " + what);
}

}  // namespace

std::string to_string(Algorithm a)
{
    switch (a) {
    case Algorithm::FedSA: return "FedSA";
    case Algorithm::FedProto: return "FedProto";
    case Algorithm::FedTGP: return "FedTGP";
    case Algorithm::LocalOnly: return "LocalOnly";
    }
    return "?";
}

Algorithm parse_algorithm(const std::string& name)
{
    for (auto a : {Algorithm::FedSA, Algorithm::FedProto, Algorithm::FedTGP, Algorithm::LocalOnly}) {
        if (to_string(a) == name) return a;
    }
    throw std::invalid_argument("unknown algorithm '" + name + "' (expected FedSA, FedProto, FedTGP or LocalOnly)");
}

void RunConfig::validate() const
{
    check(clients >= 1, "clients must be at least 1");
    check(rho > 0.0 && rho <= 1.0, "rho must lie in (0, 1]");
    check(local_epochs >= 1, "local_epochs must be at least 1");
    check(batch_size >= 1, "batch_size must be at least 1");
    check(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    check(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0, "lambda1..lambda3 must be non-negative");
    check(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    check(beta > 0.0, "beta must be positive");
    check(feature_dim >= 1, "feature_dim must be at least 1");
    check(zoo_size >= 1 && zoo_size <= models::kMaxZooSize, "zoo_size must lie in [1, 8]");
    check(num_classes >= 2, "num_classes must be at least 2");
    check(input_dim >= 1, "input_dim must be at least 1");
    check(samples_per_class >= 4, "samples_per_class must be at least 4");
    check(center_scale >= 0.0 && noise_sigma >= 0.0, "center_scale and noise_sigma must be non-negative");
    check(train_ratio > 0.0 && train_ratio < 1.0, "train_ratio must lie in (0, 1)");
    check(anchor_learning_rate > 0.0, "anchor_learning_rate must be positive");
    check(tgp_margin_cap >= 0.0 && tgp_learning_rate > 0.0, "tgp_margin_cap must be >= 0 and tgp_learning_rate > 0");
    check(threads >= 1, "threads must be at least 1");
}

// --- messages -----------------------------------------------------------------

namespace {

json prototype_json(const proto::Prototype& p)
{
    return json{{"class_id", p.class_id}, {"vector", p.vector}, {"count", p.count}};
}

proto::Prototype prototype_from(const json& j)
{
    proto::Prototype p;
    p.class_id = j.at("class_id").get<std::size_t>();
    p.vector = j.at("vector").get<std::vector<double>>();
    p.count = j.at("count").get<std::size_t>();
    return p;
}

void expect_schema(const json& j, const char* schema)
{
    const auto tag = j.at("schema").get<std::string>();
    if (tag != schema) throw std::invalid_argument("message schema '" + tag + "', expected '" + schema + "'");
}

std::string kind_name(BroadcastKind k)
{
    switch (k) {
    case BroadcastKind::None: return "none";
    case BroadcastKind::Anchors: return "anchors";
    case BroadcastKind::Prototypes: return "prototypes";
    }
    return "none";
}

BroadcastKind kind_from(const std::string& s)
{
    if (s == "anchors") return BroadcastKind::Anchors;
    if (s == "prototypes") return BroadcastKind::Prototypes;
    if (s == "none") return BroadcastKind::None;
    throw std::invalid_argument("unknown broadcast kind '" + s + "'");
}

}  // namespace

json to_json(const ClientUpdate& u)
{
    json protos = json::array();
    for (const auto& p : u.prototypes) protos.push_back(prototype_json(p));
    return json{{"schema", kClientUpdateSchema}, {"client_id", u.client_id}, {"round", u.round}, {"prototypes", protos}};
}

json to_json(const ServerBroadcast& b)
{
    json j{{"schema", kServerBroadcastSchema}, {"kind", kind_name(b.kind)}, {"round", b.round}, {"skipped", b.skipped}};
    j["d_global"] = b.d_global ? json(*b.d_global) : json(nullptr);
    if (b.kind == BroadcastKind::Anchors) {
        j["anchors"] = json{{"anchors", b.anchors.anchors}, {"round", b.anchors.round}};
    }
    if (b.kind == BroadcastKind::Prototypes) {
        json protos = json::array();
        for (const auto& [c, p] : b.prototypes) protos.push_back(prototype_json(p));
        j["prototypes"] = protos;
    }
    return j;
}

ClientUpdate client_update_from_json(const json& j)
{
    expect_schema(j, kClientUpdateSchema);
    ClientUpdate u;
    u.client_id = j.at("client_id").get<std::size_t>();
    u.round = j.at("round").get<std::size_t>();
    for (const auto& p : j.at("prototypes")) u.prototypes.push_back(prototype_from(p));
    return u;
}

ServerBroadcast server_broadcast_from_json(const json& j)
{
    expect_schema(j, kServerBroadcastSchema);
    ServerBroadcast b;
    b.kind = kind_from(j.at("kind").get<std::string>());
    b.round = j.at("round").get<std::size_t>();
    b.skipped = j.value("skipped", false);
    if (!j.at("d_global").is_null()) b.d_global = j.at("d_global").get<double>();
    if (b.kind == BroadcastKind::Anchors) {
        b.anchors.anchors = j.at("anchors").at("anchors").get<std::vector<std::vector<double>>>();
        b.anchors.round = j.at("anchors").at("round").get<std::size_t>();
    }
    if (b.kind == BroadcastKind::Prototypes) {
        for (const auto& p : j.at("prototypes")) {
            auto proto = prototype_from(p);
            b.prototypes.emplace(proto.class_id, std::move(proto));
        }
    }
    return b;
}

TrainingDiverged::TrainingDiverged(std::size_t r, std::size_t c, const std::string& t, double value)
    : std::runtime_error("non-finite loss term " + t + " (" + std::to_string(value) + ") in round " +
                         std::to_string(r) + " on client " + std::to_string(c)),
      round(r),
      client(c),
      term(t)
{
}

// --- client ---------------------------------------------------------------------

std::vector<std::size_t> sample_clients(std::size_t m, double rho, std::size_t round, std::uint64_t seed)
{
    if (m == 0) return {};
    auto n = static_cast<std::size_t>(std::llround(rho * static_cast<double>(m)));
    n = std::clamp<std::size_t>(n, 1, m);
    std::vector<std::size_t> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    if (n == m) return ids;
    auto rng = make_stream(seed, {stream::kSampling, round});
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, m - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

struct FullPrototypes {
    std::vector<proto::Prototype> prototypes;
    double intra_class_variance = 0.0;
};

FullPrototypes full_prototypes(const models::ModelState& state, const data::Dataset& ds,
                               std::span<const std::size_t> indices)
{
    std::map<std::size_t, std::vector<proto::Vector>> grouped;
    for (auto i : indices) grouped[ds.labels[i]].push_back(models::features(state, ds.row(i)));
    FullPrototypes out;
    out.prototypes = proto::compute_local_prototypes(grouped);
    double total = 0.0;
    for (const auto& p : out.prototypes) {
        double acc = 0.0;
        for (const auto& f : grouped[p.class_id]) {
            const double d = proto::distance(f, p.vector);
            acc += d * d;
        }
        total += acc / static_cast<double>(p.count);
    }
    if (!out.prototypes.empty()) out.intra_class_variance = total / static_cast<double>(out.prototypes.size());
    return out;
}

void require_finite(ad::Graph& g, ad::Var v, std::size_t round, std::size_t client, const char* term)
{
    const double x = g.scalar_value(v);
    if (!std::isfinite(x)) throw TrainingDiverged(round, client, term, x);
}

}  // namespace

LossTerms build_local_loss(ad::Graph& g, const models::BoundModel& bound, const models::ModelState& state,
                           std::span<const std::span<const double>> inputs, std::span<const std::size_t> labels,
                           const ServerBroadcast& broadcast, const RunConfig& config, double d_star)
{
    if (inputs.size() != labels.size() || inputs.empty()) {
        throw std::invalid_argument("build_local_loss: need a non-empty batch with one label per input");
    }
    const bool fedsa = config.algorithm == Algorithm::FedSA && broadcast.kind == BroadcastKind::Anchors;
    const bool baseline = (config.algorithm == Algorithm::FedProto || config.algorithm == Algorithm::FedTGP) &&
                          broadcast.kind == BroadcastKind::Prototypes;
    const bool use_reg = (fedsa || baseline) && config.lambda1 > 0.0;
    const bool use_mcl = fedsa && config.ablation.mcl && config.lambda2 > 0.0;
    const bool use_cc = fedsa && config.ablation.cc && config.lambda3 > 0.0;

    std::vector<ad::Var> feats;
    std::vector<ad::Var> ce_terms;
    feats.reserve(inputs.size());
    ce_terms.reserve(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const ad::Var f = models::forward_features(g, bound, state, g.constant(inputs[k]));
        feats.push_back(f);
        ce_terms.push_back(g.softmax_cross_entropy(models::forward_logits(g, bound, state, f), labels[k]));
    }

    LossTerms terms;
    terms.supervised = g.mean(ce_terms);
    std::vector<ad::Var> total{terms.supervised};
    if (use_reg || use_mcl || use_cc) {
        const auto protos = proto::batch_class_means(g, feats, labels);
        if (fedsa) {
            const auto anchors = proto::anchor_constants(g, broadcast.anchors);
            if (use_reg) {
                terms.regularizer = proto::regularization_loss(g, protos, anchors);
                total.push_back(g.scale(*terms.regularizer, config.lambda1));
            }
            if (use_mcl) {
                std::vector<ad::Var> per_class;
                for (const auto& [c, p] : protos) per_class.push_back(proto::mcl_loss(g, p, c, anchors, d_star));
                terms.mcl = g.mean(per_class);
                total.push_back(g.scale(*terms.mcl, config.lambda2));
            }
            if (use_cc) {
                terms.cc = proto::cc_loss(g, bound.phi, anchors);
                total.push_back(g.scale(*terms.cc, config.lambda3));
            }
        } else {
            terms.regularizer = proto::fedproto_reg_loss(g, protos, broadcast.prototypes);
            total.push_back(g.scale(*terms.regularizer, config.lambda1));
        }
    }
    terms.total = total.size() == 1 ? total.front() : g.sum(total);
    return terms;
}

LocalTrainResult client_local_train(models::ModelState& state, const data::Dataset& dataset,
                                    std::span<const std::size_t> train, const ServerBroadcast& broadcast,
                                    const RunConfig& config, std::size_t client_id)
{
    if (train.empty()) throw std::invalid_argument("client_local_train: client " + std::to_string(client_id) + " has no training data");
    const std::size_t round = broadcast.round;

    LocalTrainResult result;
    if (config.algorithm == Algorithm::FedSA && broadcast.kind == BroadcastKind::Anchors) {
        // Local margin from the prototypes of the model as it arrives this round.
        const double d_global = broadcast.d_global.value_or(proto::global_margin(broadcast.anchors, config.margin_normalization));
        std::optional<double> d_local;
        if (config.ablation.mcl && config.lambda2 > 0.0) {
            const auto current = full_prototypes(state, dataset, train);
            std::vector<proto::Vector> vecs;
            for (const auto& p : current.prototypes) vecs.push_back(p.vector);
            d_local = proto::local_margin(vecs, config.margin_normalization);
        }
        result.margin = proto::client_margin(d_global, d_local);
    }

    auto rng = make_stream(config.seed, {stream::kLocalTrain, client_id, round});
    std::vector<std::size_t> order(train.begin(), train.end());
    state.zero_grad();

    ad::Graph g;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    std::vector<std::span<const double>> inputs;
    std::vector<std::size_t> labels;
    for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            inputs.clear();
            labels.clear();
            for (std::size_t k = start; k < end; ++k) {
                inputs.push_back(dataset.row(order[k]));
                labels.push_back(dataset.labels[order[k]]);
            }
            const auto bound = models::bind(g, state);
            const auto terms = build_local_loss(g, bound, state, inputs, labels, broadcast, config, result.margin.d_star);
            require_finite(g, terms.supervised, round, client_id, "L_S");
            if (terms.regularizer) require_finite(g, *terms.regularizer, round, client_id, "L_R");
            if (terms.mcl) require_finite(g, *terms.mcl, round, client_id, "L_MCL");
            if (terms.cc) require_finite(g, *terms.cc, round, client_id, "L_CC");
            require_finite(g, terms.total, round, client_id, "total");
            loss_sum += g.scalar_value(terms.total);
            ++steps;
            g.backward(terms.total);
            models::sgd_step(state, config.learning_rate);
            g.clear();
        }
    }

    auto full = full_prototypes(state, dataset, train);
    result.update.client_id = client_id;
    result.update.round = round;
    result.update.prototypes = std::move(full.prototypes);
    result.intra_class_variance = full.intra_class_variance;
    result.mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    return result;
}

// --- server ---------------------------------------------------------------------

ServerState init_server(const RunConfig& config, std::size_t num_classes)
{
    ServerState s;
    s.round = 0;
    s.last.round = 0;
    if (config.algorithm == Algorithm::FedSA) {
        const std::size_t steps = config.ablation.embedding_projection ? config.anchor_steps : 0;
        proto::AnchorInitOptions opts;
        opts.learning_rate = config.anchor_learning_rate;
        auto [seed, anchors] = proto::init_anchors(num_classes, config.feature_dim, config.seed, steps, opts);
        s.anchor_seed = std::move(seed);
        s.anchors = std::move(anchors);
        s.last.kind = BroadcastKind::Anchors;
        s.last.anchors = s.anchors;
        s.last.d_global = proto::global_margin(s.anchors, config.margin_normalization);
    } else if (config.algorithm == Algorithm::LocalOnly) {
        s.last.kind = BroadcastKind::None;
    } else {
        s.last.kind = BroadcastKind::Prototypes;
    }
    return s;
}

ServerBroadcast server_round(std::span<const ClientUpdate> updates, ServerState& state, const RunConfig& config)
{
    for (const auto& u : updates) {
        if (u.round != state.round) {
            throw std::logic_error("server_round: update from client " + std::to_string(u.client_id) + " is tagged round " +
                                   std::to_string(u.round) + ", server is at round " + std::to_string(state.round));
        }
    }

    ServerBroadcast next = state.last;
    next.skipped = false;
    ++state.round;
    next.round = state.round;

    if (updates.empty()) {
        next.skipped = true;
        if (next.kind == BroadcastKind::Anchors) {
            state.anchors.round = state.round;
            next.anchors = state.anchors;
        }
        state.last = next;
        return next;
    }

    switch (config.algorithm) {
    case Algorithm::LocalOnly:
        break;
    case Algorithm::FedSA:
    case Algorithm::FedProto:
    case Algorithm::FedTGP: {
        std::vector<proto::ClientPrototypes> collected;
        collected.reserve(updates.size());
        for (const auto& u : updates) collected.push_back({u.client_id, u.prototypes});
        auto global = proto::aggregate_global(collected);
        if (config.algorithm == Algorithm::FedSA) {
            state.anchors = proto::ema_update(state.anchors, global, config.alpha);
            next.anchors = state.anchors;
            next.d_global = proto::global_margin(state.anchors, config.margin_normalization);
        } else if (config.algorithm == Algorithm::FedProto) {
            next.prototypes = std::move(global);
        } else {
            proto::RefineOptions opts;
            opts.learning_rate = config.tgp_learning_rate;
            next.prototypes = proto::fedtgp_server_refine(global, config.tgp_steps, config.tgp_margin_cap, opts);
        }
        break;
    }
    }
    state.last = next;
    return next;
}

EvalResult evaluate(const models::ModelState& state, const data::Dataset& dataset, std::span<const std::size_t> test)
{
    EvalResult r;
    const std::size_t classes = state.num_classes();
    std::vector<std::size_t> hits(classes, 0);
    std::vector<std::size_t> seen(classes, 0);
    std::size_t correct = 0;
    for (auto i : test) {
        const std::size_t y = dataset.labels[i];
        const bool ok = models::predict(state, dataset.row(i)) == y;
        correct += ok;
        if (y < classes) {
            ++seen[y];
            hits[y] += ok;
        }
    }
    r.samples = test.size();
    r.accuracy = test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
    r.per_class.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        r.per_class[c] = seen[c] ? static_cast<double>(hits[c]) / static_cast<double>(seen[c]) : kNaN;
    }
    return r;
}

// --- experiment -------------------------------------------------------------------

namespace {

struct Client {
    std::size_t id = 0;
    models::ModelState model;
    data::Split split;
};

// Runs fn(k) for k in [0, n) on up to `threads` workers; exceptions are
// rethrown in index order.
template <typename Fn>
void for_each_index(std::size_t n, std::size_t threads, Fn&& fn)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                fn(k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(threads, n);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void log_message(std::ostream* out, const json& j)
{
    if (out) *out << j.dump() << '\n';
}

}  // namespace

std::vector<RoundMetrics> run_experiment(const RunConfig& config, const RunOptions& options)
{
    config.validate();
    std::vector<RoundMetrics> metrics;
    if (config.rounds == 0) return metrics;

    const std::size_t num_classes_hint = config.dataset_path.empty() ? config.num_classes : 0;

    // Anchors come first: they never see client data.
    std::optional<ServerState> server;
    if (num_classes_hint) server = init_server(config, num_classes_hint);

    data::Dataset dataset;
    if (config.dataset_path.empty()) {
        data::SyntheticSpec spec;
        spec.num_classes = config.num_classes;
        spec.input_dim = config.input_dim;
        spec.center_scale = config.center_scale;
        spec.noise_sigma = config.noise_sigma;
        spec.samples_per_class = config.samples_per_class;
        dataset = data::generate_synthetic(spec, config.seed);
    } else {
        dataset = data::load_table(config.dataset_path);
        server = init_server(config, dataset.num_classes);
    }

    const auto plan = data::dirichlet_partition(dataset.labels, dataset.num_classes, config.clients, config.beta,
                                                config.seed, std::max<std::size_t>(config.min_per_client, 4));
    const auto zoo = models::build_zoo(config.zoo_size, dataset.input_dim, config.feature_dim, config.seed);

    std::vector<Client> clients(config.clients);
    for (std::size_t i = 0; i < config.clients; ++i) {
        auto& c = clients[i];
        c.id = i;
        c.split = data::split_train_test(plan.client_indices[i], config.train_ratio, derive_seed(config.seed, {i}));
        const std::size_t arch = models::architecture_for_client(i, config.zoo_size);
        c.model = models::init_parameters(zoo[arch], dataset.num_classes, derive_seed(config.seed, {i}), arch);
    }

    log_message(options.replay, to_json(server->last));

    for (std::size_t t = 0; t < config.rounds; ++t) {
        const auto started = std::chrono::steady_clock::now();
        const ServerBroadcast broadcast = server->last;
        const auto participants = sample_clients(config.clients, config.rho, t, config.seed);

        std::vector<LocalTrainResult> results(participants.size());
        for_each_index(participants.size(), config.threads, [&](std::size_t k) {
            auto& c = clients[participants[k]];
            results[k] = client_local_train(c.model, dataset, c.split.train, broadcast, config, c.id);
        });

        std::vector<ClientUpdate> updates;
        if (config.algorithm != Algorithm::LocalOnly) {
            updates.reserve(results.size());
            for (const auto& r : results) {
                log_message(options.replay, to_json(r.update));
                updates.push_back(r.update);
            }
        }
        const ServerBroadcast next = server_round(updates, *server, config);
        if (config.algorithm != Algorithm::LocalOnly) log_message(options.replay, to_json(next));

        RoundMetrics m;
        m.round = t + 1;
        m.participants = participants.size();
        m.skipped = next.skipped && config.algorithm != Algorithm::LocalOnly;
        m.client_accuracy.resize(config.clients);
        for_each_index(config.clients, config.threads, [&](std::size_t i) {
            m.client_accuracy[i] = evaluate(clients[i].model, dataset, clients[i].split.test).accuracy;
        });
        m.mean_accuracy = std::accumulate(m.client_accuracy.begin(), m.client_accuracy.end(), 0.0) /
                          static_cast<double>(config.clients);
        const auto [lo, hi] = std::minmax_element(m.client_accuracy.begin(), m.client_accuracy.end());
        m.min_accuracy = *lo;
        m.max_accuracy = *hi;

        double variance = 0.0;
        for (const auto& r : results) variance += r.intra_class_variance;
        m.mean_intra_class_variance = results.empty() ? kNaN : variance / static_cast<double>(results.size());

        switch (next.kind) {
        case BroadcastKind::Anchors:
            m.global_proto_mean_pairwise_dist = proto::mean_pairwise_distance(next.anchors.anchors);
            m.d_global = next.d_global.value_or(kNaN);
            break;
        case BroadcastKind::Prototypes: {
            std::vector<proto::Vector> vecs;
            for (const auto& [c, p] : next.prototypes) vecs.push_back(p.vector);
            m.global_proto_mean_pairwise_dist = vecs.size() >= 2 ? proto::mean_pairwise_distance(vecs) : kNaN;
            m.d_global = kNaN;
            break;
        }
        case BroadcastKind::None:
            m.global_proto_mean_pairwise_dist = kNaN;
            m.d_global = kNaN;
            break;
        }
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (options.on_round) options.on_round(m);
        metrics.push_back(std::move(m));
    }
    return metrics;
}

}  // namespace fedsa::fed
