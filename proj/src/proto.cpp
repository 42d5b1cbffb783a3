#include "fedsa/proto.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fedsa/random.hpp"

namespace fedsa::proto {

double distance(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw std::invalid_argument("distance: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

std::vector<Prototype> compute_local_prototypes(const std::map<std::size_t, std::vector<Vector>>& grouped)
{
    std::vector<Prototype> out;
    for (const auto& [c, rows] : grouped) {
        if (rows.empty()) continue;
        Prototype p;
        p.class_id = c;
        p.count = rows.size();
        p.vector.assign(rows.front().size(), 0.0);
        for (const auto& r : rows) {
            if (r.size() != p.vector.size()) throw std::invalid_argument("compute_local_prototypes: ragged features");
            for (std::size_t k = 0; k < r.size(); ++k) p.vector[k] += r[k];
        }
        for (auto& v : p.vector) v /= static_cast<double>(rows.size());
        out.push_back(std::move(p));
    }
    return out;
}

PrototypeMap aggregate_global(std::span<const ClientPrototypes> updates)
{
    std::vector<const ClientPrototypes*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) ordered.push_back(&u);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

    struct Accum {
        std::size_t total = 0;         // N_c
        std::size_t contributors = 0;  // |N_c|
        std::vector<std::pair<std::size_t, const Vector*>> terms;
    };
    std::map<std::size_t, Accum> per_class;
    for (const auto* u : ordered) {
        for (const auto& p : u->prototypes) {
            for (double v : p.vector) {
                if (!std::isfinite(v)) {
                    throw std::invalid_argument("aggregate_global: non-finite prototype from client " +
                                                std::to_string(u->client_id));
                }
            }
            if (p.count == 0) continue;
            auto& acc = per_class[p.class_id];
            acc.total += p.count;
            acc.contributors += 1;
            acc.terms.emplace_back(p.count, &p.vector);
        }
    }

    PrototypeMap out;
    for (const auto& [c, acc] : per_class) {
        Prototype g;
        g.class_id = c;
        g.count = acc.total;
        g.vector.assign(acc.terms.front().second->size(), 0.0);
        const double n_c = static_cast<double>(acc.total);
        for (const auto& [count, vec] : acc.terms) {
            if (vec->size() != g.vector.size()) throw std::invalid_argument("aggregate_global: dimension mismatch");
            const double w = static_cast<double>(count) / n_c;
            for (std::size_t k = 0; k < g.vector.size(); ++k) g.vector[k] += w * (*vec)[k];
        }
        const double inv_contributors = 1.0 / static_cast<double>(acc.contributors);
        for (auto& v : g.vector) v *= inv_contributors;
        out.emplace(c, std::move(g));
    }
    return out;
}

std::optional<double> local_margin(std::span<const Vector> prototypes, MarginNormalization norm)
{
    const std::size_t n = prototypes.size();
    if (n < 2) return std::nullopt;
    double acc = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (a != b) acc += distance(prototypes[a], prototypes[b]);
        }
    }
    const double nm1 = static_cast<double>(n - 1);
    const double denom = norm == MarginNormalization::AsPrinted ? nm1 * nm1 : static_cast<double>(n) * nm1;
    return acc / denom;
}

double global_margin(const AnchorSet& anchors, MarginNormalization norm)
{
    auto m = local_margin(anchors.anchors, norm);
    if (!m) throw std::invalid_argument("global_margin: need at least two anchors");
    return *m;
}

MarginState client_margin(double d_global, std::optional<double> d_local)
{
    if (d_global < 0.0) throw std::invalid_argument("client_margin: negative global margin");
    MarginState s;
    s.d_global = d_global;
    s.d_local = d_local;
    s.d_star = d_local ? std::max(d_global, *d_local) : d_global;
    return s;
}

double mean_pairwise_distance(std::span<const Vector> vectors)
{
    const std::size_t n = vectors.size();
    if (n < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) acc += distance(vectors[a], vectors[b]);
    }
    return acc / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

AnchorSet ema_update(const AnchorSet& anchors, const PrototypeMap& global, double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_update: alpha must lie in [0, 1]");
    AnchorSet next = anchors;
    next.round = anchors.round + 1;
    for (const auto& [c, p] : global) {
        if (c >= next.anchors.size()) throw std::invalid_argument("ema_update: prototype for unknown class " + std::to_string(c));
        auto& a = next.anchors[c];
        if (a.size() != p.vector.size()) throw std::invalid_argument("ema_update: dimension mismatch");
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = alpha * a[k] + (1.0 - alpha) * p.vector[k];
    }
    return next;
}

std::vector<Vector> project_anchors(const ClassAnchorSeed& seed)
{
    const std::size_t rows = seed.psi.rows();
    const std::size_t cols = seed.psi.cols();
    std::vector<Vector> out;
    out.reserve(seed.raw.size());
    for (const auto& a : seed.raw) {
        Vector v(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += seed.psi.values[r * cols + c] * a[c];
            v[r] = acc;
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::pair<ClassAnchorSeed, AnchorSet> init_anchors(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                                                   std::size_t steps, const AnchorInitOptions& options)
{
    if (num_classes < 1 || dim < 1) throw std::invalid_argument("init_anchors: empty anchor shape");
    auto rng = make_stream(seed, {stream::kAnchors});
    std::normal_distribution<double> normal(0.0, 1.0);

    ClassAnchorSeed s;
    s.raw.assign(num_classes, Vector(dim));
    double radius = 0.0;
    for (auto& a : s.raw) {
        double sq = 0.0;
        for (auto& v : a) {
            v = normal(rng);
            sq += v * v;
        }
        radius = std::max(radius, std::sqrt(sq));
    }
    s.psi = ad::Tensor::zeros({dim, dim}, true);
    for (std::size_t i = 0; i < dim; ++i) s.psi.values[i * dim + i] = 1.0;

    if (num_classes >= 2) {
        ad::Graph g;
        for (std::size_t step = 0; step < steps; ++step) {
            ad::Var psi = g.parameter(s.psi);
            std::vector<ad::Var> projected;
            for (const auto& a : s.raw) projected.push_back(g.matvec(psi, g.constant(a)));
            std::vector<ad::Var> dists;
            for (std::size_t a = 0; a < num_classes; ++a) {
                for (std::size_t b = a + 1; b < num_classes; ++b) {
                    dists.push_back(g.euclidean_distance(projected[a], projected[b]));
                }
            }
            const ad::Var origin = g.constant(Vector(dim, 0.0));
            std::vector<ad::Var> excess;
            for (auto p : projected) {
                excess.push_back(g.squared_norm(g.relu(g.add_scalar(g.euclidean_distance(p, origin), -radius))));
            }
            const ad::Var loss = g.add(g.scale(g.mean(dists), -1.0), g.scale(g.sum(excess), options.norm_penalty));
            g.backward(loss);
            for (std::size_t i = 0; i < s.psi.values.size(); ++i) s.psi.values[i] -= options.learning_rate * s.psi.grad[i];
            g.clear();
        }
    }

    AnchorSet anchors;
    anchors.anchors = project_anchors(s);
    anchors.round = 0;
    return {std::move(s), std::move(anchors)};
}

PrototypeMap fedtgp_server_refine(const PrototypeMap& global, std::size_t steps, double margin_cap,
                                  const RefineOptions& options)
{
    if (global.size() < 2 || steps == 0) return global;

    std::vector<std::size_t> classes;
    std::vector<Vector> targets;
    for (const auto& [c, p] : global) {
        classes.push_back(c);
        targets.push_back(p.vector);
    }
    const double margin = std::min(mean_pairwise_distance(targets), margin_cap);
    const std::size_t n = classes.size();

    std::vector<ad::Tensor> trainable;
    trainable.reserve(n);
    for (const auto& t : targets) trainable.push_back(ad::Tensor::from(t, {t.size()}, true));

    ad::Graph g;
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<ad::Var> q;
        for (auto& t : trainable) q.push_back(g.parameter(t));
        std::vector<ad::Var> terms;
        for (std::size_t c = 0; c < n; ++c) {
            const ad::Var p = g.constant(targets[c]);
            std::vector<ad::Var> scores;
            scores.push_back(g.scale(g.add_scalar(g.euclidean_distance(p, q[c]), margin), -1.0));
            for (std::size_t o = 0; o < n; ++o) {
                if (o != c) scores.push_back(g.scale(g.euclidean_distance(p, q[o]), -1.0));
            }
            terms.push_back(g.softmax_cross_entropy(g.stack(scores), 0));
        }
        g.backward(g.mean(terms));
        for (auto& t : trainable) {
            for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= options.learning_rate * t.grad[i];
        }
        g.clear();
    }

    PrototypeMap out = global;
    for (std::size_t i = 0; i < n; ++i) {
        auto& v = out.at(classes[i]).vector;
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (std::isfinite(trainable[i].values[k])) v[k] = trainable[i].values[k];
        }
    }
    return out;
}

std::map<std::size_t, ad::Var> batch_class_means(ad::Graph& g, std::span<const ad::Var> features,
                                                 std::span<const std::size_t> labels)
{
    if (features.size() != labels.size()) throw std::invalid_argument("batch_class_means: features/labels length mismatch");
    std::map<std::size_t, std::vector<ad::Var>> grouped;
    for (std::size_t i = 0; i < features.size(); ++i) grouped[labels[i]].push_back(features[i]);
    std::map<std::size_t, ad::Var> out;
    for (const auto& [c, vars] : grouped) out.emplace(c, vars.size() == 1 ? vars.front() : g.mean(vars));
    return out;
}

std::vector<ad::Var> anchor_constants(ad::Graph& g, const AnchorSet& anchors)
{
    std::vector<ad::Var> out;
    out.reserve(anchors.anchors.size());
    for (const auto& a : anchors.anchors) out.push_back(g.constant(a));
    return out;
}

ad::Var regularization_loss(ad::Graph& g, const std::map<std::size_t, ad::Var>& prototypes,
                            std::span<const ad::Var> anchors)
{
    std::vector<ad::Var> terms;
    for (const auto& [c, p] : prototypes) {
        if (c >= anchors.size()) {
            throw std::invalid_argument("regularization_loss: no anchor for class " + std::to_string(c));
        }
        terms.push_back(g.euclidean_distance(p, anchors[c]));
    }
    if (terms.empty()) return g.scalar(0.0);
    return g.sum(terms);
}

ad::Var mcl_loss(ad::Graph& g, ad::Var prototype, std::size_t class_id, std::span<const ad::Var> anchors,
                 double d_star)
{
    if (anchors.size() < 2) throw std::invalid_argument("mcl_loss: need at least two anchors");
    if (class_id >= anchors.size()) throw std::invalid_argument("mcl_loss: no anchor for class " + std::to_string(class_id));
    std::vector<ad::Var> scores;
    scores.reserve(anchors.size());
    scores.push_back(g.scale(g.add_scalar(g.euclidean_distance(prototype, anchors[class_id]), d_star), -1.0));
    for (std::size_t c = 0; c < anchors.size(); ++c) {
        if (c != class_id) scores.push_back(g.scale(g.euclidean_distance(prototype, anchors[c]), -1.0));
    }
    return g.softmax_cross_entropy(g.stack(scores), 0);
}

ad::Var cc_loss(ad::Graph& g, ad::Var phi, std::span<const ad::Var> anchors)
{
    const auto& shape = g.shape(phi);
    if (shape.size() != 2 || shape[0] != anchors.size()) {
        throw std::invalid_argument("cc_loss: classifier shape " + ad::shape_string(shape) + " does not match " +
                                    std::to_string(anchors.size()) + " anchors");
    }
    std::vector<ad::Var> terms;
    terms.reserve(anchors.size());
    for (std::size_t c = 0; c < anchors.size(); ++c) {
        terms.push_back(g.softmax_cross_entropy(g.matvec(phi, anchors[c]), c));
    }
    return g.mean(terms);
}

ad::Var fedproto_reg_loss(ad::Graph& g, const std::map<std::size_t, ad::Var>& prototypes, const PrototypeMap& global)
{
    std::vector<ad::Var> terms;
    for (const auto& [c, p] : prototypes) {
        auto it = global.find(c);
        if (it == global.end()) continue;
        terms.push_back(g.euclidean_distance(p, g.constant(it->second.vector)));
    }
    if (terms.empty()) return g.scalar(0.0);
    return g.sum(terms);
}

}  // namespace fedsa::proto
