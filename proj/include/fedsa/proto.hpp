#pragma once

// Prototype and semantic-anchor mathematics shared by the FedSA client, the
// FedSA server, and the FedProto / FedTGP baselines.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedsa/autodiff.hpp"

namespace fedsa::proto {

using Vector = std::vector<double>;

struct Prototype {
    std::size_t class_id = 0;
    Vector vector;
    std::size_t count = 0;  // supporting samples

    bool operator==(const Prototype&) const = default;
};

using PrototypeMap = std::map<std::size_t, Prototype>;

struct ClientPrototypes {
    std::size_t client_id = 0;
    std::vector<Prototype> prototypes;
};

// One anchor per class, every round.
struct AnchorSet {
    std::vector<Vector> anchors;  // C x K
    std::size_t round = 0;

    std::size_t num_classes() const { return anchors.size(); }
    std::size_t dim() const { return anchors.empty() ? 0 : anchors.front().size(); }
    bool operator==(const AnchorSet&) const = default;
};

struct MarginState {
    double d_global = 0.0;
    std::optional<double> d_local;
    double d_star = 0.0;
};

// Pre-defined class anchors A (fixed) and the embedding layer psi that maps
// them to the round-0 semantic anchors.
struct ClassAnchorSeed {
    std::vector<Vector> raw;  // C x D, D = K
    ad::Tensor psi;           // K x D
};

// How the pairwise-distance sum of a margin is normalised.
enum class MarginNormalization {
    AsPrinted,  // 1 / (N-1)^2 over N(N-1) ordered pairs
    PairCount,  // 1 / (N(N-1)), a true average
};

// --- plain arithmetic -------------------------------------------------------

double distance(std::span<const double> a, std::span<const double> b);

// Per-class arithmetic mean. Empty groups are omitted.
std::vector<Prototype> compute_local_prototypes(const std::map<std::size_t, std::vector<Vector>>& grouped);

// Weighted aggregation over contributing clients:
//   P^c = (1/|N_c|) * sum_i (|D_ic| / N_c) * P_i^c
// reduced in ascending client-id order. `count` of the result is N_c.
PrototypeMap aggregate_global(std::span<const ClientPrototypes> updates);

// Average pairwise margin of a set of prototypes; nullopt for fewer than two.
std::optional<double> local_margin(std::span<const Vector> prototypes,
                                   MarginNormalization norm = MarginNormalization::AsPrinted);
double global_margin(const AnchorSet& anchors, MarginNormalization norm = MarginNormalization::AsPrinted);

// d_star = max(d_global, d_local), or d_global when the local margin is undefined.
MarginState client_margin(double d_global, std::optional<double> d_local);

// Mean over unordered pairs; used for diagnostics only.
double mean_pairwise_distance(std::span<const Vector> vectors);

// A^{t+1,c} = alpha * A^{t,c} + (1 - alpha) * P^c for classes present in
// `global`; other anchors carry over. The round index advances by one.
AnchorSet ema_update(const AnchorSet& anchors, const PrototypeMap& global, double alpha);

struct AnchorInitOptions {
    double learning_rate = 0.01;
    // Weight of sum_c relu(|A^c| - radius)^2; radius is the largest norm
    // among the raw anchors.
    double norm_penalty = 1.0;
};

// Draws A ~ N(0, 1)^{C x K}, starts psi at the identity and runs `steps`
// gradient steps that increase the mean pairwise distance of psi * A^c while
// penalising anchors that leave the initial radius. Depends only on its
// arguments, never on client data.
std::pair<ClassAnchorSeed, AnchorSet> init_anchors(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                                                   std::size_t steps, const AnchorInitOptions& options = {});

// Anchors as produced by the embedding layer from the raw class anchors.
std::vector<Vector> project_anchors(const ClassAnchorSeed& seed);

struct RefineOptions {
    double learning_rate = 0.01;
};

// Simplified FedTGP server step: trainable copies Q of the global prototypes
// are fitted to a margin-enhanced contrastive objective in which each P^c
// must be closer to Q^c than to any other Q^{c'} by the margin
// min(mean pairwise distance of P, margin_cap).
PrototypeMap fedtgp_server_refine(const PrototypeMap& global, std::size_t steps, double margin_cap,
                                  const RefineOptions& options = {});

// --- differentiable terms ---------------------------------------------------

// Batch class means of feature nodes, keyed by class.
std::map<std::size_t, ad::Var> batch_class_means(ad::Graph& g, std::span<const ad::Var> features,
                                                 std::span<const std::size_t> labels);

std::vector<ad::Var> anchor_constants(ad::Graph& g, const AnchorSet& anchors);

// sum_c |P^c - A^c|. Throws if a prototype's class has no anchor.
ad::Var regularization_loss(ad::Graph& g, const std::map<std::size_t, ad::Var>& prototypes,
                            std::span<const ad::Var> anchors);

// -log softmax over (-(d(P, A^c) + d_star), -d(P, A^{c'}) ...)[0]. d_star is a constant.
ad::Var mcl_loss(ad::Graph& g, ad::Var prototype, std::size_t class_id, std::span<const ad::Var> anchors,
                 double d_star);

// -(1/C) sum_c log softmax(phi * A^c)[c]; anchors are constants.
ad::Var cc_loss(ad::Graph& g, ad::Var phi, std::span<const ad::Var> anchors);

// sum over classes holding a global prototype of |P^c - Pbar^c|.
// Returns a zero constant when no class overlaps.
ad::Var fedproto_reg_loss(ad::Graph& g, const std::map<std::size_t, ad::Var>& prototypes,
                          const PrototypeMap& global);

}  // namespace fedsa::proto
