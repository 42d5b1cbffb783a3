#pragma once

// Round-synchronous federated training: client sampling, local training,
// server aggregation and anchor maintenance, evaluation, and the experiment
// loop. Clients and server only exchange ClientUpdate / ServerBroadcast values.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedsa/data.hpp"
#include "fedsa/models.hpp"
#include "fedsa/proto.hpp"

namespace fedsa::fed {

enum class Algorithm { FedSA, FedProto, FedTGP, LocalOnly };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

// FedSA components that can be switched off. EMA and the anchor regulariser
// are always on.
struct Ablation {
    bool embedding_projection = true;
    bool mcl = true;
    bool cc = true;

    bool operator==(const Ablation&) const = default;
};

struct RunConfig {
    Algorithm algorithm = Algorithm::FedSA;
    std::size_t clients = 20;  // m
    double rho = 1.0;
    std::size_t rounds = 1000;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 10;
    double learning_rate = 0.01;
    double lambda1 = 0.1;
    double lambda2 = 0.01;
    double lambda3 = 1.0;
    double alpha = 0.9999;
    double beta = 0.1;
    std::size_t feature_dim = 16;  // K
    std::size_t zoo_size = 1;      // X
    std::uint64_t seed = 0;
    Ablation ablation;

    // Synthetic data, ignored when dataset_path is set.
    std::size_t num_classes = 10;
    std::size_t input_dim = 20;
    std::size_t samples_per_class = 200;
    double center_scale = 1.0;
    double noise_sigma = 1.0;
    std::string dataset_path;
    std::size_t min_per_client = 10;
    double train_ratio = 0.75;

    std::size_t anchor_steps = 200;
    double anchor_learning_rate = 0.01;
    std::size_t tgp_steps = 100;
    double tgp_margin_cap = 100.0;
    double tgp_learning_rate = 0.01;
    proto::MarginNormalization margin_normalization = proto::MarginNormalization::AsPrinted;

    // Worker threads for the clients of one round; results do not depend on it.
    std::size_t threads = 1;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct ClientUpdate {
    std::size_t client_id = 0;
    std::size_t round = 0;  // round of the broadcast the client trained against
    std::vector<proto::Prototype> prototypes;
};

enum class BroadcastKind { None, Anchors, Prototypes };

struct ServerBroadcast {
    BroadcastKind kind = BroadcastKind::None;
    proto::AnchorSet anchors;          // Anchors
    proto::PrototypeMap prototypes;    // Prototypes
    std::optional<double> d_global;    // Anchors only
    std::size_t round = 0;
    bool skipped = false;              // no update reached the server
};

inline constexpr const char* kClientUpdateSchema = "fedsa.client_update/v1";
inline constexpr const char* kServerBroadcastSchema = "fedsa.server_broadcast/v1";

nlohmann::json to_json(const ClientUpdate& u);
nlohmann::json to_json(const ServerBroadcast& b);
ClientUpdate client_update_from_json(const nlohmann::json& j);
ServerBroadcast server_broadcast_from_json(const nlohmann::json& j);

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t round, std::size_t client, const std::string& term, double value);
    std::size_t round;
    std::size_t client;
    std::string term;
};

// round(rho * m) distinct ids (at least one), ascending.
std::vector<std::size_t> sample_clients(std::size_t m, double rho, std::size_t round, std::uint64_t seed);

// Differentiable pieces of one mini-batch objective
//   L_S + lambda1 L_R + lambda2 L_MCL + lambda3 L_CC   (FedSA)
//   L_S + lambda1 L_R                                  (FedProto, FedTGP)
// Terms switched off by the algorithm, the ablation flags or a zero weight
// are absent. Batch class means stand in for the local prototypes.
struct LossTerms {
    ad::Var total;
    ad::Var supervised;
    std::optional<ad::Var> regularizer;
    std::optional<ad::Var> mcl;
    std::optional<ad::Var> cc;
};

LossTerms build_local_loss(ad::Graph& g, const models::BoundModel& bound, const models::ModelState& state,
                           std::span<const std::span<const double>> inputs, std::span<const std::size_t> labels,
                           const ServerBroadcast& broadcast, const RunConfig& config, double d_star);

struct LocalTrainResult {
    ClientUpdate update;
    double intra_class_variance = 0.0;  // mean over held classes of E|f - P^c|^2
    double mean_loss = 0.0;
    proto::MarginState margin;  // meaningful for FedSA
};

LocalTrainResult client_local_train(models::ModelState& state, const data::Dataset& dataset,
                                    std::span<const std::size_t> train, const ServerBroadcast& broadcast,
                                    const RunConfig& config, std::size_t client_id);

struct ServerState {
    proto::AnchorSet anchors;
    proto::ClassAnchorSeed anchor_seed;
    std::size_t round = 0;
    ServerBroadcast last;
};

// Builds the round-0 server state (anchors for FedSA) and its broadcast.
ServerState init_server(const RunConfig& config, std::size_t num_classes);

// Consumes the updates of the current round and returns the next broadcast.
// Throws if an update is tagged with another round.
ServerBroadcast server_round(std::span<const ClientUpdate> updates, ServerState& state, const RunConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class;  // NaN for classes absent from the test set
    std::size_t samples = 0;
};

EvalResult evaluate(const models::ModelState& state, const data::Dataset& dataset, std::span<const std::size_t> test);

struct RoundMetrics {
    std::size_t round = 0;  // 1-based, after aggregation
    std::vector<double> client_accuracy;
    double mean_accuracy = 0.0;
    double min_accuracy = 0.0;
    double max_accuracy = 0.0;
    double global_proto_mean_pairwise_dist = 0.0;  // anchors for FedSA; NaN for LocalOnly
    double mean_intra_class_variance = 0.0;
    double d_global = 0.0;  // NaN unless FedSA
    std::size_t participants = 0;
    bool skipped = false;
    double wall_seconds = 0.0;
};

struct RunOptions {
    // JSON lines of every exchanged message.
    std::ostream* replay = nullptr;
    std::function<void(const RoundMetrics&)> on_round;
};

std::vector<RoundMetrics> run_experiment(const RunConfig& config, const RunOptions& options = {});

}  // namespace fedsa::fed
