#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "fedfew/data.hpp"
#include "fedfew/inference.hpp"
#include "fedfew/losses.hpp"
#include "fedfew/nn.hpp"
#include "fedfew/rng.hpp"

#include "json.hpp"

namespace fedfew::fed {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class WeightRule { labeled_counts, all_counts };

/// Desk-scale defaults (rounds=60, warmup=12, 3 local epochs). The schedule
/// scales via config up to the full 100x10-epoch run.
struct FederationConfig {
    int rounds = 60;          // T
    int warmup_rounds = 12;   // T_w
    int local_epochs = 3;     // epochs between synchronizations
    int fssl_rounds = 14;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double uc_learning_rate = -1.0;  // < 0: use learning_rate
    AdamConfig adam;
    losses::EnergyConfig energy;
    WeightRule stage1_weight_rule = WeightRule::all_counts;
    bool parallel_clients = true;
    bool mlc_unknown_as_negative = true;  // baseline label handling
    data::AugmentConfig aug;

    void validate() const;
    double uc_lr() const { return uc_learning_rate < 0.0 ? learning_rate : uc_learning_rate; }
};

enum class Stage { fssl = 1, psl = 2 };

// ---- the privacy-constrained message schema (closed) ----

struct ParamsDown {
    int round = 0;
    nn::ParameterSet params;
};

struct ParamsUp {
    int client_id = 0;
    int round = 0;
    nn::ParameterSet params;
    std::uint64_t sample_count = 0;
};

struct PrototypeMeta {
    int client_id = 0;
    infer::Prototype prototype;
};

struct EnergyStatsMsg {
    int client_id = 0;
    std::vector<infer::EnergyStat> stats;
};

struct Control {
    std::string action;  // "start" | "stop"
    int stage = 0;
};

using FederationMessage =
    std::variant<ParamsDown, ParamsUp, PrototypeMeta, EnergyStatsMsg, Control>;

/// Records everything that crosses the PS<->client boundary. Counting is
/// always on; full capture is opt-in (audits need it, normal runs do not).
class MessageChannel {
   public:
    explicit MessageChannel(bool capture = false) : capture_(capture) {}

    void send(FederationMessage msg);
    const std::vector<FederationMessage>& trace() const { return trace_; }
    const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

   private:
    bool capture_;
    std::vector<FederationMessage> trace_;
    std::map<std::string, std::uint64_t> counts_;
};

nlohmann::json message_to_json(const FederationMessage& msg);

/// Closed-schema check of a serialized trace: only the five variants, with
/// arrays allowed only at the parameter/prototype/stat payload locations,
/// prototype vectors exactly feature_dim long, and no array of input_dim
/// length outside parameter segments.
std::vector<std::string> audit_trace(const std::vector<FederationMessage>& trace,
                                     std::size_t input_dim, std::size_t feature_dim);

// ---- aggregation ----

/// Elementwise weighted average; weights are normalized internally.
/// Segments that are bitwise identical across all inputs pass through
/// unchanged (the average of equal values is exact).
nn::ParameterSet fedavg(const std::vector<nn::ParameterSet>& param_sets,
                        const std::vector<double>& weights);

/// Stage-2 weights are proportional to labeled counts over the round's
/// participants; stage 1 follows the configured rule (default includes
/// unlabeled data, since self-supervision trains on it).
std::vector<double> compute_weights(const std::vector<const data::ClientDataset*>& participants,
                                    Stage stage, WeightRule stage1_rule = WeightRule::all_counts);

// ---- local training ----

enum class LocalObjective { simsiam, cc_energy, uc_energy, mlc_weighted_bce };

/// One synchronization interval of mini-batch Adam on the stage objective.
/// Functional: theta_in is untouched; optimizer state is fresh (it never
/// crosses the channel). Batch order is drawn from rng.
nn::ParameterSet local_update(const data::ClientDataset& client,
                              const data::ClassLayout& layout,
                              const nn::ParameterSet& theta_in, const nn::ModelSpec& spec,
                              LocalObjective objective, const FederationConfig& cfg,
                              Rng& rng, double* mean_loss = nullptr);

/// Stage dispatch per the training algorithm: stage 1 runs SimSiam
/// everywhere, stage 2 runs the energy-BCE loss at common-class clients and
/// the energy floor alone at UC clients.
nn::ParameterSet local_update(const data::ClientDataset& client,
                              const data::ClassLayout& layout,
                              const nn::ParameterSet& theta_in, const nn::ModelSpec& spec,
                              Stage stage, const FederationConfig& cfg, Rng& rng,
                              double* mean_loss = nullptr);

// ---- federated stages ----

struct RoundDiag {
    int round = 0;
    double mean_loss = 0.0;
    double param_norm = 0.0;
    double embedding_std = -1.0;  // stage 1 collapse monitor, -1 if not computed
};

struct StageResult {
    nn::ParameterSet params;
    nn::ParameterSet warmup_params;  // state after the warm-up loop (stage 2 only)
    std::vector<RoundDiag> rounds;
    bool sync_invariant_held = true;
};

/// Federated SimSiam pre-training over all clients.
StageResult run_fssl_stage(const std::vector<data::ClientDataset>& clients,
                           const data::ClassLayout& layout, const nn::ModelSpec& spec,
                           const FederationConfig& cfg, std::uint64_t seed,
                           MessageChannel* channel = nullptr,
                           const ad::Tensor* monitor_features = nullptr);

/// Energy-based federated partially supervised training: warm-up rounds
/// over common-class clients only, then all clients; synchronize, train
/// locally, aggregate each round.
StageResult run_psl_stage(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout,
                          const nn::ParameterSet& theta_init, const nn::ModelSpec& spec,
                          const FederationConfig& cfg, std::uint64_t seed,
                          MessageChannel* channel = nullptr);

/// Baseline: plain FedAvg over all clients with weighted BCE on an
/// all-class head (no warm-up, no energy terms).
StageResult run_mlc_stage(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout,
                          const nn::ParameterSet& theta_init, const nn::ModelSpec& spec,
                          const FederationConfig& cfg, std::uint64_t seed,
                          MessageChannel* channel = nullptr);

// ---- metadata collection ----

struct Metadata {
    std::vector<infer::Prototype> prototypes;
    std::vector<infer::EnergyStat> stats;  // pooled at the PS
};

/// UC clients send dual prototypes plus per-labeled-sample (energy, has_uc)
/// pairs; common-class clients send (energy, has_uc=false) pairs. Only
/// schema messages cross the boundary.
Metadata collect_metadata(const std::vector<data::ClientDataset>& clients,
                          const data::ClassLayout& layout, const nn::ParameterSet& params,
                          const nn::ModelSpec& spec, const losses::EnergyConfig& energy,
                          MessageChannel* channel = nullptr);

}  // namespace fedfew::fed
