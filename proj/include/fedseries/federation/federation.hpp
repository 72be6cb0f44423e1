#pragma once

#include "fedseries/data/ingest.hpp"
#include "fedseries/model/forecast_model.hpp"
#include "fedseries/optim/adam.hpp"

#include <json.hpp>

#include <cstdint>
#include <exception>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

namespace fedseries::fed {

using model::Params;

enum class Strategy { kSolo, kFedAvg, kFedAtt };

/// A failure inside one client's training, tagged with the client.
class ClientError : public std::runtime_error {
 public:
  ClientError(std::string client_id, std::exception_ptr cause);

  const std::string& client_id() const { return client_id_; }
  std::exception_ptr cause() const { return cause_; }

 private:
  std::string client_id_;
  std::exception_ptr cause_;
};

std::string strategy_name(Strategy s);
/// Accepts "solo", "fedavg" and "fedatt" in any letter case.
Strategy parse_strategy(const std::string& name);

/// How layer distances become attention logits. kAttract uses the distance
/// itself, so far clients weigh more; kRepel uses its negation.
enum class AttentionSign { kAttract, kRepel };

struct FedConfig {
  Strategy strategy = Strategy::kFedAtt;
  int rounds = 10;
  int local_epochs = 1;
  int solo_epochs = 10;
  Index batch_size = 32;
  double epsilon = 1.0;
  AttentionSign sign = AttentionSign::kAttract;
  bool reset_optimizer = false;  // clear Adam moments at the start of every round
  std::uint64_t seed = 0;
  unsigned workers = 1;
  AdamOptions adam;

  void validate() const;
  nlohmann::json to_json() const;
  static FedConfig from_json(const nlohmann::json& j);
};

/// One enterprise: private windows plus its local model and optimiser.
struct ClientState {
  std::string client_id;
  data::WindowedDataset dataset;
  Params params;
  AdamState<double> optimizer;
  std::uint64_t seed = 0;      // shuffle stream
  std::int64_t epochs_run = 0;  // cumulative, keys the per-epoch shuffle

  Index n_train() const { return dataset.count(data::Split::kTrain); }
};

/// Per-client stream seed: the explicit seed when given, otherwise derived
/// from the run seed and the client id.
std::uint64_t client_seed(std::uint64_t run_seed, const std::string& client_id,
                          std::optional<std::uint64_t> explicit_seed = std::nullopt);

/// Builds a client whose parameters and optimiser state start from `initial`.
ClientState make_client(std::string client_id, data::WindowedDataset dataset, const Params& initial,
                        std::uint64_t seed, AdamOptions adam = {});

/// Mini-batch Adam over the client's training windows; the last partial batch
/// is kept. Starts from `global` when given, otherwise from the client's own
/// parameters. Returns the number of optimiser steps taken.
std::int64_t local_train(ClientState& client, const model::ModelConfig& config, const Params* global,
                         int epochs, Index batch_size);

/// MSE of `params` on the client's validation windows, or nullopt if there are none.
std::optional<double> validation_loss(const ClientState& client, const model::ModelConfig& config,
                                      const Params& params);

/// Everything a client sends to the server after a round.
struct ClientUpdate {
  std::string client_id;
  Params params;
  Index n_train = 0;
  std::optional<double> validation_loss;
};

/// Sample-count weighted mean. Updates are combined in client-id order.
Params fedavg_aggregate(std::span<const ClientUpdate> updates);
/// Weights n_k / Σn in client-id order.
std::vector<double> fedavg_weights(std::span<const ClientUpdate> updates);

/// clients × layers matrix of Euclidean distances between global and client layers.
/// Columns follow `global.layers()`.
MatrixXr fedatt_scores(const Params& global, std::span<const Params* const> clients);

/// Softmax over clients, independently for every layer (column).
MatrixXr fedatt_attention(const MatrixXr& scores, AttentionSign sign = AttentionSign::kAttract);

/// global_l - epsilon * Σ_k a_kl (global_l - client_kl) for every layer l.
Params fedatt_update(const Params& global, std::span<const Params* const> clients, const MatrixXr& weights,
                     double epsilon);

struct FedAttStep {
  Params global;
  MatrixXr scores;     // clients × layers, rows in client-id order
  MatrixXr attention;  // same layout
};

/// Scores, attention and update on updates taken in client-id order.
FedAttStep fedatt_aggregate(const Params& global, std::span<const ClientUpdate> updates, double epsilon,
                            AttentionSign sign);

struct RoundRecord {
  int round = 0;
  std::vector<std::string> clients;  // client-id order
  std::vector<double> sample_weights;
  std::vector<std::string> layers;  // FedAtt only
  MatrixXr attention;                // FedAtt only, clients × layers
  double global_norm = 0;
  std::vector<std::optional<double>> validation_loss;

  nlohmann::json to_json() const;
};

struct AggregationTrace {
  Strategy strategy = Strategy::kFedAtt;
  AttentionSign sign = AttentionSign::kAttract;
  double epsilon = 1.0;
  std::vector<RoundRecord> rounds;

  /// One JSON object per round, newline terminated.
  std::string to_jsonl() const;
};

struct FederationResult {
  Params global;
  AggregationTrace trace;
};

/// Broadcast, local training and aggregation for `config.rounds` rounds,
/// starting from `initial`. Clients train on up to `config.workers` threads.
FederationResult run_federation(std::vector<ClientState>& clients, const model::ModelConfig& model_config,
                                const FedConfig& config, const Params& initial);

/// Per client, the validation loss after every epoch.
using SoloValidationLog = std::vector<std::vector<std::optional<double>>>;

/// Every client trains `config.solo_epochs` epochs on its own data. Results
/// are in the order of `clients`.
std::vector<Params> run_solo(std::vector<ClientState>& clients, const model::ModelConfig& model_config,
                             const FedConfig& config, SoloValidationLog* log = nullptr);

}  // namespace fedseries::fed
