#include "fedseries/federation/federation.hpp"

#include "fedseries/numerics/parallel.hpp"
#include "fedseries/numerics/random.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>

namespace fedseries::fed {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string sign_name(AttentionSign s) { return s == AttentionSign::kAttract ? "attract" : "repel"; }

// Positions of `updates` sorted by client id; duplicate ids are rejected.
std::vector<std::size_t> id_order(std::span<const ClientUpdate> updates) {
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (updates[order[i]].client_id == updates[order[i - 1]].client_id) {
      throw std::invalid_argument("duplicate client id " + updates[order[i]].client_id);
    }
  }
  return order;
}

void require_layout(const Params& reference, const Params& other, const std::string& what) {
  if (!reference.same_layout(other)) throw ShapeError(what + ": parameter layout differs");
}

template <typename Fn>
void for_each_client(std::vector<ClientState>& clients, unsigned workers, Fn fn) {
  if (auto failure = parallel_for(clients.size(), workers, fn)) {
    throw ClientError(clients[failure->index].client_id, failure->error);
  }
}

ClientUpdate make_update(const ClientState& c, const model::ModelConfig& config) {
  return {c.client_id, c.params, c.n_train(), validation_loss(c, config, c.params)};
}

}  // namespace

ClientError::ClientError(std::string client_id, std::exception_ptr cause)
    : std::runtime_error([&] {
        try {
          std::rethrow_exception(cause);
        } catch (const std::exception& e) {
          return "client " + client_id + ": " + e.what();
        } catch (...) {
          return "client " + client_id + ": unknown error";
        }
      }()),
      client_id_(std::move(client_id)),
      cause_(std::move(cause)) {}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kSolo:
      return "solo";
    case Strategy::kFedAvg:
      return "fedavg";
    case Strategy::kFedAtt:
      return "fedatt";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  const std::string n = lower(name);
  if (n == "solo") return Strategy::kSolo;
  if (n == "fedavg") return Strategy::kFedAvg;
  if (n == "fedatt") return Strategy::kFedAtt;
  throw std::invalid_argument("unknown strategy '" + name + "' (expected solo, fedavg or fedatt)");
}

void FedConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("federation: rounds must be >= 1");
  if (local_epochs < 0 || solo_epochs < 0) throw std::invalid_argument("federation: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("federation: batch_size must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 2.0)) throw std::invalid_argument("federation: epsilon must lie in (0, 2)");
  if (workers < 1) throw std::invalid_argument("federation: workers must be >= 1");
  if (!(adam.lr > 0) || !(adam.eps > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1) {
    throw std::invalid_argument("federation: invalid Adam settings");
  }
}

// `workers` is a scheduling knob and is left out so that it cannot change
// anything derived from the serialised configuration.
nlohmann::json FedConfig::to_json() const {
  return {{"strategy", strategy_name(strategy)},
          {"rounds", rounds},
          {"local_epochs", local_epochs},
          {"solo_epochs", solo_epochs},
          {"batch_size", batch_size},
          {"epsilon", epsilon},
          {"sign", sign_name(sign)},
          {"reset_optimizer", reset_optimizer},
          {"seed", seed},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}}};
}

FedConfig FedConfig::from_json(const nlohmann::json& j) {
  FedConfig c;
  if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.rounds = j.value("rounds", c.rounds);
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.solo_epochs = j.value("solo_epochs", c.solo_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epsilon = j.value("epsilon", c.epsilon);
  const std::string sign = lower(j.value("sign", sign_name(c.sign)));
  if (sign == "attract") {
    c.sign = AttentionSign::kAttract;
  } else if (sign == "repel") {
    c.sign = AttentionSign::kRepel;
  } else {
    throw std::invalid_argument("federation: sign must be \"attract\" or \"repel\"");
  }
  c.reset_optimizer = j.value("reset_optimizer", c.reset_optimizer);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.lr = a.value("lr", c.adam.lr);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.validate();
  return c;
}

std::uint64_t client_seed(std::uint64_t run_seed, const std::string& client_id,
                          std::optional<std::uint64_t> explicit_seed) {
  if (explicit_seed) return *explicit_seed;
  return derive_seed(run_seed, {fnv1a64(client_id)});
}

ClientState make_client(std::string client_id, data::WindowedDataset dataset, const Params& initial,
                        std::uint64_t seed, AdamOptions adam) {
  ClientState c;
  c.client_id = std::move(client_id);
  c.dataset = std::move(dataset);
  c.params = initial;
  c.optimizer = AdamState<double>(initial, adam);
  c.seed = seed;
  return c;
}

std::int64_t local_train(ClientState& client, const model::ModelConfig& config, const Params* global,
                         int epochs, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("local_train: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("local_train: epochs must be >= 0");
  const std::vector<Index> train = client.dataset.indices(data::Split::kTrain);
  if (train.empty()) throw data::DataError(client.client_id + " has no training windows");
  if (global) {
    require_layout(*global, client.params, "local_train");
    client.params = *global;
  }

  std::int64_t steps = 0;
  for (int e = 0; e < epochs; ++e) {
    std::vector<Index> order = train;
    Rng rng(derive_seed(client.seed, {static_cast<std::uint64_t>(client.epochs_run)}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - start);
      const model::Batch batch = model::gather_batch(client.dataset, std::span(order).subspan(start, len));
      const double loss = model::loss_and_gradient(config, client.params, batch);
      if (!std::isfinite(loss)) {
        throw std::domain_error("non-finite training loss at epoch " + std::to_string(client.epochs_run));
      }
      adam_step(client.params, client.optimizer);
      ++steps;
    }
    ++client.epochs_run;
  }
  return steps;
}

std::optional<double> validation_loss(const ClientState& client, const model::ModelConfig& config,
                                      const Params& params) {
  const std::vector<Index> val = client.dataset.indices(data::Split::kValidation);
  if (val.empty()) return std::nullopt;
  const VectorXr pred = model::predict(config, params, client.dataset, val);
  VectorXr actual(pred.size());
  for (std::size_t i = 0; i < val.size(); ++i) actual(static_cast<Index>(i)) = client.dataset.targets(val[i]);
  return model::mse_loss(pred, actual);
}

std::vector<double> fedavg_weights(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg: no client updates");
  const auto order = id_order(updates);
  double total = 0;
  for (std::size_t i : order) {
    if (updates[i].n_train < 0) throw std::invalid_argument("fedavg: negative sample count");
    total += double(updates[i].n_train);
  }
  if (total <= 0) throw std::invalid_argument("fedavg: total sample count is zero");
  std::vector<double> w;
  for (std::size_t i : order) w.push_back(double(updates[i].n_train) / total);
  return w;
}

Params fedavg_aggregate(std::span<const ClientUpdate> updates) {
  const std::vector<double> w = fedavg_weights(updates);
  const auto order = id_order(updates);
  const Params& first = updates[order.front()].params;
  for (std::size_t i : order) require_layout(first, updates[i].params, "fedavg");

  Params global = first;
  global.zero_grads();
  auto entries = global.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& value = entries[e].value;
    value = w[0] * updates[order[0]].params.entries()[e].value;
    for (std::size_t k = 1; k < order.size(); ++k) value += w[k] * updates[order[k]].params.entries()[e].value;
  }
  return global;
}

MatrixXr fedatt_scores(const Params& global, std::span<const Params* const> clients) {
  const auto layers = global.layers();
  std::vector<Index> column;
  for (const auto& e : global.entries()) {
    column.push_back(static_cast<Index>(std::find(layers.begin(), layers.end(), e.layer) - layers.begin()));
  }
  MatrixXr sq = MatrixXr::Zero(static_cast<Index>(clients.size()), static_cast<Index>(layers.size()));
  for (std::size_t k = 0; k < clients.size(); ++k) {
    require_layout(global, *clients[k], "fedatt_scores");
    const auto ge = global.entries();
    const auto ce = clients[k]->entries();
    for (std::size_t e = 0; e < ge.size(); ++e) {
      sq(static_cast<Index>(k), column[e]) += (ge[e].value - ce[e].value).squaredNorm();
    }
  }
  return sq.cwiseSqrt();
}

MatrixXr fedatt_attention(const MatrixXr& scores, AttentionSign sign) {
  if (scores.rows() < 1) throw std::invalid_argument("fedatt_attention: no clients");
  const double s = sign == AttentionSign::kAttract ? 1.0 : -1.0;
  const MatrixXr logits = (scores * s).transpose();
  // softmax down each column
  return fedseries::softmax_rows(logits).transpose();
}

Params fedatt_update(const Params& global, std::span<const Params* const> clients, const MatrixXr& weights,
                     double epsilon) {
  const auto layers = global.layers();
  if (weights.rows() != static_cast<Index>(clients.size()) || weights.cols() != static_cast<Index>(layers.size())) {
    throw ShapeError("fedatt_update: weights must be clients x layers");
  }
  for (const Params* c : clients) require_layout(global, *c, "fedatt_update");

  Params out = global;
  out.zero_grads();
  auto entries = out.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Index l = static_cast<Index>(std::find(layers.begin(), layers.end(), entries[e].layer) - layers.begin());
    // g - eps * sum_k a_k (g - c_k), written as a convex-style combination so
    // a single client with eps = 1 reproduces that client exactly.
    double mass = 0;
    MatrixXr pull = MatrixXr::Zero(entries[e].value.rows(), entries[e].value.cols());
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const double a = weights(static_cast<Index>(k), l);
      mass += a;
      pull += a * clients[k]->entries()[e].value;
    }
    entries[e].value = (1.0 - epsilon * mass) * global.entries()[e].value + epsilon * pull;
  }
  return out;
}

FedAttStep fedatt_aggregate(const Params& global, std::span<const ClientUpdate> updates, double epsilon,
                            AttentionSign sign) {
  if (updates.empty()) throw std::invalid_argument("fedatt: no client updates");
  std::vector<const Params*> clients;
  for (std::size_t i : id_order(updates)) clients.push_back(&updates[i].params);
  FedAttStep step;
  step.scores = fedatt_scores(global, clients);
  step.attention = fedatt_attention(step.scores, sign);
  step.global = fedatt_update(global, clients, step.attention, epsilon);
  return step;
}

nlohmann::json RoundRecord::to_json() const {
  nlohmann::json j;
  j["round"] = round;
  j["clients"] = clients;
  j["sample_weights"] = sample_weights;
  j["global_norm"] = global_norm;
  nlohmann::json val = nlohmann::json::array();
  for (const auto& v : validation_loss) val.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j["validation_loss"] = val;
  if (!layers.empty()) {
    nlohmann::json att = nlohmann::json::object();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::vector<double> col(static_cast<std::size_t>(attention.rows()));
      for (Index k = 0; k < attention.rows(); ++k) col[static_cast<std::size_t>(k)] = attention(k, static_cast<Index>(l));
      att[layers[l]] = col;
    }
    j["attention"] = att;
  }
  return j;
}

std::string AggregationTrace::to_jsonl() const {
  std::string out;
  for (const auto& r : rounds) {
    nlohmann::json j = r.to_json();
    j["strategy"] = strategy_name(strategy);
    if (strategy == Strategy::kFedAtt) {
      j["sign"] = sign_name(sign);
      j["epsilon"] = epsilon;
    }
    out += j.dump() + "\n";
  }
  return out;
}

FederationResult run_federation(std::vector<ClientState>& clients, const model::ModelConfig& model_config,
                                const FedConfig& config, const Params& initial) {
  config.validate();
  if (clients.empty()) throw std::invalid_argument("run_federation: no clients");
  if (config.strategy == Strategy::kSolo) throw std::invalid_argument("run_federation: SOLO has no aggregation");
  for (const auto& c : clients) require_layout(initial, c.params, "client " + c.client_id);

  FederationResult result{initial, {config.strategy, config.sign, config.epsilon, {}}};
  for (int round = 1; round <= config.rounds; ++round) {
    std::vector<ClientUpdate> updates(clients.size());
    const Params& broadcast = result.global;
    for_each_client(clients, config.workers, [&](std::size_t i) {
      ClientState& c = clients[i];
      if (config.reset_optimizer) c.optimizer.reset(broadcast);
      local_train(c, model_config, &broadcast, config.local_epochs, config.batch_size);
      updates[i] = make_update(c, model_config);
    });

    RoundRecord rec;
    rec.round = round;
    const auto order = id_order(updates);
    for (std::size_t i : order) {
      rec.clients.push_back(updates[i].client_id);
      rec.validation_loss.push_back(updates[i].validation_loss);
    }
    rec.sample_weights = fedavg_weights(updates);
    if (config.strategy == Strategy::kFedAvg) {
      result.global = fedavg_aggregate(updates);
    } else {
      FedAttStep step = fedatt_aggregate(result.global, updates, config.epsilon, config.sign);
      result.global = std::move(step.global);
      rec.layers = result.global.layers();
      rec.attention = std::move(step.attention);
    }
    rec.global_norm = result.global.flatten().norm();
    result.trace.rounds.push_back(std::move(rec));
  }
  return result;
}

std::vector<Params> run_solo(std::vector<ClientState>& clients, const model::ModelConfig& model_config,
                             const FedConfig& config, SoloValidationLog* log) {
  config.validate();
  if (clients.empty()) throw std::invalid_argument("run_solo: no clients");
  if (log) log->assign(clients.size(), {});
  for_each_client(clients, config.workers, [&](std::size_t i) {
    ClientState& c = clients[i];
    if (!log) {
      local_train(c, model_config, nullptr, config.solo_epochs, config.batch_size);
      return;
    }
    for (int e = 0; e < config.solo_epochs; ++e) {
      local_train(c, model_config, nullptr, 1, config.batch_size);
      (*log)[i].push_back(validation_loss(c, model_config, c.params));
    }
  });
  std::vector<Params> out;
  for (const auto& c : clients) out.push_back(c.params);
  return out;
}

}  // namespace fedseries::fed
