#pragma once

#include "fedseries/data/ingest.hpp"
#include "fedseries/numerics/graph.hpp"
#include "fedseries/numerics/param_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedseries::model {

using Params = ParamStore<double>;
using Tape = Graph<double>;

/// What Time2Vec sees as the time of a window row: its offset from the first
/// row of the window, or its day index within the whole series.
enum class TimeOrigin { kWindow, kSeries };

struct ModelConfig {
  Index seq_len = 16;
  Index n_features = data::kFeatureCount;
  Index t2v_k = 1;  // periodic time channels; one linear channel is always present
  Index d_model = 256;
  Index n_heads = 12;
  Index d_head = 64;
  Index n_encoders = 3;
  Index d_ff = 1024;
  TimeOrigin time_origin = TimeOrigin::kWindow;

  void validate() const;

  Index time_channels() const { return t2v_k + 1; }
  Index input_width() const { return n_features + time_channels(); }
  Index concat_width() const { return n_heads * d_head; }

  /// d_model 8, 2 heads of width 4, one encoder, seq_len 4.
  static ModelConfig tiny();

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Weights uniform in ±sqrt(6/(fan_in+fan_out)); biases, phases zero; norm gains one;
/// Time2Vec frequencies uniform in (0, 1).
Params init_params(const ModelConfig& config, std::uint64_t seed);

/// Evaluates the Time2Vec embedding for a list of time indices: L×(k+1).
MatrixXr time2vec(std::span<const double> tau, const RowVector<double>& omega,
                  const RowVector<double>& phi);

/// Resolves parameters by name onto a tape, as trainable leaves when a mutable
/// store is supplied and as constants otherwise.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, Params& params) : tape_(tape), mutable_(&params), params_(&params) {}
  ParamBinder(Tape& tape, const Params& params) : tape_(tape), params_(&params) {}

  Var operator()(const std::string& name) const;
  Tape& tape() const { return tape_; }

 private:
  Tape& tape_;
  Params* mutable_ = nullptr;
  const Params* params_;
};

/// Time embedding of a column of time indices ((B·L)×1) into (B·L)×(k+1).
Var time2vec(Tape& tape, const MatrixXr& tau, Var omega, Var phi);

struct AttentionVars {
  Var wq, bq, wk, wv, bv;  // d_model → heads·d_head; keys carry no bias
  Var wo, bo;              // heads·d_head → d_model
};

/// Multi-head self-attention over a batch of sequences laid out as (batch·seq)×d_model.
/// `attention_node`, when given, receives the node holding the attention probabilities.
Var mhsa(Tape& tape, Var x, const AttentionVars& w, Index batch, Index seq, Index heads,
         Index d_head, Var* attention_node = nullptr);

/// Post-norm encoder block: LN(x + MHSA(x)) followed by LN(y + FF(y)).
Var encoder_block(const ParamBinder& p, Var x, const std::string& prefix, const ModelConfig& config,
                  Index batch, Var* attention_node = nullptr);

struct ForwardTrace {
  std::vector<Var> attention;  // one node per encoder
};

/// Batched forward pass. `windows` is (B·seq_len)×n_features, `time_index` B×seq_len.
/// Returns a B×1 node of predictions.
Var forward(const ParamBinder& p, const ModelConfig& config, const MatrixXr& windows,
            const Matrix<std::int64_t>& time_index, ForwardTrace* trace = nullptr);

/// Mean squared error of a prediction vector.
double mse_loss(const VectorXr& predictions, const VectorXr& targets);

/// Gathers the selected windows of a dataset into one batch.
struct Batch {
  MatrixXr inputs;
  Matrix<std::int64_t> time_index;
  VectorXr targets;
};
Batch gather_batch(const data::WindowedDataset& dataset, std::span<const Index> windows);

/// Batch MSE with gradients written into `params`.
double loss_and_gradient(const ModelConfig& config, Params& params, const Batch& batch);

/// Predictions for a batch without recording gradients.
VectorXr predict(const ModelConfig& config, const Params& params, const MatrixXr& windows,
                 const Matrix<std::int64_t>& time_index);
VectorXr predict(const ModelConfig& config, const Params& params, const data::WindowedDataset& dataset,
                 std::span<const Index> windows, Index chunk = 256);

/// Time2Vec-embedded transformer encoder regressor.
class ForecastModel {
 public:
  ForecastModel(ModelConfig config, std::uint64_t seed);
  ForecastModel(ModelConfig config, Params params);

  const ModelConfig& config() const { return config_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  VectorXr predict(const MatrixXr& windows, const Matrix<std::int64_t>& time_index) const;
  VectorXr predict(const data::WindowedDataset& dataset, std::span<const Index> windows,
                   Index chunk = 256) const;

  /// MSE over the batch; gradients are written into the parameter store.
  double loss_and_gradient(const Batch& batch);
  double loss(const Batch& batch) const;

 private:
  ModelConfig config_;
  Params params_;
};

}  // namespace fedseries::model
