#include "fedseries/model/forecast_model.hpp"

#include "fedseries/numerics/random.hpp"

#include <cmath>
#include <stdexcept>

namespace fedseries::model {

void ModelConfig::validate() const {
  const std::pair<const char*, Index> dims[] = {
      {"seq_len", seq_len}, {"n_features", n_features}, {"t2v_k", t2v_k},   {"d_model", d_model},
      {"n_heads", n_heads}, {"d_head", d_head},         {"n_encoders", n_encoders}, {"d_ff", d_ff}};
  for (const auto& [name, v] : dims) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  }
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.seq_len = 4;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.n_encoders = 1;
  c.d_ff = 32;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"seq_len", seq_len}, {"n_features", n_features}, {"t2v_k", t2v_k},
          {"d_model", d_model}, {"n_heads", n_heads},       {"d_head", d_head},
          {"n_encoders", n_encoders}, {"d_ff", d_ff},
          {"time_origin", time_origin == TimeOrigin::kWindow ? "window" : "series"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.seq_len = j.value("seq_len", c.seq_len);
  c.n_features = j.value("n_features", c.n_features);
  c.t2v_k = j.value("t2v_k", c.t2v_k);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_head = j.value("d_head", c.d_head);
  c.n_encoders = j.value("n_encoders", c.n_encoders);
  c.d_ff = j.contains("d_ff") ? j.at("d_ff").get<Index>() : 4 * c.d_model;
  const std::string origin = j.value("time_origin", std::string("window"));
  if (origin == "window") {
    c.time_origin = TimeOrigin::kWindow;
  } else if (origin == "series") {
    c.time_origin = TimeOrigin::kSeries;
  } else {
    throw std::invalid_argument("model config: time_origin must be \"window\" or \"series\"");
  }
  c.validate();
  return c;
}

Params init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Params p;
  auto weight = [&](const std::string& name, Index fan_in, Index fan_out) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    MatrixXr w(fan_in, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    p.add(name + ".weight", {fan_in, fan_out}, std::move(w));
  };
  auto dense = [&](const std::string& name, Index fan_in, Index fan_out) {
    weight(name, fan_in, fan_out);
    p.add(name + ".bias", {fan_out}, MatrixXr::Zero(1, fan_out));
  };
  auto norm = [&](const std::string& name, Index d) {
    p.add(name + ".gain", {d}, MatrixXr::Ones(1, d));
    p.add(name + ".bias", {d}, MatrixXr::Zero(1, d));
  };

  const Index tc = config.time_channels();
  MatrixXr omega(1, tc);
  for (Index i = 0; i < tc; ++i) omega(0, i) = rng.uniform();
  p.add("t2v.omega", {tc}, std::move(omega));
  p.add("t2v.phi", {tc}, MatrixXr::Zero(1, tc));
  dense("input", config.input_width(), config.d_model);
  for (Index e = 0; e < config.n_encoders; ++e) {
    const std::string pre = "encoder" + std::to_string(e);
    dense(pre + ".attn.query", config.d_model, config.concat_width());
    // A key bias shifts every score of a query row equally and cancels in the
    // softmax, so the key projection is linear only.
    weight(pre + ".attn.key", config.d_model, config.concat_width());
    dense(pre + ".attn.value", config.d_model, config.concat_width());
    dense(pre + ".attn.output", config.concat_width(), config.d_model);
    norm(pre + ".norm1", config.d_model);
    dense(pre + ".ffn.dense1", config.d_model, config.d_ff);
    dense(pre + ".ffn.dense2", config.d_ff, config.d_model);
    norm(pre + ".norm2", config.d_model);
  }
  dense("head", config.d_model, 1);
  return p;
}

MatrixXr time2vec(std::span<const double> tau, const RowVector<double>& omega,
                  const RowVector<double>& phi) {
  if (omega.size() < 2 || phi.size() != omega.size()) {
    throw ShapeError("time2vec: need matching omega/phi with at least two channels");
  }
  MatrixXr out(static_cast<Index>(tau.size()), omega.size());
  for (Index r = 0; r < out.rows(); ++r) {
    const double t = tau[static_cast<std::size_t>(r)];
    out(r, 0) = omega(0) * t + phi(0);
    for (Index c = 1; c < out.cols(); ++c) out(r, c) = std::sin(omega(c) * t + phi(c));
  }
  return out;
}

Var ParamBinder::operator()(const std::string& name) const {
  if (mutable_) return tape_.parameter(*mutable_, name);
  return tape_.reference(params_->at(name).value);
}

Var time2vec(Tape& tape, const MatrixXr& tau, Var omega, Var phi) {
  if (tau.cols() != 1) throw ShapeError("time2vec: tau must be a column");
  const Var linear = tape.add_row(tape.matmul(tape.constant(tau), omega), phi);
  return tape.sin_columns(linear, 1);
}

Var mhsa(Tape& tape, Var x, const AttentionVars& w, Index batch, Index seq, Index heads,
         Index d_head, Var* attention_node) {
  if (heads < 1) throw std::invalid_argument("mhsa: need at least one head");
  const Var q = tape.add_row(tape.matmul(x, w.wq), w.bq);
  const Var k = tape.matmul(x, w.wk);
  const Var v = tape.add_row(tape.matmul(x, w.wv), w.bv);
  const Var heads_out = tape.attention(q, k, v, batch, seq, heads, d_head);
  if (attention_node) *attention_node = heads_out;
  return tape.add_row(tape.matmul(heads_out, w.wo), w.bo);
}

Var encoder_block(const ParamBinder& p, Var x, const std::string& prefix, const ModelConfig& config,
                  Index batch, Var* attention_node) {
  Tape& t = p.tape();
  const std::string a = prefix + ".attn.";
  const AttentionVars w{p(a + "query.weight"), p(a + "query.bias"),  p(a + "key.weight"),
                        p(a + "value.weight"), p(a + "value.bias"), p(a + "output.weight"),
                        p(a + "output.bias")};
  const Var attn = mhsa(t, x, w, batch, config.seq_len, config.n_heads, config.d_head, attention_node);
  const Var y1 = t.layer_norm(t.add(x, attn), p(prefix + ".norm1.gain"), p(prefix + ".norm1.bias"));
  const Var hidden = t.relu(t.add_row(t.matmul(y1, p(prefix + ".ffn.dense1.weight")),
                                      p(prefix + ".ffn.dense1.bias")));
  const Var ff = t.add_row(t.matmul(hidden, p(prefix + ".ffn.dense2.weight")),
                           p(prefix + ".ffn.dense2.bias"));
  return t.layer_norm(t.add(y1, ff), p(prefix + ".norm2.gain"), p(prefix + ".norm2.bias"));
}

Var forward(const ParamBinder& p, const ModelConfig& config, const MatrixXr& windows,
            const Matrix<std::int64_t>& time_index, ForwardTrace* trace) {
  const Index batch = time_index.rows();
  if (time_index.cols() != config.seq_len) {
    throw ShapeError("forward: window length " + std::to_string(time_index.cols()) +
                     " does not match seq_len " + std::to_string(config.seq_len));
  }
  if (windows.rows() != batch * config.seq_len || windows.cols() != config.n_features) {
    throw ShapeError("forward: expected " + std::to_string(batch * config.seq_len) + "x" +
                     std::to_string(config.n_features) + " window rows");
  }
  Tape& t = p.tape();
  MatrixXr tau(batch * config.seq_len, 1);
  for (Index b = 0; b < batch; ++b) {
    const std::int64_t origin = config.time_origin == TimeOrigin::kWindow ? time_index(b, 0) : 0;
    for (Index j = 0; j < config.seq_len; ++j) {
      tau(b * config.seq_len + j, 0) = double(time_index(b, j) - origin);
    }
  }
  const Var time = time2vec(t, tau, p("t2v.omega"), p("t2v.phi"));
  const Var features = t.concat_cols(t.constant(windows), time);
  Var h = t.add_row(t.matmul(features, p("input.weight")), p("input.bias"));
  for (Index e = 0; e < config.n_encoders; ++e) {
    Var attn;
    h = encoder_block(p, h, "encoder" + std::to_string(e), config, batch, &attn);
    if (trace) trace->attention.push_back(attn);
  }
  const Var pooled = t.mean_pool(h, config.seq_len);
  return t.add_row(t.matmul(pooled, p("head.weight")), p("head.bias"));
}

double mse_loss(const VectorXr& predictions, const VectorXr& targets) {
  if (predictions.size() != targets.size()) throw ShapeError("mse_loss: length mismatch");
  if (predictions.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  return (predictions - targets).squaredNorm() / double(predictions.size());
}

Batch gather_batch(const data::WindowedDataset& dataset, std::span<const Index> windows) {
  const Index n = static_cast<Index>(windows.size());
  const Index l = dataset.seq_len;
  Batch b;
  b.inputs.resize(n * l, dataset.inputs.cols());
  b.time_index.resize(n, l);
  b.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Index w = windows[static_cast<std::size_t>(i)];
    if (w < 0 || w >= dataset.size()) throw std::out_of_range("gather_batch: window index out of range");
    b.inputs.middleRows(i * l, l) = dataset.window(w);
    b.time_index.row(i) = dataset.time_index.row(w);
    b.targets(i) = dataset.targets(w);
  }
  return b;
}

ForecastModel::ForecastModel(ModelConfig config, std::uint64_t seed)
    : config_(config), params_(init_params(config, seed)) {}

ForecastModel::ForecastModel(ModelConfig config, Params params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (!params_.same_layout(init_params(config_, 0))) {
    throw std::invalid_argument("ForecastModel: parameters do not match the model configuration");
  }
}

double loss_and_gradient(const ModelConfig& config, Params& params, const Batch& batch) {
  Tape tape;
  const Var pred = forward(ParamBinder(tape, params), config, batch.inputs, batch.time_index);
  const Var loss = tape.mse(pred, batch.targets);
  tape.backward(loss);
  return tape.value(loss)(0, 0);
}

VectorXr predict(const ModelConfig& config, const Params& params, const MatrixXr& windows,
                 const Matrix<std::int64_t>& time_index) {
  Tape tape(false);
  const Var out = forward(ParamBinder(tape, params), config, windows, time_index);
  return tape.value(out).col(0);
}

VectorXr predict(const ModelConfig& config, const Params& params, const data::WindowedDataset& dataset,
                 std::span<const Index> windows, Index chunk) {
  if (chunk < 1) throw std::invalid_argument("predict: chunk must be positive");
  VectorXr out(static_cast<Index>(windows.size()));
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(chunk)) {
    const auto part = windows.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(chunk),
                                                                   windows.size() - start));
    const Batch b = gather_batch(dataset, part);
    out.segment(static_cast<Index>(start), static_cast<Index>(part.size())) =
        predict(config, params, b.inputs, b.time_index);
  }
  return out;
}

VectorXr ForecastModel::predict(const MatrixXr& windows, const Matrix<std::int64_t>& time_index) const {
  return model::predict(config_, params_, windows, time_index);
}

VectorXr ForecastModel::predict(const data::WindowedDataset& dataset, std::span<const Index> windows,
                                Index chunk) const {
  return model::predict(config_, params_, dataset, windows, chunk);
}

double ForecastModel::loss_and_gradient(const Batch& batch) {
  return model::loss_and_gradient(config_, params_, batch);
}

double ForecastModel::loss(const Batch& batch) const {
  return mse_loss(predict(batch.inputs, batch.time_index), batch.targets);
}

}  // namespace fedseries::model
