#include <doctest.h>

#include "fedseries/model/forecast_model.hpp"
#include "fedseries/numerics/gradient_check.hpp"
#include "fedseries/numerics/random.hpp"
#include "fedseries/optim/adam.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>

using namespace fedseries;
using namespace fedseries::model;

namespace {

// Recorded after the finite-difference gradient check passed.
constexpr double kTinyGolden = 2.091494720533182;

MatrixXr random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) {
  MatrixXr m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Batch random_batch(Rng& rng, const ModelConfig& c, Index n, std::int64_t first_day = 100) {
  Batch b;
  b.inputs = (random_matrix(rng, n * c.seq_len, c.n_features).array() * 0.5 + 0.5).matrix();
  b.time_index.resize(n, c.seq_len);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < c.seq_len; ++j) b.time_index(i, j) = first_day + 3 * i + j;
  }
  b.targets = (random_matrix(rng, n, 1).array() * 0.5 + 0.5).matrix();
  return b;
}

// Closed-form parameter count, written out independently of init_params.
Index expected_parameter_count(const ModelConfig& c) {
  const Index d = c.d_model;
  const Index hw = c.n_heads * c.d_head;
  const Index t2v = 2 * (c.t2v_k + 1);
  const Index input = (c.n_features + c.t2v_k + 1) * d + d;
  const Index attention = 2 * (d * hw + hw) + d * hw + (hw * d + d);
  const Index ffn = (d * c.d_ff + c.d_ff) + (c.d_ff * d + d);
  const Index norms = 2 * (2 * d);
  const Index head = d + 1;
  return t2v + input + c.n_encoders * (attention + ffn + norms) + head;
}

}  // namespace

TEST_CASE("time2vec") {
  const double pi = std::numbers::pi;
  RowVector<double> omega(2), phi(2);
  omega << 1, pi;
  phi << 0, 0;
  const double tau3[] = {3.0};
  CHECK(time2vec(tau3, omega, phi)(0, 0) == 3.0);

  omega << 0, pi;
  const double tau1[] = {1.0};
  CHECK(std::abs(time2vec(tau1, omega, phi)(0, 1)) < 1e-15);

  RowVector<double> w(3), ph(3);
  w << 0.3, 0.7, 1.9;
  ph << 0.25, 1.1, -0.4;
  const double tau0[] = {0.0};
  const MatrixXr at_zero = time2vec(tau0, w, ph);
  CHECK(at_zero(0, 0) == 0.25);
  CHECK(at_zero(0, 1) == std::sin(1.1));
  CHECK(at_zero(0, 2) == std::sin(-0.4));

  // the tape version agrees with the direct evaluation
  Tape tape(false);
  MatrixXr tau(3, 1);
  tau << 0, 5, 11;
  const Var out = time2vec(tape, tau, tape.constant(w), tape.constant(ph));
  const double taus[] = {0, 5, 11};
  CHECK((tape.value(out) - time2vec(taus, w, ph)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("config defaults and dimension arithmetic") {
  const ModelConfig c;
  CHECK(c.seq_len == 16);
  CHECK(c.d_model == 256);
  CHECK(c.n_heads == 12);
  CHECK(c.d_head == 64);
  CHECK(c.concat_width() == 768);
  CHECK(c.d_ff == 4 * c.d_model);
  CHECK(c.time_channels() == 2);
  CHECK(c.time_origin == TimeOrigin::kWindow);
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  ModelConfig series = c;
  series.time_origin = TimeOrigin::kSeries;
  CHECK(ModelConfig::from_json(series.to_json()) == series);
  CHECK(series.to_json().at("time_origin") == "series");
  nlohmann::json odd = c.to_json();
  odd["time_origin"] = "calendar";
  CHECK_THROWS_AS(ModelConfig::from_json(odd), std::invalid_argument);

  ModelConfig bad = c;
  bad.n_heads = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("init_params") {
  const ModelConfig c;
  const Params a = init_params(c, 42);
  CHECK(a.total_size() == expected_parameter_count(c));
  CHECK(a.flatten() == init_params(c, 42).flatten());
  CHECK(a.flatten() != init_params(c, 43).flatten());

  const Params tiny = init_params(ModelConfig::tiny(), 1);
  CHECK(tiny.total_size() == expected_parameter_count(ModelConfig::tiny()));
  CHECK(tiny.at("t2v.phi").value.isZero());
  CHECK(tiny.at("encoder0.norm1.gain").value.isOnes());
  CHECK(tiny.at("head.bias").value.isZero());
  const MatrixXr& omega = tiny.at("t2v.omega").value;
  CHECK(omega.minCoeff() >= 0.0);
  CHECK(omega.maxCoeff() < 1.0);
  const double limit = std::sqrt(6.0 / (8 + 8));
  CHECK(tiny.at("encoder0.attn.query.weight").value.cwiseAbs().maxCoeff() <= limit);
  // every parameter carries its own layer tag
  CHECK(tiny.layers().size() == tiny.count());
}

TEST_CASE("mse_loss") {
  VectorXr p(3), t(3);
  p << 0.1, 0.2, 0.3;
  CHECK(mse_loss(p, p) == 0.0);
  VectorXr zero(1), two(1);
  zero << 0;
  two << 2;
  CHECK(mse_loss(zero, two) == 4.0);
  t << 0.4, -0.1, 0.0;
  CHECK(std::abs(mse_loss((2 * (p - t) + t).eval(), t) - 4 * mse_loss(p, t)) < 1e-15);
  CHECK_THROWS(mse_loss(VectorXr(0), VectorXr(0)));
}

TEST_CASE("mhsa") {
  Rng rng(17);
  const Index seq = 5, d_model = 6, d_head = 3;

  SUBCASE("single head with identity output projection reduces to attention") {
    Tape t(false);
    const MatrixXr x = random_matrix(rng, seq, d_model);
    const MatrixXr wq = random_matrix(rng, d_model, d_head), wk = random_matrix(rng, d_model, d_head),
                   wv = random_matrix(rng, d_model, d_head);
    const AttentionVars w{t.constant(wq), t.constant(MatrixXr::Zero(1, d_head)),
                          t.constant(wk),
                          t.constant(wv), t.constant(MatrixXr::Zero(1, d_head)),
                          t.constant(MatrixXr::Identity(d_head, d_head)),
                          t.constant(MatrixXr::Zero(1, d_head))};
    const Var out = mhsa(t, t.constant(x), w, 1, seq, 1, d_head);
    const MatrixXr expected = scaled_dot_product_attention<double>(x * wq, x * wk, x * wv);
    CHECK((t.value(out) - expected).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("permuting heads with the output projection rows leaves output unchanged") {
    const Index heads = 3, hw = heads * d_head, batch = 2;
    const MatrixXr x = random_matrix(rng, batch * seq, d_model);
    MatrixXr wq = random_matrix(rng, d_model, hw), wk = random_matrix(rng, d_model, hw),
             wv = random_matrix(rng, d_model, hw), wo = random_matrix(rng, hw, d_model);
    MatrixXr bq = random_matrix(rng, 1, hw), bv = random_matrix(rng, 1, hw),
             bo = random_matrix(rng, 1, d_model);
    auto run = [&](const MatrixXr& q, const MatrixXr& qb, const MatrixXr& k,
                   const MatrixXr& v, const MatrixXr& vb, const MatrixXr& o) {
      Tape t(false);
      const AttentionVars w{t.constant(q), t.constant(qb), t.constant(k),
                            t.constant(v), t.constant(vb), t.constant(o), t.constant(bo)};
      return MatrixXr(t.value(mhsa(t, t.constant(x), w, batch, seq, heads, d_head)));
    };
    const MatrixXr base = run(wq, bq, wk, wv, bv, wo);
    // swap heads 0 and 2
    auto swap_cols = [&](MatrixXr m) {
      m.middleCols(0, d_head).swap(m.middleCols(2 * d_head, d_head));
      return m;
    };
    MatrixXr wo_swapped = wo;
    wo_swapped.middleRows(0, d_head).swap(wo_swapped.middleRows(2 * d_head, d_head));
    const MatrixXr permuted = run(swap_cols(wq), swap_cols(bq), swap_cols(wk),
                                  swap_cols(wv), swap_cols(bv), wo_swapped);
    CHECK((base - permuted).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("encoder_block") {
  const ModelConfig c = ModelConfig::tiny();
  Rng rng(8);
  Params p = init_params(c, 3);

  for (Index batch : {1, 3}) {
    Tape t(false);
    const MatrixXr x = random_matrix(rng, batch * c.seq_len, c.d_model, 2.0);
    const Var y = encoder_block(ParamBinder(t, std::as_const(p)), t.constant(x), "encoder0", c, batch);
    CHECK(t.value(y).rows() == x.rows());
    CHECK(t.value(y).cols() == x.cols());
    CHECK(t.value(y).allFinite());
  }

  SUBCASE("zeroed sub-layers leave only the residual path") {
    for (auto& e : p.entries()) {
      if (e.name.starts_with("encoder0.attn.") || e.name.starts_with("encoder0.ffn.")) e.value.setZero();
    }
    Tape t(false);
    const MatrixXr x = random_matrix(rng, 2 * c.seq_len, c.d_model, 2.0);
    const Var y = encoder_block(ParamBinder(t, std::as_const(p)), t.constant(x), "encoder0", c, 2);
    const RowVector<double> ones = RowVector<double>::Ones(c.d_model);
    const RowVector<double> zeros = RowVector<double>::Zero(c.d_model);
    const MatrixXr expected = layer_norm<double>(layer_norm<double>(x, ones, zeros), ones, zeros);
    CHECK((t.value(y) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward") {
  const ModelConfig c = ModelConfig::tiny();
  const ForecastModel m(c, 5);
  Rng rng(9);
  Batch b = random_batch(rng, c, 4);

  SUBCASE("identical windows give identical predictions") {
    b.inputs.middleRows(c.seq_len, c.seq_len) = b.inputs.middleRows(0, c.seq_len);
    b.time_index.row(1) = b.time_index.row(0);
    const VectorXr y = m.predict(b.inputs, b.time_index);
    CHECK(y(0) == y(1));
  }
  SUBCASE("prediction does not depend on batch position") {
    const VectorXr y = m.predict(b.inputs, b.time_index);
    for (Index i = 0; i < 4; ++i) {
      const VectorXr alone = m.predict(b.inputs.middleRows(i * c.seq_len, c.seq_len), b.time_index.row(i));
      CHECK(std::abs(alone(0) - y(i)) < 1e-12);
    }
    // reversed batch order
    Batch r = b;
    for (Index i = 0; i < 4; ++i) {
      r.inputs.middleRows(i * c.seq_len, c.seq_len) = b.inputs.middleRows((3 - i) * c.seq_len, c.seq_len);
      r.time_index.row(i) = b.time_index.row(3 - i);
    }
    const VectorXr yr = m.predict(r.inputs, r.time_index);
    for (Index i = 0; i < 4; ++i) CHECK(std::abs(yr(i) - y(3 - i)) < 1e-12);
  }
  SUBCASE("wrong window length") {
    CHECK_THROWS_AS(m.predict(b.inputs.topRows(6), Matrix<std::int64_t>::Zero(2, 3)), ShapeError);
  }
  SUBCASE("finite for inputs in [-10, 10]") {
    const ForecastModel big(ModelConfig{}, 1);
    Batch wide = random_batch(rng, big.config(), 3);
    wide.inputs = random_matrix(rng, wide.inputs.rows(), wide.inputs.cols(), 10.0);
    CHECK(big.predict(wide.inputs, wide.time_index).allFinite());
  }
  SUBCASE("window origin ignores where the window sits in the series") {
    Batch shifted = b;
    shifted.time_index.array() += 250;
    CHECK((m.predict(b.inputs, b.time_index) - m.predict(shifted.inputs, shifted.time_index))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    ModelConfig sc = c;
    sc.time_origin = TimeOrigin::kSeries;
    const ForecastModel ms(sc, m.params());
    CHECK((ms.predict(b.inputs, b.time_index) - ms.predict(shifted.inputs, shifted.time_index))
              .cwiseAbs()
              .maxCoeff() > 1e-6);
  }
  SUBCASE("reordering rows together with their time indices only reorders tokens") {
    // Each token carries its own time embedding, so a joint permutation
    // leaves the multiset of tokens, and so the pooled output, unchanged.
    ModelConfig sc = c;
    sc.time_origin = TimeOrigin::kSeries;
    const ForecastModel ms(sc, m.params());
    const Index order[] = {2, 0, 3, 1};
    Batch p = b;
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < c.seq_len; ++j) {
        p.inputs.row(i * c.seq_len + j) = b.inputs.row(i * c.seq_len + order[j]);
        p.time_index(i, j) = b.time_index(i, order[j]);
      }
    }
    CHECK((ms.predict(b.inputs, b.time_index) - ms.predict(p.inputs, p.time_index))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    // Moving the features against fixed time positions changes the output.
    CHECK((m.predict(b.inputs, b.time_index) - m.predict(p.inputs, b.time_index))
              .cwiseAbs()
              .maxCoeff() > 1e-6);
  }
  SUBCASE("attention rows are probability vectors at every layer") {
    ModelConfig two = c;
    two.n_encoders = 2;
    const ForecastModel deep(two, 4);
    Tape t(false);
    ForwardTrace trace;
    forward(ParamBinder(t, deep.params()), two, b.inputs, b.time_index, &trace);
    REQUIRE(trace.attention.size() == 2);
    for (const Var a : trace.attention) {
      const MatrixXr& w = t.attention_weights(a);
      CHECK(w.rows() == 4 * two.n_heads * two.seq_len);
      CHECK(w.minCoeff() >= 0.0);
      CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("forward golden value on the tiny config") {
  const ModelConfig c = ModelConfig::tiny();
  const ForecastModel m(c, 2024);
  MatrixXr x(c.seq_len, c.n_features);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = 0.1 * double(i + 1) + 0.05 * double(j);
  }
  Matrix<std::int64_t> tau(1, c.seq_len);
  tau << 10, 11, 12, 13;
  const double y = m.predict(x, tau)(0);
  MESSAGE("tiny golden prediction = " << std::setprecision(17) << y);
  CHECK(std::abs(y - kTinyGolden) < 1e-12);
}

TEST_CASE("gradients of mse(forward) match finite differences on the tiny config") {
  ModelConfig c = ModelConfig::tiny();
  SUBCASE("window origin") {}
  SUBCASE("series origin") { c.time_origin = TimeOrigin::kSeries; }
  ForecastModel m(c, 77);
  Rng rng(31);
  const Batch b = random_batch(rng, c, 3);
  m.loss_and_gradient(b);
  const auto loss = [&](const Params& p) {
    return ForecastModel(c, p).loss(b);
  };
  const auto report = gradient_check<double>(loss, m.params(), {.step = 1e-5, .tolerance = 1e-4, .max_coordinates = 100000});
  CHECK(report.coordinates_checked == m.params().total_size());
  CHECK(report.coordinates_checked >= 200);
  CHECK(report.passed);
  MESSAGE("max relative error " << report.max_relative_error);
}

TEST_CASE("training a tiny model reduces the loss") {
  const ModelConfig c = ModelConfig::tiny();
  ForecastModel m(c, 12);
  Rng rng(5);
  const Batch b = random_batch(rng, c, 16);
  AdamState<double> opt(m.params(), {.lr = 1e-2});
  const double before = m.loss(b);
  for (int i = 0; i < 100; ++i) {
    m.loss_and_gradient(b);
    adam_step(m.params(), opt);
  }
  CHECK(m.loss(b) < 0.5 * before);
}
