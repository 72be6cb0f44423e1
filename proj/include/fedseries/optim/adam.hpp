#pragma once

#include "fedseries/numerics/param_store.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace fedseries {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one ParamStore layout.
template <typename Scalar>
struct AdamState {
  AdamOptions options;
  std::int64_t t = 0;
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;

  AdamState() = default;

  AdamState(const ParamStore<Scalar>& params, AdamOptions opts = {}) : options(opts) {
    reset(params);
  }

  void reset(const ParamStore<Scalar>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& e : params.entries()) {
      m.push_back(Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
      v.push_back(Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
    }
  }
};

/// One bias-corrected Adam update using the gradients held in `params`.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, AdamState<Scalar>& state) {
  auto entries = params.entries();
  if (state.m.size() != entries.size()) throw ShapeError("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (state.m[i].rows() != entries[i].value.rows() || state.m[i].cols() != entries[i].value.cols()) {
      throw ShapeError("adam_step: moment shape mismatch for " + entries[i].name);
    }
  }

  const auto& o = state.options;
  ++state.t;
  const Scalar b1 = Scalar(o.beta1);
  const Scalar b2 = Scalar(o.beta2);
  const Scalar correction1 = Scalar(1) - std::pow(b1, Scalar(state.t));
  const Scalar correction2 = Scalar(1) - std::pow(b2, Scalar(state.t));
  const Scalar lr = Scalar(o.lr);
  const Scalar eps = Scalar(o.eps);

  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    const auto g = e.grad.array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    e.value.array() -= lr * (m / correction1) / ((v / correction2).sqrt() + eps);
  }
}

}  // namespace fedseries
