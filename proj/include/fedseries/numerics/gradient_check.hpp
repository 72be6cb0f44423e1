#pragma once

#include "fedseries/numerics/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedseries {

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates to probe; all of them when the store is not larger than this.
  Index max_coordinates = 400;
  std::uint64_t seed = 7;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  Index worst_coordinate = -1;
  Index coordinates_checked = 0;
  bool passed = false;
};

/// Compares the analytic gradients already stored in `params` against central
/// finite differences of `loss`. Parameter values are restored on return.
template <typename Scalar>
GradientCheckReport gradient_check(const std::function<Scalar(const ParamStore<Scalar>&)>& loss,
                                   ParamStore<Scalar>& params,
                                   const GradientCheckOptions& options = {}) {
  if (!(options.step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");

  const Vector<Scalar> base = params.flatten();
  const Vector<Scalar> analytic = params.flatten_grads();
  const Index n = base.size();

  if (loss(params) != loss(params)) {
    throw std::runtime_error("gradient_check: loss function is not deterministic");
  }

  std::vector<Index> coords(static_cast<std::size_t>(n));
  std::iota(coords.begin(), coords.end(), Index{0});
  if (n > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(options.max_coordinates));
    std::sort(coords.begin(), coords.end());
  }

  GradientCheckReport report;
  Vector<Scalar> probe = base;
  const Scalar h = Scalar(options.step);
  for (Index i : coords) {
    probe(i) = base(i) + h;
    params.unflatten(probe);
    const Scalar up = loss(params);
    probe(i) = base(i) - h;
    params.unflatten(probe);
    const Scalar down = loss(params);
    probe(i) = base(i);

    const double numeric = static_cast<double>((up - down) / (Scalar(2) * h));
    const double a = static_cast<double>(analytic(i));
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (rel > report.max_relative_error || report.worst_coordinate < 0) {
      report.max_relative_error = std::max(report.max_relative_error, rel);
      if (rel >= report.max_relative_error) report.worst_coordinate = i;
    }
    ++report.coordinates_checked;
  }
  params.unflatten(base);
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace fedseries
