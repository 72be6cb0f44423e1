#pragma once

#include "fedseries/data/ingest.hpp"

#include <json.hpp>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fedseries::metrics {

double mse(std::span<const double> actual, std::span<const double> forecast);
double mae(std::span<const double> actual, std::span<const double> forecast);

/// Mean absolute percentage error in percent. Entries with |actual| below
/// `zero_guard` are left out of the mean.
double mape(std::span<const double> actual, std::span<const double> forecast, double zero_guard = 1e-8);

struct Scores {
  double mse = 0;
  double mae = 0;
  double mape = 0;

  bool operator==(const Scores&) const = default;
};

Scores score(std::span<const double> actual, std::span<const double> forecast);

struct SplitReport {
  data::Split split = data::Split::kTest;
  std::vector<Index> window_index;  // positions in the dataset
  std::vector<double> actual_norm;
  std::vector<double> forecast_norm;
  std::vector<double> actual_return;
  std::vector<double> forecast_return;
  Scores normalized;  // headline numbers
  Scores returns;     // same metrics on denormalised close returns

  bool operator==(const SplitReport&) const = default;
};

struct EvalReport {
  std::string symbol;
  std::string strategy;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<SplitReport> splits;  // validation, then test

  const SplitReport& at(data::Split split) const;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);

  bool operator==(const EvalReport&) const = default;
};

/// Predicts normalised targets for the given windows of a dataset.
using Forecaster = std::function<VectorXr(const data::WindowedDataset&, std::span<const Index>)>;

/// Returns the true targets.
VectorXr perfect_forecast(const data::WindowedDataset& dataset, std::span<const Index> windows);
/// Repeats the last normalised close return of each window.
VectorXr persistence_forecast(const data::WindowedDataset& dataset, std::span<const Index> windows);

/// Scores the validation and test splits of `dataset`.
EvalReport build_report(const Forecaster& forecaster, const data::WindowedDataset& dataset, std::string strategy,
                        std::string config_hash, std::uint64_t seed);

/// Predicted-vs-actual rows for plotting, validation first.
std::string plot_csv(const EvalReport& report);

/// One row per report with the test-split normalised metrics.
std::string comparison_csv(std::span<const EvalReport> reports);

}  // namespace fedseries::metrics
