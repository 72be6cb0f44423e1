#include "fedseries/metrics/metrics.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace fedseries::metrics {

namespace {

void require_pair(std::span<const double> actual, std::span<const double> forecast, const char* what) {
  if (actual.size() != forecast.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(actual.size()) +
                                " vs " + std::to_string(forecast.size()) + ")");
  }
  if (actual.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

std::string number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<double> to_vector(const VectorXr& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

double mse(std::span<const double> actual, std::span<const double> forecast) {
  require_pair(actual, forecast, "mse");
  double sum = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) sum += (actual[i] - forecast[i]) * (actual[i] - forecast[i]);
  return sum / double(actual.size());
}

double mae(std::span<const double> actual, std::span<const double> forecast) {
  require_pair(actual, forecast, "mae");
  double sum = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) sum += std::abs(actual[i] - forecast[i]);
  return sum / double(actual.size());
}

double mape(std::span<const double> actual, std::span<const double> forecast, double zero_guard) {
  require_pair(actual, forecast, "mape");
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (std::abs(actual[i]) < zero_guard) continue;
    sum += std::abs((actual[i] - forecast[i]) / actual[i]);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("mape: every actual value is zero");
  return 100.0 * sum / double(used);
}

Scores score(std::span<const double> actual, std::span<const double> forecast) {
  return {mse(actual, forecast), mae(actual, forecast), mape(actual, forecast)};
}

const SplitReport& EvalReport::at(data::Split split) const {
  for (const auto& s : splits) {
    if (s.split == split) return s;
  }
  throw std::out_of_range("report has no " + std::string(data::split_name(split)) + " split");
}

namespace {

nlohmann::json scores_json(const Scores& s) { return {{"mse", s.mse}, {"mae", s.mae}, {"mape", s.mape}}; }

Scores scores_from(const nlohmann::json& j) {
  return {j.at("mse").get<double>(), j.at("mae").get<double>(), j.at("mape").get<double>()};
}

data::Split parse_split(const std::string& name) {
  for (auto s : {data::Split::kTrain, data::Split::kValidation, data::Split::kTest}) {
    if (data::split_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown split '" + name + "'");
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"symbol", symbol}, {"strategy", strategy}, {"config_hash", config_hash}, {"seed", seed}};
  auto& out = j["splits"] = nlohmann::json::array();
  for (const auto& s : splits) {
    out.push_back({{"split", data::split_name(s.split)},
                   {"metrics", scores_json(s.normalized)},
                   {"metrics_returns", scores_json(s.returns)},
                   {"window_index", s.window_index},
                   {"actual_norm", s.actual_norm},
                   {"forecast_norm", s.forecast_norm},
                   {"actual_return", s.actual_return},
                   {"forecast_return", s.forecast_return}});
  }
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.symbol = j.at("symbol").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("splits")) {
    SplitReport sr;
    sr.split = parse_split(s.at("split").get<std::string>());
    sr.normalized = scores_from(s.at("metrics"));
    sr.returns = scores_from(s.at("metrics_returns"));
    s.at("window_index").get_to(sr.window_index);
    s.at("actual_norm").get_to(sr.actual_norm);
    s.at("forecast_norm").get_to(sr.forecast_norm);
    s.at("actual_return").get_to(sr.actual_return);
    s.at("forecast_return").get_to(sr.forecast_return);
    const std::size_t n = sr.window_index.size();
    if (sr.actual_norm.size() != n || sr.forecast_norm.size() != n || sr.actual_return.size() != n ||
        sr.forecast_return.size() != n) {
      throw std::invalid_argument("report split '" + s.at("split").get<std::string>() + "': series lengths differ");
    }
    r.splits.push_back(std::move(sr));
  }
  return r;
}

VectorXr perfect_forecast(const data::WindowedDataset& dataset, std::span<const Index> windows) {
  VectorXr out(Index(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) out(Index(i)) = dataset.targets(windows[i]);
  return out;
}

VectorXr persistence_forecast(const data::WindowedDataset& dataset, std::span<const Index> windows) {
  VectorXr out(Index(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    out(Index(i)) = dataset.window(windows[i])(dataset.seq_len - 1, data::kClose);
  }
  return out;
}

EvalReport build_report(const Forecaster& forecaster, const data::WindowedDataset& dataset, std::string strategy,
                        std::string config_hash, std::uint64_t seed) {
  EvalReport report{dataset.symbol, std::move(strategy), std::move(config_hash), seed, {}};
  for (auto split : {data::Split::kValidation, data::Split::kTest}) {
    const std::vector<Index> idx = dataset.indices(split);
    if (idx.empty()) {
      throw data::DataError(dataset.symbol + ": no " + std::string(data::split_name(split)) + " windows to evaluate");
    }
    const VectorXr forecast = forecaster(dataset, idx);
    if (forecast.size() != Index(idx.size())) throw std::logic_error("forecaster returned the wrong number of values");
    if (!forecast.allFinite()) throw std::domain_error(dataset.symbol + ": non-finite forecast");

    SplitReport s;
    s.split = split;
    s.window_index = idx;
    s.forecast_norm = to_vector(forecast);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      s.actual_norm.push_back(dataset.targets(idx[i]));
      s.actual_return.push_back(data::minmax_invert_value(s.actual_norm[i], dataset.normalization, data::kClose));
      s.forecast_return.push_back(
          data::minmax_invert_value(s.forecast_norm[i], dataset.normalization, data::kClose));
    }
    s.normalized = score(s.actual_norm, s.forecast_norm);
    s.returns = score(s.actual_return, s.forecast_return);
    report.splits.push_back(std::move(s));
  }
  return report;
}

std::string plot_csv(const EvalReport& report) {
  std::string out = "window_index,split,actual_norm,forecast_norm,actual_return,forecast_return\n";
  for (const auto& s : report.splits) {
    for (std::size_t i = 0; i < s.window_index.size(); ++i) {
      out += std::to_string(s.window_index[i]) + ',' + std::string(data::split_name(s.split)) + ',' +
             number(s.actual_norm[i]) + ',' + number(s.forecast_norm[i]) + ',' + number(s.actual_return[i]) + ',' +
             number(s.forecast_return[i]) + '\n';
    }
  }
  return out;
}

std::string comparison_csv(std::span<const EvalReport> reports) {
  std::string out = "symbol,strategy,mse,mae,mape\n";
  for (const auto& r : reports) {
    const Scores& s = r.at(data::Split::kTest).normalized;
    out += r.symbol + ',' + r.strategy + ',' + number(s.mse) + ',' + number(s.mae) + ',' + number(s.mape) + '\n';
  }
  return out;
}

}  // namespace fedseries::metrics
