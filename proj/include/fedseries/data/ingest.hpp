#pragma once

#include "fedseries/numerics/tensor.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedseries::data {

/// Raised for malformed or insufficient input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feature column order used everywhere downstream.
enum Feature : Index { kVolume = 0, kOpen = 1, kHigh = 2, kLow = 3, kClose = 4 };
inline constexpr Index kFeatureCount = 5;

struct OhlcvRecord {
  std::chrono::year_month_day date;
  double open = 0;
  double high = 0;
  double low = 0;
  double close = 0;
  double volume = 0;
};

struct RawSeries {
  std::string symbol;
  std::vector<OhlcvRecord> records;

  std::size_t size() const { return records.size(); }
};

/// Rows that were skipped while parsing, with 1-based line numbers.
struct ParseDiagnostics {
  std::vector<std::size_t> rejected_lines;
  std::vector<std::string> messages;

  std::string summary() const;
};

/// Parses a daily OHLCV CSV. The symbol defaults to the file stem.
RawSeries parse_csv(const std::filesystem::path& path, ParseDiagnostics* diagnostics = nullptr);
RawSeries parse_csv_text(std::string_view text, std::string symbol,
                         ParseDiagnostics* diagnostics = nullptr);

std::string format_date(const std::chrono::year_month_day& date);

/// Date,Open,High,Low,Close,Volume text that parses back to the same values.
std::string format_csv(const RawSeries& series);

/// Moving average over `window` consecutive entries; output length T - window + 1.
VectorXr smooth_moving_average(const Eigen::Ref<const VectorXr>& column, Index window);

/// Simple one-step change x[t+1] / x[t] - 1; output length T - 1.
VectorXr to_returns(const Eigen::Ref<const VectorXr>& column);

/// Per-row features (Volume, Open, High, Low, Close) after smoothing and returns.
struct FeatureMatrix {
  MatrixXr values;                     // T×5
  std::vector<std::int64_t> day_index;  // 0-based row index in the transformed series

  Index rows() const { return values.rows(); }
};

/// Stacks the raw columns in feature order, with zero volumes replaced by the
/// smallest positive volume in the series.
MatrixXr raw_feature_columns(const RawSeries& series);

FeatureMatrix build_features(const RawSeries& series, Index smooth_window);

struct NormalizationParams {
  RowVector<double> min;
  RowVector<double> max;
};

NormalizationParams minmax_fit(const Eigen::Ref<const MatrixXr>& train_rows);
MatrixXr minmax_apply(const Eigen::Ref<const MatrixXr>& rows, const NormalizationParams& params);
MatrixXr minmax_invert(const Eigen::Ref<const MatrixXr>& rows, const NormalizationParams& params);
double minmax_invert_value(double y, const NormalizationParams& params, Index column);

struct RowRange {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
};

struct SplitRanges {
  RowRange train;
  RowRange validation;
  RowRange test;
};

/// Chronological 80/10/10 split by floor, remainder to test.
SplitRanges split_train_val_test(Index rows);

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };

std::string_view split_name(Split split);

/// Sliding windows over normalised feature rows.
struct WindowedDataset {
  std::string symbol;
  Index seq_len = 0;
  MatrixXr inputs;                       // (N·seq_len)×5, one block of rows per window
  Matrix<std::int64_t> time_index;       // N×seq_len
  VectorXr targets;                      // N, normalised close return
  std::vector<Split> split;              // N
  std::vector<std::int64_t> target_day;  // N, day index of the target row
  NormalizationParams normalization;
  std::string config_hash;

  Index size() const { return targets.size(); }
  Index count(Split s) const;
  std::vector<Index> indices(Split s) const;

  auto window(Index i) const { return inputs.middleRows(i * seq_len, seq_len); }
};

/// Windows of `seq_len` rows over [range.begin, range.end) of `rows`, each
/// targeting the close column `horizon` rows after its end.
WindowedDataset make_windows(const FeatureMatrix& rows, Index seq_len, Index horizon, Split tag,
                             RowRange range);
WindowedDataset make_windows(const FeatureMatrix& rows, Index seq_len, Index horizon = 1);

/// Windows built independently within each split range; a split shorter than
/// seq_len + horizon contributes no windows.
WindowedDataset window_splits(const FeatureMatrix& normalized, const SplitRanges& ranges,
                              Index seq_len, Index horizon = 1);

struct PipelineConfig {
  Index smooth_window = 10;
  Index seq_len = 16;
  Index horizon = 1;

  std::string hash() const;
};

/// Full ingestion: features, split, train-fitted normalisation, windowing.
WindowedDataset prepare_dataset(const RawSeries& series, const PipelineConfig& config);

/// Directory of flat little-endian tensors plus manifest.json.
void save_dataset(const WindowedDataset& dataset, const std::filesystem::path& dir);
WindowedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace fedseries::data
