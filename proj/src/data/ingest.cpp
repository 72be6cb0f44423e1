#include "fedseries/data/ingest.hpp"

#include "fedseries/io/binary.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace fedseries::data {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<std::chrono::year_month_day> parse_date(std::string_view s) {
  // YYYY-MM-DD, optionally followed by a time part which is ignored.
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto rd = [](std::string_view part, auto& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc{} && ptr == part.data() + part.size();
  };
  if (!rd(s.substr(0, 4), y) || !rd(s.substr(5, 2), m) || !rd(s.substr(8, 2), d)) return std::nullopt;
  if (s.size() > 10 && s[10] != 'T' && s[10] != ' ') return std::nullopt;
  std::chrono::year_month_day date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) return std::nullopt;
  return date;
}

}  // namespace

std::string ParseDiagnostics::summary() const {
  if (rejected_lines.empty()) return {};
  std::string s = "rejected " + std::to_string(rejected_lines.size()) + " row(s) at line(s)";
  for (std::size_t i = 0; i < rejected_lines.size(); ++i) {
    s += (i ? ", " : " ") + std::to_string(rejected_lines[i]);
  }
  return s;
}

std::string format_date(const std::chrono::year_month_day& date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

RawSeries parse_csv(const std::filesystem::path& path, ParseDiagnostics* diagnostics) {
  if (!std::filesystem::exists(path)) throw DataError("missing file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_csv_text(ss.str(), path.stem().string(), diagnostics);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

RawSeries parse_csv_text(std::string_view text, std::string symbol, ParseDiagnostics* diagnostics) {
  ParseDiagnostics local;
  ParseDiagnostics& diag = diagnostics ? *diagnostics : local;

  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);

  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos <= text.size();) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  if (lines.empty() || trim(lines.front()).empty()) throw DataError("empty file (no header row)");

  const auto header = split_fields(lines.front());
  const char* required[] = {"date", "open", "high", "low", "close", "volume"};
  std::size_t col[6];
  for (std::size_t r = 0; r < 6; ++r) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](std::string_view h) { return lower(h) == required[r]; });
    if (it == header.end()) throw DataError(std::string("missing column: ") + required[r]);
    col[r] = static_cast<std::size_t>(it - header.begin());
  }

  RawSeries series;
  series.symbol = std::move(symbol);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto fields = split_fields(lines[i]);
    auto reject = [&](const std::string& why) {
      diag.rejected_lines.push_back(line_no);
      diag.messages.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() < header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, found " +
             std::to_string(fields.size()));
      continue;
    }
    auto date = parse_date(fields[col[0]]);
    if (!date) {
      reject("invalid date '" + std::string(fields[col[0]]) + "'");
      continue;
    }
    double v[5];
    bool ok = true;
    for (std::size_t r = 1; r < 6 && ok; ++r) {
      auto x = parse_number(fields[col[r]]);
      if (!x) {
        reject(std::string("non-numeric ") + required[r] + " '" + std::string(fields[col[r]]) + "'");
        ok = false;
      } else {
        v[r - 1] = *x;
      }
    }
    if (!ok) continue;
    OhlcvRecord rec{*date, v[0], v[1], v[2], v[3], v[4]};
    if (rec.open <= 0 || rec.high <= 0 || rec.low <= 0 || rec.close <= 0) {
      reject("non-positive price");
      continue;
    }
    if (rec.volume < 0) {
      reject("negative volume");
      continue;
    }
    if (rec.low > rec.open || rec.open > rec.high || rec.low > rec.close || rec.close > rec.high) {
      reject("price outside [low, high]");
      continue;
    }
    series.records.push_back(rec);
  }

  std::stable_sort(series.records.begin(), series.records.end(),
                   [](const OhlcvRecord& a, const OhlcvRecord& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < series.records.size(); ++i) {
    if (series.records[i].date == series.records[i - 1].date) {
      throw DataError("duplicate date " + format_date(series.records[i].date));
    }
  }
  if (series.records.size() < 2) {
    std::string msg = "fewer than 2 valid rows";
    if (!diag.rejected_lines.empty()) msg += "; " + diag.summary();
    throw DataError(msg);
  }
  return series;
}

VectorXr smooth_moving_average(const Eigen::Ref<const VectorXr>& column, Index window) {
  if (window < 1) throw std::invalid_argument("smooth_moving_average: window must be >= 1");
  const Index n = column.size();
  if (n < window) {
    throw DataError("smooth_moving_average: series of length " + std::to_string(n) +
                    " is shorter than the window " + std::to_string(window));
  }
  VectorXr out(n - window + 1);
  for (Index i = 0; i < out.size(); ++i) out(i) = column.segment(i, window).sum() / double(window);
  return out;
}

VectorXr to_returns(const Eigen::Ref<const VectorXr>& column) {
  const Index n = column.size();
  if (n < 2) throw DataError("to_returns: need at least 2 values");
  VectorXr out(n - 1);
  for (Index i = 0; i + 1 < n; ++i) {
    if (column(i) == 0.0) throw DataError("to_returns: zero denominator at row " + std::to_string(i));
    out(i) = column(i + 1) / column(i) - 1.0;
  }
  return out;
}

MatrixXr raw_feature_columns(const RawSeries& series) {
  const Index n = static_cast<Index>(series.size());
  MatrixXr m(n, kFeatureCount);
  double min_positive_volume = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    const auto& r = series.records[static_cast<std::size_t>(i)];
    m.row(i) << r.volume, r.open, r.high, r.low, r.close;
    if (r.volume > 0) min_positive_volume = std::min(min_positive_volume, r.volume);
  }
  for (Index i = 0; i < n; ++i) {
    if (m(i, kVolume) == 0.0) {
      if (!std::isfinite(min_positive_volume)) {
        throw DataError(series.symbol + ": every volume is zero; returns are undefined");
      }
      m(i, kVolume) = min_positive_volume;
    }
  }
  return m;
}

FeatureMatrix build_features(const RawSeries& series, Index smooth_window) {
  const MatrixXr raw = raw_feature_columns(series);
  if (raw.rows() < smooth_window + 1) {
    throw DataError(series.symbol + ": " + std::to_string(raw.rows()) +
                    " rows are too few for smoothing window " + std::to_string(smooth_window));
  }
  const Index t = raw.rows() - smooth_window;
  FeatureMatrix f;
  f.values.resize(t, kFeatureCount);
  for (Index c = 0; c < kFeatureCount; ++c) {
    f.values.col(c) = to_returns(smooth_moving_average(raw.col(c), smooth_window));
  }
  f.day_index.resize(static_cast<std::size_t>(t));
  for (Index i = 0; i < t; ++i) f.day_index[static_cast<std::size_t>(i)] = i;
  return f;
}

NormalizationParams minmax_fit(const Eigen::Ref<const MatrixXr>& train_rows) {
  if (train_rows.rows() == 0) throw std::invalid_argument("minmax_fit: no rows");
  return {train_rows.colwise().minCoeff(), train_rows.colwise().maxCoeff()};
}

MatrixXr minmax_apply(const Eigen::Ref<const MatrixXr>& rows, const NormalizationParams& params) {
  if (rows.cols() != params.min.size()) throw ShapeError("minmax_apply: column count mismatch");
  MatrixXr out(rows.rows(), rows.cols());
  for (Index c = 0; c < rows.cols(); ++c) {
    const double range = params.max(c) - params.min(c);
    if (range > 0) {
      out.col(c) = (rows.col(c).array() - params.min(c)) / range;
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

double minmax_invert_value(double y, const NormalizationParams& params, Index column) {
  return params.min(column) + y * (params.max(column) - params.min(column));
}

MatrixXr minmax_invert(const Eigen::Ref<const MatrixXr>& rows, const NormalizationParams& params) {
  if (rows.cols() != params.min.size()) throw ShapeError("minmax_invert: column count mismatch");
  MatrixXr out(rows.rows(), rows.cols());
  for (Index c = 0; c < rows.cols(); ++c) {
    out.col(c) = (rows.col(c).array() * (params.max(c) - params.min(c)) + params.min(c)).matrix();
  }
  return out;
}

SplitRanges split_train_val_test(Index rows) {
  if (rows < 10) throw DataError("split: need at least 10 rows, got " + std::to_string(rows));
  const Index train = rows * 8 / 10;
  const Index val = rows / 10;
  return {{0, train}, {train, train + val}, {train + val, rows}};
}

std::string format_csv(const RawSeries& series) {
  std::string out = "Date,Open,High,Low,Close,Volume\n";
  auto put = [&](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out += ',';
    out.append(buf, r.ptr);
  };
  for (const auto& r : series.records) {
    out += format_date(r.date);
    put(r.open);
    put(r.high);
    put(r.low);
    put(r.close);
    put(r.volume);
    out += '\n';
  }
  return out;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "unknown";
}

Index WindowedDataset::count(Split s) const {
  return static_cast<Index>(std::count(split.begin(), split.end(), s));
}

std::vector<Index> WindowedDataset::indices(Split s) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(static_cast<Index>(i));
  }
  return out;
}

namespace {

void append(WindowedDataset& into, const WindowedDataset& from) {
  const Index n0 = into.size();
  const Index n1 = from.size();
  MatrixXr inputs(into.inputs.rows() + from.inputs.rows(), kFeatureCount);
  inputs << into.inputs, from.inputs;
  Matrix<std::int64_t> time(n0 + n1, into.seq_len);
  time << into.time_index, from.time_index;
  VectorXr targets(n0 + n1);
  targets << into.targets, from.targets;
  into.inputs = std::move(inputs);
  into.time_index = std::move(time);
  into.targets = std::move(targets);
  into.split.insert(into.split.end(), from.split.begin(), from.split.end());
  into.target_day.insert(into.target_day.end(), from.target_day.begin(), from.target_day.end());
}

WindowedDataset empty_dataset(Index seq_len) {
  WindowedDataset d;
  d.seq_len = seq_len;
  d.inputs.resize(0, kFeatureCount);
  d.time_index.resize(0, seq_len);
  d.targets.resize(0);
  return d;
}

}  // namespace

WindowedDataset make_windows(const FeatureMatrix& rows, Index seq_len, Index horizon, Split tag,
                             RowRange range) {
  if (seq_len < 1) throw std::invalid_argument("make_windows: seq_len must be >= 1");
  if (horizon < 1) throw std::invalid_argument("make_windows: horizon must be >= 1");
  if (range.begin < 0 || range.end > rows.rows() || range.begin > range.end) {
    throw std::out_of_range("make_windows: row range outside the feature matrix");
  }
  if (range.size() < seq_len + horizon) {
    throw DataError("make_windows: " + std::to_string(range.size()) + " rows cannot hold a " +
                    std::to_string(seq_len) + "-step window plus a target");
  }
  const Index n = range.size() - seq_len - horizon + 1;
  WindowedDataset d = empty_dataset(seq_len);
  d.inputs.resize(n * seq_len, kFeatureCount);
  d.time_index.resize(n, seq_len);
  d.targets.resize(n);
  d.split.assign(static_cast<std::size_t>(n), tag);
  d.target_day.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index start = range.begin + i;
    d.inputs.middleRows(i * seq_len, seq_len) = rows.values.middleRows(start, seq_len);
    for (Index j = 0; j < seq_len; ++j) {
      d.time_index(i, j) = rows.day_index[static_cast<std::size_t>(start + j)];
    }
    const Index target_row = start + seq_len + horizon - 1;
    d.targets(i) = rows.values(target_row, kClose);
    d.target_day[static_cast<std::size_t>(i)] = rows.day_index[static_cast<std::size_t>(target_row)];
  }
  return d;
}

WindowedDataset make_windows(const FeatureMatrix& rows, Index seq_len, Index horizon) {
  return make_windows(rows, seq_len, horizon, Split::kTrain, {0, rows.rows()});
}

WindowedDataset window_splits(const FeatureMatrix& normalized, const SplitRanges& ranges,
                              Index seq_len, Index horizon) {
  WindowedDataset d = empty_dataset(seq_len);
  const std::pair<Split, RowRange> parts[] = {
      {Split::kTrain, ranges.train}, {Split::kValidation, ranges.validation}, {Split::kTest, ranges.test}};
  for (const auto& [tag, range] : parts) {
    if (range.size() < seq_len + horizon) continue;
    append(d, make_windows(normalized, seq_len, horizon, tag, range));
  }
  return d;
}

std::string PipelineConfig::hash() const {
  return io::canonical_hash(
      {{"smooth_window", smooth_window}, {"seq_len", seq_len}, {"horizon", horizon}});
}

WindowedDataset prepare_dataset(const RawSeries& series, const PipelineConfig& config) {
  const FeatureMatrix features = build_features(series, config.smooth_window);
  const SplitRanges ranges = split_train_val_test(features.rows());
  const NormalizationParams norm =
      minmax_fit(features.values.middleRows(ranges.train.begin, ranges.train.size()));
  FeatureMatrix normalized{minmax_apply(features.values, norm), features.day_index};
  WindowedDataset d = window_splits(normalized, ranges, config.seq_len, config.horizon);
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest}) {
    if (d.count(s) == 0) {
      throw DataError(series.symbol + ": " + std::to_string(features.rows()) +
                      " feature rows leave the " + std::string(split_name(s)) +
                      " split without a single window of length " + std::to_string(config.seq_len));
    }
  }
  d.symbol = series.symbol;
  d.normalization = norm;
  d.config_hash = config.hash();
  return d;
}

void save_dataset(const WindowedDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_array<double>(dir / "inputs.bin", {d.inputs.data(), static_cast<std::size_t>(d.inputs.size())});
  io::write_array<std::int64_t>(dir / "time_index.bin",
                                {d.time_index.data(), static_cast<std::size_t>(d.time_index.size())});
  io::write_array<double>(dir / "targets.bin", {d.targets.data(), static_cast<std::size_t>(d.targets.size())});
  std::vector<std::uint8_t> split(d.split.size());
  std::transform(d.split.begin(), d.split.end(), split.begin(),
                 [](Split s) { return static_cast<std::uint8_t>(s); });
  io::write_array<std::uint8_t>(dir / "split.bin", split);
  io::write_array<std::int64_t>(dir / "target_day.bin", d.target_day);

  nlohmann::json m;
  m["format"] = "fedseries.dataset.v1";
  m["symbol"] = d.symbol;
  m["windows"] = d.size();
  m["seq_len"] = d.seq_len;
  m["features"] = {"volume", "open", "high", "low", "close"};
  m["split_sizes"] = {{"train", d.count(Split::kTrain)},
                      {"validation", d.count(Split::kValidation)},
                      {"test", d.count(Split::kTest)}};
  m["normalization"] = {{"min", std::vector<double>(d.normalization.min.data(), d.normalization.min.data() + d.normalization.min.size())},
                        {"max", std::vector<double>(d.normalization.max.data(), d.normalization.max.data() + d.normalization.max.size())}};
  m["config_hash"] = d.config_hash;
  m["tensors"] = {
      {"inputs", {{"file", "inputs.bin"}, {"dtype", "f64"}, {"shape", {d.size(), d.seq_len, kFeatureCount}}}},
      {"time_index", {{"file", "time_index.bin"}, {"dtype", "i64"}, {"shape", {d.size(), d.seq_len}}}},
      {"targets", {{"file", "targets.bin"}, {"dtype", "f64"}, {"shape", {d.size()}}}},
      {"split", {{"file", "split.bin"}, {"dtype", "u8"}, {"shape", {d.size()}}}},
      {"target_day", {{"file", "target_day.bin"}, {"dtype", "i64"}, {"shape", {d.size()}}}}};
  io::write_json(dir / "manifest.json", m);
}

WindowedDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw DataError("missing dataset manifest " + manifest_path.string());
  const nlohmann::json m = io::read_json(manifest_path);
  if (m.value("format", "") != "fedseries.dataset.v1") throw io::FormatError(manifest_path.string() + ": unknown format");
  WindowedDataset d;
  d.symbol = m.at("symbol").get<std::string>();
  d.seq_len = m.at("seq_len").get<Index>();
  d.config_hash = m.at("config_hash").get<std::string>();
  const Index n = m.at("windows").get<Index>();
  const auto un = static_cast<std::size_t>(n);
  const auto ul = static_cast<std::size_t>(d.seq_len);

  auto inputs = io::read_array<double>(dir / "inputs.bin", un * ul * kFeatureCount);
  d.inputs = Eigen::Map<MatrixXr>(inputs.data(), n * d.seq_len, kFeatureCount);
  auto time = io::read_array<std::int64_t>(dir / "time_index.bin", un * ul);
  d.time_index = Eigen::Map<Matrix<std::int64_t>>(time.data(), n, d.seq_len);
  auto targets = io::read_array<double>(dir / "targets.bin", un);
  d.targets = Eigen::Map<VectorXr>(targets.data(), n);
  for (std::uint8_t s : io::read_array<std::uint8_t>(dir / "split.bin", un)) {
    if (s > 2) throw io::FormatError("split.bin: invalid tag");
    d.split.push_back(static_cast<Split>(s));
  }
  d.target_day = io::read_array<std::int64_t>(dir / "target_day.bin", un);
  const auto mins = m.at("normalization").at("min").get<std::vector<double>>();
  const auto maxs = m.at("normalization").at("max").get<std::vector<double>>();
  d.normalization.min = Eigen::Map<const RowVector<double>>(mins.data(), static_cast<Index>(mins.size()));
  d.normalization.max = Eigen::Map<const RowVector<double>>(maxs.data(), static_cast<Index>(maxs.size()));
  return d;
}

}  // namespace fedseries::data
