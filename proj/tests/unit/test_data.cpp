#include <doctest.h>

#include "fedseries/data/ingest.hpp"
#include "fedseries/data/synthetic.hpp"
#include "fedseries/io/binary.hpp"
#include "fedseries/numerics/random.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace fedseries;
using namespace fedseries::data;
namespace fs = std::filesystem;

namespace {

const char* kHeader = "Date,Open,High,Low,Close,Adj Close,Volume\n";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedseries_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

VectorXr vec(std::initializer_list<double> v) {
  VectorXr out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Feature rows whose close column is 0.01·row and other columns are small
// deterministic functions of the row.
FeatureMatrix ramp_features(Index rows) {
  FeatureMatrix f;
  f.values.resize(rows, kFeatureCount);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < kFeatureCount; ++c) f.values(r, c) = 0.01 * double(r) + 0.1 * double(c);
    f.day_index.push_back(r);
  }
  return f;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("parse_csv_text") {
  SUBCASE("three well-formed rows") {
    const std::string csv = std::string(kHeader) +
                            "2020-01-02,10,11,9,10.5,10.4,1000\n"
                            "2020-01-03,10.5,12,10,11,10.9,1500\n"
                            "2020-01-06,11,11.5,10.5,11.2,11.1,900\n";
    const RawSeries s = parse_csv_text(csv, "ABC");
    REQUIRE(s.records.size() == 3);
    CHECK(s.symbol == "ABC");
    CHECK(s.records[1].high == 12.0);
    CHECK(s.records[2].volume == 900.0);
    CHECK(format_date(s.records[2].date) == "2020-01-06");
  }
  SUBCASE("rows out of order are sorted by date") {
    const std::string csv = std::string(kHeader) +
                            "2020-01-06,11,11.5,10.5,11.2,11.1,900\n"
                            "2020-01-02,10,11,9,10.5,10.4,1000\n"
                            "2020-01-03,10.5,12,10,11,10.9,1500\n";
    const RawSeries s = parse_csv_text(csv, "ABC");
    CHECK(format_date(s.records[0].date) == "2020-01-02");
    CHECK(format_date(s.records[1].date) == "2020-01-03");
    CHECK(format_date(s.records[2].date) == "2020-01-06");
  }
  SUBCASE("missing Volume column") {
    const std::string csv = "Date,Open,High,Low,Close\n2020-01-02,10,11,9,10.5\n2020-01-03,10,11,9,10.5\n";
    try {
      parse_csv_text(csv, "ABC");
      FAIL("expected a DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("missing column") != std::string::npos);
    }
  }
  SUBCASE("CRLF, BOM and case-insensitive headers") {
    const std::string csv =
        "\xEF\xBB\xBF"
        "date,OPEN,high,Low,close,volume\r\n2020-01-02,10,11,9,10.5,1000\r\n2020-01-03,10,11,9,10.5,1000\r\n";
    CHECK(parse_csv_text(csv, "X").records.size() == 2);
  }
  SUBCASE("bad rows are rejected with their line numbers") {
    const std::string csv = std::string(kHeader) +
                            "2020-01-02,10,11,9,10.5,10.4,1000\n"
                            "2020-01-03,,11,9,10.5,10.4,1000\n"
                            "2020-01-04,10,abc,9,10.5,10.4,1000\n"
                            "2020-01-05,10,11,9,10.5,10.4,1000\n";
    ParseDiagnostics diag;
    const RawSeries s = parse_csv_text(csv, "X", &diag);
    CHECK(s.records.size() == 2);
    CHECK(diag.rejected_lines == std::vector<std::size_t>{3, 4});
    CHECK(diag.summary().find('3') != std::string::npos);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_csv_text(std::string(kHeader) + "2020-01-02,10,11,9,10.5,10.4,1000\n", "X"),
                    DataError);
    CHECK_THROWS_AS(parse_csv_text(std::string(kHeader) +
                                       "2020-01-02,10,11,9,10.5,10.4,1000\n"
                                       "2020-01-02,10,11,9,10.5,10.4,1000\n",
                                   "X"),
                    DataError);
    CHECK_THROWS_AS(parse_csv("/nonexistent/fedseries/none.csv"), DataError);
  }
  SUBCASE("file stem is the symbol") {
    const fs::path dir = scratch("parse");
    std::ofstream(dir / "MSFT.csv") << kHeader << "2020-01-02,10,11,9,10.5,10.4,1000\n"
                                    << "2020-01-03,10,11,9,10.5,10.4,1000\n";
    CHECK(parse_csv(dir / "MSFT.csv").symbol == "MSFT");
  }
}

TEST_CASE("smooth_moving_average") {
  CHECK(smooth_moving_average(vec({4, 4, 4, 4}), 3) == vec({4, 4}));
  CHECK(smooth_moving_average(vec({1, 2, 3, 4, 5}), 2) == vec({1.5, 2.5, 3.5, 4.5}));
  const VectorXr x = vec({3, -1, 7, 2});
  CHECK(smooth_moving_average(x, 1) == x);
  CHECK_THROWS_AS(smooth_moving_average(vec({1, 2}), 3), DataError);
}

TEST_CASE("to_returns") {
  CHECK(std::abs(to_returns(vec({100, 110}))(0) - 0.10) < 1e-15);
  CHECK(to_returns(vec({5, 5, 5, 5})).isZero());
  CHECK(to_returns(vec({1, 2, 3, 4, 5, 6})).size() == 5);
  CHECK_THROWS_AS(to_returns(vec({1, 0, 2})), DataError);
}

TEST_CASE("zero volumes are replaced before returns") {
  RawSeries s = noisy_sine_series("Z", {.rows = 30});
  s.records[4].volume = 0;
  s.records[9].volume = 0;
  const MatrixXr raw = raw_feature_columns(s);
  double smallest = 1e300;
  for (const auto& r : s.records) {
    if (r.volume > 0) smallest = std::min(smallest, r.volume);
  }
  CHECK(raw(4, 0) == smallest);
  CHECK(raw(9, 0) == smallest);
  CHECK(build_features(s, 1).values.allFinite());
  for (auto& r : s.records) r.volume = 0;
  CHECK_THROWS_AS(raw_feature_columns(s), DataError);
}

TEST_CASE("min-max normalisation") {
  MatrixXr col(3, 1);
  col << 0, 1, 2;
  const auto p = minmax_fit(col);
  CHECK(p.min(0) == 0.0);
  CHECK(p.max(0) == 2.0);
  MatrixXr one(1, 1);
  one << 1;
  CHECK(minmax_apply(one, p)(0, 0) == 0.5);

  MatrixXr two(2, 2);
  two << 1, 5, 3, 9;
  const auto q = minmax_fit(two);
  CHECK(q.min == (RowVector<double>(2) << 1, 5).finished());
  CHECK(q.max == (RowVector<double>(2) << 3, 9).finished());
  const MatrixXr y = minmax_apply(two, q);
  CHECK(y.row(0).isZero());
  CHECK(y.row(1).isOnes());
  CHECK(minmax_invert(y, q) == two);

  MatrixXr single(1, 3);
  single << 4, -2, 7;
  const auto s = minmax_fit(single);
  CHECK(s.min == s.max);
  MatrixXr any(2, 3);
  any << 9, 9, 9, -1, 0, 3;
  CHECK(minmax_apply(any, s).isZero());
  CHECK(minmax_invert(MatrixXr::Zero(1, 3), s) == single);

  CHECK_THROWS(minmax_fit(MatrixXr(0, 3)));
  CHECK_THROWS(minmax_apply(MatrixXr::Zero(2, 2), s));
}

TEST_CASE("normalisation round trip on random matrices") {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const Index rows = 1 + Index(rng.below(40)), cols = 1 + Index(rng.below(6));
    MatrixXr x(rows + 1, cols);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-3, 3) * std::pow(10.0, rng.uniform(-3, 3));
    const auto p = minmax_fit(x.topRows(rows));
    const MatrixXr back = minmax_invert(minmax_apply(x, p), p);
    for (Index c = 0; c < cols; ++c) {
      if (p.max(c) > p.min(c)) {
        const double scale = std::max(1.0, x.col(c).cwiseAbs().maxCoeff());
        CHECK((back.col(c) - x.col(c)).cwiseAbs().maxCoeff() < 1e-12 * scale);
      }
    }
  }
}

TEST_CASE("split_train_val_test") {
  auto sizes = [](Index t) {
    const auto r = split_train_val_test(t);
    CHECK(r.train.begin == 0);
    CHECK(r.train.end == r.validation.begin);
    CHECK(r.validation.end == r.test.begin);
    CHECK(r.test.end == t);
    return std::array<Index, 3>{r.train.size(), r.validation.size(), r.test.size()};
  };
  CHECK(sizes(100) == std::array<Index, 3>{80, 10, 10});
  CHECK(sizes(101) == std::array<Index, 3>{80, 10, 11});
  CHECK(sizes(10) == std::array<Index, 3>{8, 1, 1});
  CHECK_THROWS_AS(split_train_val_test(9), DataError);
}

TEST_CASE("make_windows") {
  SUBCASE("26 rows, seq_len 16") {
    const WindowedDataset d = make_windows(ramp_features(26), 16);
    CHECK(d.size() == 10);
    CHECK(d.inputs.rows() == 10 * 16);
    CHECK(d.target_day.front() == 16);
  }
  SUBCASE("17 rows give one window targeting row 16") {
    const FeatureMatrix f = ramp_features(17);
    const WindowedDataset d = make_windows(f, 16);
    REQUIRE(d.size() == 1);
    CHECK(d.targets(0) == f.values(16, static_cast<Index>(Feature::kClose)));
  }
  SUBCASE("16 rows cannot hold a target") {
    CHECK_THROWS_AS(make_windows(ramp_features(16), 16), DataError);
  }
  SUBCASE("time indices are consecutive and targets follow the window") {
    const FeatureMatrix f = ramp_features(40);
    const WindowedDataset d = make_windows(f, 5);
    for (Index i = 0; i < d.size(); ++i) {
      for (Index j = 1; j < 5; ++j) CHECK(d.time_index(i, j) == d.time_index(i, j - 1) + 1);
      CHECK(d.window(i) == f.values.middleRows(i, 5));
      CHECK(d.targets(i) == f.values(i + 5, static_cast<Index>(Feature::kClose)));
    }
  }
}

TEST_CASE("shape algebra for a 26-row series") {
  const Index seq_len = 16;
  const FeatureMatrix f = ramp_features(26);
  const SplitRanges r = split_train_val_test(f.rows());
  const WindowedDataset d = window_splits(f, r, seq_len);
  Index expected = 0;
  for (const RowRange& range : {r.train, r.validation, r.test}) {
    expected += std::max<Index>(0, range.size() - seq_len);
  }
  CHECK(d.size() == expected);
  // 20/2/4 rows: only the train split is long enough
  CHECK(d.count(Split::kTrain) == 4);
  CHECK(d.count(Split::kValidation) == 0);
  CHECK(d.count(Split::kTest) == 0);
  // raw length R and smoothing w give R - w feature rows
  for (Index w : {1, 3, 10}) {
    const RawSeries s = noisy_sine_series("S", {.rows = 26 + w});
    CHECK(build_features(s, w).rows() == 26);
  }
}

TEST_CASE("prepared dataset") {
  const RawSeries s = noisy_sine_series("SINE", {.rows = 400, .seed = 5});
  const PipelineConfig cfg;
  const WindowedDataset d = prepare_dataset(s, cfg);
  const FeatureMatrix f = build_features(s, cfg.smooth_window);
  const SplitRanges r = split_train_val_test(f.rows());

  SUBCASE("splits are chronological and never straddle a boundary") {
    for (Index i = 1; i < d.size(); ++i) {
      CHECK(d.split[i - 1] <= d.split[i]);
      CHECK(d.target_day[i - 1] < d.target_day[i]);
    }
    for (Index i = 0; i < d.size(); ++i) {
      const RowRange range = d.split[i] == Split::kTrain        ? r.train
                             : d.split[i] == Split::kValidation ? r.validation
                                                                : r.test;
      CHECK(d.time_index(i, 0) >= range.begin);
      CHECK(d.target_day[i] < range.end);
    }
  }
  SUBCASE("denormalised targets are the smoothed close returns") {
    // Independent recomputation from the raw records.
    const Index w = cfg.smooth_window;
    std::vector<double> smooth;
    for (std::size_t i = 0; i + static_cast<std::size_t>(w) <= s.records.size(); ++i) {
      double sum = 0;
      for (Index k = 0; k < w; ++k) sum += s.records[i + static_cast<std::size_t>(k)].close;
      smooth.push_back(sum / double(w));
    }
    for (Index i = 0; i < d.size(); ++i) {
      const auto day = static_cast<std::size_t>(d.target_day[i]);
      const double expected = smooth[day + 1] / smooth[day] - 1.0;
      const double actual = minmax_invert_value(d.targets(i), d.normalization, Index(Feature::kClose));
      CHECK(std::abs(actual - expected) < 1e-12);
    }
  }
  SUBCASE("normalisation is fitted on training rows only") {
    RawSeries perturbed = s;
    // Feature row i depends on raw rows i .. i + w, so these raw rows only
    // reach validation and test features.
    for (std::size_t i = static_cast<std::size_t>(r.train.end + cfg.smooth_window); i < perturbed.records.size(); ++i) {
      auto& rec = perturbed.records[i];
      rec.open *= 3;
      rec.high *= 3.5;
      rec.low *= 2.5;
      rec.close *= 3;
      rec.volume *= 7;
    }
    const WindowedDataset p = prepare_dataset(perturbed, cfg);
    CHECK(p.normalization.min == d.normalization.min);
    CHECK(p.normalization.max == d.normalization.max);
    CHECK(p.targets != d.targets);
  }
  SUBCASE("save and load round trip, byte-identical on repeat") {
    const fs::path a = scratch("save_a"), b = scratch("save_b");
    save_dataset(d, a);
    save_dataset(prepare_dataset(s, cfg), b);
    for (const char* name : {"inputs.bin", "time_index.bin", "targets.bin", "split.bin", "target_day.bin",
                             "manifest.json"}) {
      CHECK(read_bytes(a / name) == read_bytes(b / name));
    }
    const WindowedDataset back = load_dataset(a);
    CHECK(back.symbol == d.symbol);
    CHECK(back.inputs == d.inputs);
    CHECK(back.time_index == d.time_index);
    CHECK(back.targets == d.targets);
    CHECK(back.split == d.split);
    CHECK(back.target_day == d.target_day);
    CHECK(back.normalization.min == d.normalization.min);
    CHECK(back.normalization.max == d.normalization.max);
    CHECK(back.config_hash == d.config_hash);
    const auto manifest = io::read_json(a / "manifest.json");
    CHECK(manifest.at("split_sizes").at("test") == d.count(Split::kTest));
  }
  SUBCASE("missing dataset directory") {
    CHECK_THROWS_AS(load_dataset(scratch("empty")), DataError);
  }
}

TEST_CASE("noisy sine series satisfies the record invariants") {
  const RawSeries s = noisy_sine_series("S", {.rows = 500, .noise = 2.0, .seed = 3});
  CHECK(s.records.size() == 500);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    const auto& r = s.records[i];
    CHECK(r.low <= std::min(r.open, r.close));
    CHECK(r.high >= std::max(r.open, r.close));
    CHECK(r.low > 0);
    CHECK(r.volume >= 0);
    if (i > 0) CHECK(std::chrono::sys_days(s.records[i - 1].date) < std::chrono::sys_days(r.date));
  }
  const RawSeries again = noisy_sine_series("S", {.rows = 500, .noise = 2.0, .seed = 3});
  CHECK(again.records.back().close == s.records.back().close);
}

TEST_CASE("format_csv parses back exactly") {
  const RawSeries s = noisy_sine_series("S", {.rows = 200, .seed = 8});
  ParseDiagnostics diag;
  const RawSeries back = parse_csv_text(format_csv(s), "S", &diag);
  CHECK(diag.rejected_lines.empty());
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto &a = s.records[i], &b = back.records[i];
    CHECK(a.date == b.date);
    CHECK(a.open == b.open);
    CHECK(a.high == b.high);
    CHECK(a.low == b.low);
    CHECK(a.close == b.close);
    CHECK(a.volume == b.volume);
  }
  CHECK(format_csv(back) == format_csv(s));
}
