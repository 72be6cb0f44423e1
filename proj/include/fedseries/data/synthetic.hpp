#pragma once

#include "fedseries/data/ingest.hpp"

#include <cstdint>
#include <string>

namespace fedseries::data {

/// Shape of a generated daily series. Close follows a sine around `level`
/// with Gaussian noise; the other columns are derived from it.
struct SineSeriesOptions {
  Index rows = 2000;
  double level = 100.0;
  double amplitude = 10.0;
  double period = 20.0;  // in days
  double phase = 0.0;
  double noise = 0.5;  // standard deviation of the close noise
  double volume = 1.0e6;
  std::uint64_t seed = 1;
};

/// Deterministic OHLCV series satisfying the record invariants, dated on
/// consecutive calendar days from 2015-01-01.
RawSeries noisy_sine_series(std::string symbol, const SineSeriesOptions& options);

}  // namespace fedseries::data
