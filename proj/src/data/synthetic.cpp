#include "fedseries/data/synthetic.hpp"

#include "fedseries/numerics/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedseries::data {

RawSeries noisy_sine_series(std::string symbol, const SineSeriesOptions& o) {
  if (o.rows < 2) throw std::invalid_argument("noisy_sine_series: need at least two rows");
  if (o.period <= 0) throw std::invalid_argument("noisy_sine_series: period must be positive");
  if (o.level - o.amplitude - 6 * o.noise <= 0) {
    throw std::invalid_argument("noisy_sine_series: level too low for positive prices");
  }
  Rng rng(o.seed);
  RawSeries s{std::move(symbol), {}};
  s.records.reserve(static_cast<std::size_t>(o.rows));
  const std::chrono::sys_days start{std::chrono::year{2015} / 1 / 1};
  const double w = 2 * std::numbers::pi / o.period;
  double previous = o.level + o.amplitude * std::sin(o.phase - w);
  for (Index t = 0; t < o.rows; ++t) {
    const double x = w * double(t) + o.phase;
    // Noise is clamped so prices stay strictly positive.
    const double close = o.level + o.amplitude * std::sin(x) + std::clamp(rng.normal(), -6.0, 6.0) * o.noise;
    const double open = previous;
    const double spread = std::abs(rng.normal()) * o.noise * 0.5;
    OhlcvRecord r;
    r.date = std::chrono::year_month_day{start + std::chrono::days{t}};
    r.open = open;
    r.close = close;
    r.high = std::max(open, close) + spread;
    r.low = std::min(open, close) - spread;
    r.volume = std::round(o.volume * (1.0 + 0.3 * std::cos(x) + 0.05 * rng.normal()));
    s.records.push_back(r);
    previous = close;
  }
  return s;
}

}  // namespace fedseries::data
