#ifndef SOFTREACH_STATS_HPP_
#define SOFTREACH_STATS_HPP_

#include <cmath>
#include <span>
#include <vector>

namespace softreach {

// Exponential moving average seeded with the first sample:
// e_0 = x_0, e_k = e_{k-1} + factor * (x_k - e_{k-1}). Non-finite samples
// are skipped and repeat the previous value.
inline std::vector<double> ema(std::span<const double> xs, double factor = 0.025) {
  std::vector<double> out;
  out.reserve(xs.size());
  bool seeded = false;
  double e = std::nan("");
  for (double x : xs) {
    if (std::isfinite(x)) {
      e = seeded ? e + factor * (x - e) : x;
      seeded = true;
    }
    out.push_back(e);
  }
  return out;
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return std::nan("");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// population standard deviation
inline double stddev(std::span<const double> xs) {
  if (xs.empty()) return std::nan("");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace softreach

#endif  // SOFTREACH_STATS_HPP_
