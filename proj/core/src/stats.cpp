#include "cforge/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "cforge/error.hpp"

namespace cforge::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw InvalidInput("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double std_error(std::span<const double> xs) {
  if (xs.empty()) throw InvalidInput("standard error of an empty sample");
  return stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidInput("t-test needs at least two values per sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean(a);
  const double mb = mean(b);
  const double sa = stddev(a);
  const double sb = stddev(b);
  TTestResult r;
  r.dof = na + nb - 2.0;
  const double pooled = std::sqrt(((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / r.dof);
  const double se = pooled * std::sqrt(1.0 / na + 1.0 / nb);
  if (se == 0.0) {
    r.t = ma == mb ? 0.0 : std::copysign(INFINITY, ma - mb);
    r.p_value = ma == mb ? 1.0 : 0.0;
    return r;
  }
  r.t = (ma - mb) / se;
  boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("pearson: length mismatch");
  if (x.size() < 2) throw InvalidInput("pearson: need at least two pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return xs[i] < xs[j]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

}  // namespace cforge::stats
