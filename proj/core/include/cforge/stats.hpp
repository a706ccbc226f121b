#pragma once

#include <span>
#include <vector>

namespace cforge::stats {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double stddev(std::span<const double> xs);
double std_error(std::span<const double> xs);

struct TTestResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

// Two-sided two-sample Student t-test with pooled variance. When both
// samples have zero variance the statistic is undefined: p = 1 if the means
// agree and 0 otherwise.
TTestResult two_sample_t_test(std::span<const double> a, std::span<const double> b);

// Pearson correlation; returns 0 when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

// Ranks starting at 1, ties receive their average rank.
std::vector<double> ranks(std::span<const double> xs);
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace cforge::stats
