#pragma once

// Shared fixtures for the test binaries: simulated data and brute-force
// reference computations that do not reuse library code paths.

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "effectbench/rng.hpp"
#include "effectbench/table.hpp"

namespace testsupport {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Simulated {
  Eigen::MatrixXd x;
  Eigen::VectorXd a;
  Eigen::VectorXd y;
};

/// X ~ N(0, I_5), logit e(X) = 0.4 X1 - 0.4 X2.
/// continuous: Y = tau A + X1 + 0.5 X3 + N(0, 1).
/// binary:     Y ~ Bernoulli(expit(tau A + X1 + 0.5 X3)).
inline Simulated simulate_confounded(int n, std::uint64_t seed, bool binary, double tau) {
  effectbench::Rng rng(seed);
  Simulated s;
  s.x.resize(n, 5);
  s.a.resize(n);
  s.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 5; ++j) s.x(i, j) = rng.normal();
    const double e = expit(0.4 * s.x(i, 0) - 0.4 * s.x(i, 1));
    s.a[i] = rng.uniform() < e ? 1.0 : 0.0;
    const double lin = tau * s.a[i] + s.x(i, 0) + 0.5 * s.x(i, 2);
    s.y[i] = binary ? (rng.uniform() < expit(lin) ? 1.0 : 0.0) : lin + rng.normal();
  }
  return s;
}

/// Monte-Carlo marginal risk difference for the binary DGP above.
inline double binary_truth(double tau, int draws, std::uint64_t seed) {
  effectbench::Rng rng(seed);
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x1 = rng.normal();
    rng.normal();
    const double x3 = rng.normal();
    const double base = x1 + 0.5 * x3;
    sum += expit(tau + base) - expit(base);
  }
  return sum / draws;
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
inline double brute_auc(const std::vector<double>& score, const std::vector<double>& label) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (label[i] != 1.0) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (label[j] != 0.0) continue;
      pairs += 1.0;
      if (score[i] > score[j]) good += 1.0;
      if (score[i] == score[j]) good += 0.5;
    }
  }
  return good / pairs;
}

/// Harrell's C by enumerating unordered pairs. A pair is usable when the
/// shorter time is an event, or times tie with exactly one event.
inline double brute_cindex(const std::vector<double>& risk, const std::vector<double>& time,
                           const std::vector<bool>& event) {
  double good = 0.0, usable = 0.0;
  for (std::size_t i = 0; i < risk.size(); ++i) {
    for (std::size_t j = i + 1; j < risk.size(); ++j) {
      std::size_t first, second;
      if (time[i] < time[j]) {
        first = i, second = j;
      } else if (time[j] < time[i]) {
        first = j, second = i;
      } else if (event[i] != event[j]) {
        first = event[i] ? i : j;
        second = event[i] ? j : i;
      } else {
        continue;
      }
      if (!event[first]) continue;
      usable += 1.0;
      if (risk[first] > risk[second]) good += 1.0;
      if (risk[first] == risk[second]) good += 0.5;
    }
  }
  return good / usable;
}

/// Builds CSV text from named numeric columns (NaN becomes an empty cell).
inline std::string numeric_csv(const std::vector<std::string>& names, const std::vector<Eigen::VectorXd>& cols) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Eigen::Index i = 0; i < cols.front().size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (j) out << ',';
      if (!std::isnan(cols[j][i])) out << cols[j][i];
    }
    out << '\n';
  }
  return out.str();
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace testsupport
