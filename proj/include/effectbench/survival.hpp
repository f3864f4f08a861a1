#pragma once

// Weighted Kaplan-Meier, weighted Cox proportional hazards (Breslow ties),
// and the treated-minus-control survival difference curve.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "effectbench/table.hpp"

namespace effectbench {

struct SurvivalCurve {
  std::vector<double> times;     // distinct event times, strictly increasing
  std::vector<double> survival;  // S(t) just after each time
  std::vector<double> variance;  // Greenwood
  std::vector<double> at_risk;   // weighted
  std::vector<double> events;    // weighted

  /// Right-continuous step lookup: S at the last event time <= t, 1 before.
  double survival_at(double t) const noexcept;
  double variance_at(double t) const noexcept;
};

/// Product-limit estimate. `case_weights` may be empty (unit weights).
SurvivalCurve kaplan_meier(std::span<const double> times, const std::vector<bool>& events,
                           std::span<const double> case_weights = {});

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd hazard_ratios;
  Eigen::VectorXd se;  // model-based; weights treated as fixed
  Eigen::VectorXd p_values;
  double loglik = 0.0;
  int iterations = 0;
  std::string variance_note;
};

/// Weighted Breslow partial log-likelihood at beta (exposed for oracles).
double cox_partial_loglik(const Eigen::MatrixXd& x, std::span<const double> times, const std::vector<bool>& events,
                          std::span<const double> case_weights, const Eigen::VectorXd& beta);

/// Newton-Raphson with step halving, at most 25 iterations.
CoxFit fit_cox(const Eigen::MatrixXd& x, std::span<const double> times, const std::vector<bool>& events,
               std::span<const double> case_weights = {});

struct AteCurve {
  std::vector<double> time_grid;
  std::vector<double> ate;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
};

struct AteCurveResult {
  AteCurve curve;
  SurvivalCurve treated;
  SurvivalCurve control;
};

/// IPW-weighted Kaplan-Meier per arm (weights from compute_weights) and
/// their pointwise difference on the merged event-time grid.
AteCurveResult ate_curve(std::span<const double> times, const std::vector<bool>& events,
                         const Eigen::VectorXd& treatment, const Eigen::VectorXd& scores, Estimand estimand);

}  // namespace effectbench
