#pragma once

// Propensity scores, estimand weights, and the IPW and TMLE estimators for
// binary and continuous outcomes.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "effectbench/learners.hpp"
#include "effectbench/table.hpp"

namespace effectbench {

enum class PropensityMethod { glm, superlearner };
enum class OutcomeKind { binary, continuous };
enum class EffectMethod { ipw, tmle, ipw_km };

std::string_view to_string(PropensityMethod m) noexcept;
std::string_view to_string(EffectMethod m) noexcept;
PropensityMethod parse_propensity_method(std::string_view s);

inline constexpr double kDefaultClip = 0.01;
inline constexpr double kZ975 = 1.96;

struct PropensityModel {
  PropensityMethod method = PropensityMethod::glm;
  std::optional<FittedLearner> learner;  // glm method
  std::optional<EnsembleFit> ensemble;   // superlearner method
  Eigen::VectorXd scores;                // clipped into [clip_bound, 1 - clip_bound]
  double clip_bound = kDefaultClip;
};

struct PropensityOptions {
  PropensityMethod method = PropensityMethod::glm;
  double clip_bound = kDefaultClip;
  std::vector<LearnerSpec> library = default_library();
  int folds = 5;
  std::uint64_t seed = 0;
};

PropensityModel estimate_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXd& treatment,
                                    const PropensityOptions& options);

struct WeightVector {
  Eigen::VectorXd w;
  Estimand estimand = Estimand::ate;
  bool normalized = false;
};

/// Estimand-specific weights, normalized to mean 1 within each arm.
///   ATE: A/e + (1-A)/(1-e);  ATT: A + (1-A) e/(1-e);  ATC: A (1-e)/e + (1-A)
WeightVector compute_weights(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment, Estimand estimand);

/// Same weights before per-arm normalization.
Eigen::VectorXd raw_weights(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment, Estimand estimand);

struct EffectEstimate {
  EffectMethod method = EffectMethod::ipw;
  Estimand estimand = Estimand::ate;
  double psi = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  double std_error = 0.0;
  std::vector<double> influence;
  std::optional<double> epsilon;
};

/// Weighted difference of arm means (Hajek form).
double hajek_difference(const Eigen::VectorXd& y, const Eigen::VectorXd& treatment, const Eigen::VectorXd& w);

/// Recomputes weights for a bootstrap resample given as row indices into
/// the original sample. Must be a pure function of its argument.
using Reweighter = std::function<Eigen::VectorXd(std::span<const Eigen::Index>)>;

struct BootstrapOptions {
  int replicates = 499;
  std::uint64_t seed = 0;
  Reweighter reweight;  // empty: reuse the original weights of drawn rows
};

/// Reweighter that refits the propensity model and recomputes weights on
/// every resample.
Reweighter propensity_reweighter(const Eigen::MatrixXd& x, const Eigen::VectorXd& treatment, Estimand estimand,
                                 PropensityOptions options);

/// Hajek IPW point estimate with a seeded percentile bootstrap interval and
/// a normal p-value from the bootstrap standard error.
EffectEstimate ipw_estimate(const Eigen::VectorXd& y, const Eigen::VectorXd& treatment, const WeightVector& weights,
                            OutcomeKind kind, const BootstrapOptions& bootstrap);

struct OutcomeModel {
  EnsembleFit fit;
  Eigen::VectorXd q_treated;  // initial Qbar(1, X) on the [0,1] scale
  Eigen::VectorXd q_control;  // initial Qbar(0, X)
  std::optional<std::pair<double, double>> outcome_scale;  // (min, max) for continuous outcomes
};

struct TmleInputs {
  Eigen::MatrixXd outcome_covariates;    // treatment column appended internally
  Eigen::MatrixXd treatment_covariates;
  Eigen::VectorXd treatment;
  Eigen::VectorXd outcome;
  OutcomeKind kind = OutcomeKind::binary;
  Estimand estimand = Estimand::ate;
  std::vector<LearnerSpec> outcome_library = default_library();
  std::vector<LearnerSpec> treatment_library = default_library();
  double clip_bound = kDefaultClip;
  int folds = 5;
  std::uint64_t seed = 0;
};

struct TmleResult {
  EffectEstimate estimate;
  PropensityModel propensity;
  OutcomeModel outcome;
  double score_residual = 0.0;  // mean of H (Y* - Qbar*) after the update
};

/// Targeted maximum likelihood for the ATE. Other estimands raise a config
/// error ("TMLE not available for this estimand").
TmleResult tmle_estimate(const TmleInputs& in);

/// Two-sided normal p-value for estimate / se.
double normal_p_value(double estimate, double se);

}  // namespace effectbench
