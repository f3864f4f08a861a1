#pragma once

// Regression learners and the cross-validated stacking ensemble used for
// both treatment and outcome models.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace effectbench {

enum class Family { binomial, gaussian };
enum class LearnerKind { mean, glm, lasso, gbstumps };

std::string_view to_string(Family f) noexcept;
std::string_view to_string(LearnerKind k) noexcept;
LearnerKind parse_learner_kind(std::string_view s);

/// Binomial predictions are clipped into [kProbClip, 1 - kProbClip].
inline constexpr double kProbClip = 1e-12;

double logistic(double eta) noexcept;
double logit(double p) noexcept;

/// x <= threshold goes left.
struct Stump {
  Eigen::Index feature = 0;
  double threshold = 0.0;
  double left = 0.0;
  double right = 0.0;
};

/// A fitted learner. Every kind shares an additive link-scale predictor:
///   eta(x) = intercept + x' coefficients + sum of stump contributions,
/// mapped through the logistic function for the binomial family.
struct FittedLearner {
  LearnerKind kind = LearnerKind::mean;
  Family family = Family::gaussian;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // empty for mean and gbstumps
  std::vector<Stump> stumps;
  double lambda = 0.0;  // lasso penalty actually used

  Eigen::VectorXd link(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

/// A library entry: learner kind plus hyperparameters. Unused fields are
/// ignored by kinds that do not consume them.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::glm;
  std::optional<double> lambda;  // lasso: nullopt selects by inner CV
  int lambda_grid = 20;
  int inner_folds = 5;
  int rounds = 100;
  double learning_rate = 0.1;
  int min_leaf = 5;
  double subsample = 1.0;
};

inline LearnerSpec learner_spec(LearnerKind kind) {
  LearnerSpec s;
  s.kind = kind;
  return s;
}

/// GLM, CV-selected lasso, boosted stumps.
std::vector<LearnerSpec> default_library();

struct FoldAssignment {
  std::vector<int> fold_of;
  int k = 0;
  std::uint64_t seed = 0;

  std::vector<Eigen::Index> rows_in(int fold) const;
  std::vector<Eigen::Index> rows_not_in(int fold) const;
};

/// Seeded uniform shuffle, then round-robin fold labels.
FoldAssignment kfold_assign(std::size_t n, int k, std::uint64_t seed);

/// Intercept always included. Gaussian: weighted least squares. Binomial:
/// IRLS until max |score| < 1e-8, at most 50 iterations. `case_weights`
/// may be empty (unit weights).
FittedLearner fit_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                      const Eigen::VectorXd& case_weights = {});

FittedLearner fit_mean(const Eigen::VectorXd& y, Family family);

/// Coordinate-descent lasso on internally standardized columns (population
/// SD), unpenalized intercept, objective (1/2n)||r||^2 + lambda ||b||_1 for
/// gaussian and -(1/n) loglik + lambda ||b||_1 for binomial.
FittedLearner fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, double lambda);

/// Warm-started path over decreasing lambdas; one fit per lambda.
std::vector<FittedLearner> fit_lasso_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                                          const std::vector<double>& lambdas);

/// Smallest lambda that zeroes every slope.
double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// 20-point (by default) log grid from lambda_max down to lambda_max/1000.
std::vector<double> lasso_lambda_grid(double lambda_max, int points);

/// Lasso with lambda chosen by inner k-fold CV risk over the default grid.
FittedLearner fit_lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, int points,
                           int folds, std::uint64_t seed);

struct StumpOptions {
  int rounds = 100;
  double learning_rate = 0.1;
  int min_leaf = 1;
  double subsample = 1.0;
  std::uint64_t seed = 0;
};

/// Gradient boosting of depth-1 trees: squared loss (gaussian) or log loss
/// (binomial, Newton leaf values with step halving so the training loss
/// never increases).
FittedLearner fit_gbstumps(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                           const StumpOptions& options);

/// Training loss of a fitted learner: mean squared error (gaussian) or mean
/// negative log-likelihood (binomial).
double training_loss(const FittedLearner& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

FittedLearner fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          Family family, std::uint64_t seed);

/// Lawson-Hanson active set. Minimizes ||Zw - y||^2 subject to w >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

/// Minimizes ||Zw - y||^2 over the probability simplex by exact enumeration
/// of supports (m <= 16).
Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

struct EnsembleFit {
  Family family = Family::gaussian;
  std::vector<LearnerSpec> library;
  std::vector<std::optional<FittedLearner>> base_fits;  // nullopt when dropped
  Eigen::VectorXd weights;
  Eigen::VectorXd cv_risks;  // +inf for dropped learners
  double meta_risk = 0.0;
  Eigen::MatrixXd cv_predictions;  // n x m stacked out-of-fold predictions
  std::vector<std::string> warnings;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

/// Stacked ensemble: out-of-fold predictions from each library member, NNLS
/// of y on them, weights normalized to sum 1, members refit on all rows.
/// Binomial risk is the mean squared error of probabilities.
EnsembleFit fit_superlearner(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                             const std::vector<LearnerSpec>& library, int k, std::uint64_t seed);

}  // namespace effectbench
