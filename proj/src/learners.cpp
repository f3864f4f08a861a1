#include "effectbench/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"

namespace effectbench {

namespace {

constexpr int kGlmMaxIter = 50;
constexpr double kGlmScoreTol = 1e-8;
constexpr double kSeparationNorm = 1e3;
constexpr double kLassoTol = 1e-7;
constexpr int kLassoMaxSweeps = 100000;
constexpr int kLassoMaxOuter = 100;

void check_shapes(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) {
    throw Error(ErrorKind::config, "design rows and response length differ",
                std::to_string(x.rows()) + " vs " + std::to_string(y.size()));
  }
  if (y.size() == 0) throw Error(ErrorKind::config, "empty response");
}

void check_binary(const Eigen::VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw Error(ErrorKind::config, "binomial response must be 0/1");
  }
}

double soft_threshold(double z, double lambda) noexcept {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

double clip_prob(double p) noexcept { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

double weighted_binomial_deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) - y * eta, evaluated without overflow.
    const double e = eta[i];
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    dev += w[i] * (softplus - y[i] * e);
  }
  return dev;
}

struct Standardized {
  Eigen::MatrixXd xs;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

Standardized standardize(const Eigen::MatrixXd& x) {
  Standardized s;
  const double n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.xs = x.rowwise() - s.mean.transpose();
  s.sd = (s.xs.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (s.sd[j] > 1e-12 * std::max(1.0, std::abs(s.mean[j]))) {
      s.xs.col(j) /= s.sd[j];
    } else {
      s.sd[j] = 0.0;
      s.xs.col(j).setZero();
    }
  }
  return s;
}

FittedLearner to_original_scale(const Standardized& s, double intercept, const Eigen::VectorXd& beta,
                                Family family, double lambda) {
  FittedLearner fit;
  fit.kind = LearnerKind::lasso;
  fit.family = family;
  fit.lambda = lambda;
  fit.coefficients = Eigen::VectorXd::Zero(beta.size());
  fit.intercept = intercept;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (s.sd[j] == 0.0) continue;
    fit.coefficients[j] = beta[j] / s.sd[j];
    fit.intercept -= fit.coefficients[j] * s.mean[j];
  }
  return fit;
}

// Gaussian coordinate descent on standardized columns; residual r is
// maintained in place. Returns when the largest coefficient move < tol.
void gaussian_cd(const Standardized& s, Eigen::VectorXd& beta, Eigen::VectorXd& r, double lambda) {
  const double n = static_cast<double>(s.xs.rows());
  for (int sweep = 0; sweep < kLassoMaxSweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      if (s.sd[j] == 0.0) continue;
      const double old = beta[j];
      const double updated = soft_threshold(s.xs.col(j).dot(r) / n + old, lambda);
      if (updated != old) {
        r.noalias() -= (updated - old) * s.xs.col(j);
        beta[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < kLassoTol) return;
  }
  throw Error(ErrorKind::numeric, "lasso coordinate descent did not converge");
}

// Binomial lasso: outer quadratic approximation, inner weighted coordinate
// descent. Works on (intercept, beta) in standardized coordinates.
void binomial_cd(const Standardized& s, const Eigen::VectorXd& y, double& b0, Eigen::VectorXd& beta, double lambda) {
  const Eigen::Index n = s.xs.rows();
  const double nd = static_cast<double>(n);
  Eigen::VectorXd w(n), z(n), r(n);
  for (int outer = 0; outer < kLassoMaxOuter; ++outer) {
    const Eigen::VectorXd eta = (s.xs * beta).array() + b0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = logistic(eta[i]);
      w[i] = std::max(p * (1.0 - p), 1e-5);
      z[i] = eta[i] + (y[i] - p) / w[i];
    }
    const double b0_start = b0;
    const Eigen::VectorXd beta_start = beta;
    r = z - eta;
    const double wsum = w.sum();
    Eigen::VectorXd xwx(beta.size());
    for (Eigen::Index j = 0; j < beta.size(); ++j) xwx[j] = s.xs.col(j).cwiseAbs2().dot(w) / nd;

    bool inner_done = false;
    for (int sweep = 0; sweep < kLassoMaxSweeps && !inner_done; ++sweep) {
      const double delta0 = r.dot(w) / wsum;
      b0 += delta0;
      r.array() -= delta0;
      double max_change = std::abs(delta0);
      for (Eigen::Index j = 0; j < beta.size(); ++j) {
        if (s.sd[j] == 0.0 || xwx[j] <= 0.0) continue;
        const double old = beta[j];
        const double g = s.xs.col(j).cwiseProduct(w).dot(r) / nd;
        const double updated = soft_threshold(g + xwx[j] * old, lambda) / xwx[j];
        if (updated != old) {
          r.noalias() -= (updated - old) * s.xs.col(j);
          beta[j] = updated;
          max_change = std::max(max_change, std::abs(updated - old));
        }
      }
      inner_done = max_change < kLassoTol;
    }
    const double moved = std::max(std::abs(b0 - b0_start), (beta - beta_start).cwiseAbs().maxCoeff());
    if (beta.size() == 0 ? std::abs(b0 - b0_start) < kLassoTol : moved < kLassoTol) return;
  }
}

}  // namespace

std::string_view to_string(Family f) noexcept { return f == Family::binomial ? "binomial" : "gaussian"; }

std::string_view to_string(LearnerKind k) noexcept {
  switch (k) {
    case LearnerKind::mean: return "mean";
    case LearnerKind::glm: return "glm";
    case LearnerKind::lasso: return "lasso";
    case LearnerKind::gbstumps: return "gbstumps";
  }
  return "?";
}

LearnerKind parse_learner_kind(std::string_view s) {
  if (s == "mean") return LearnerKind::mean;
  if (s == "glm") return LearnerKind::glm;
  if (s == "lasso") return LearnerKind::lasso;
  if (s == "gbstumps") return LearnerKind::gbstumps;
  throw Error(ErrorKind::config, "unknown learner kind: " + std::string(s));
}

double logistic(double eta) noexcept {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

Eigen::VectorXd FittedLearner::link(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(x.rows(), intercept);
  if (coefficients.size() > 0) {
    if (coefficients.size() != x.cols()) throw Error(ErrorKind::config, "prediction design has wrong width");
    eta.noalias() += x * coefficients;
  }
  for (const auto& s : stumps) {
    if (s.feature >= x.cols()) throw Error(ErrorKind::config, "prediction design has wrong width");
    for (Eigen::Index i = 0; i < x.rows(); ++i) eta[i] += x(i, s.feature) <= s.threshold ? s.left : s.right;
  }
  return eta;
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd eta = link(x);
  if (family == Family::binomial) {
    for (auto& v : eta) v = clip_prob(logistic(v));
  }
  return eta;
}

std::vector<LearnerSpec> default_library() {
  auto stumps = learner_spec(LearnerKind::gbstumps);
  stumps.min_leaf = 10;
  return {learner_spec(LearnerKind::glm), learner_spec(LearnerKind::lasso), stumps};
}

std::vector<Eigen::Index> FoldAssignment::rows_in(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

std::vector<Eigen::Index> FoldAssignment::rows_not_in(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

FoldAssignment kfold_assign(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::config, "fold count must be at least 2");
  if (static_cast<std::size_t>(k) > n) {
    throw Error(ErrorKind::config, "more folds than rows", std::to_string(k) + " > " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  FoldAssignment folds;
  folds.k = k;
  folds.seed = seed;
  folds.fold_of.resize(n);
  for (std::size_t i = 0; i < n; ++i) folds.fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return folds;
}

FittedLearner fit_mean(const Eigen::VectorXd& y, Family family) {
  if (y.size() == 0) throw Error(ErrorKind::config, "empty response");
  FittedLearner fit;
  fit.kind = LearnerKind::mean;
  fit.family = family;
  const double m = y.mean();
  fit.intercept = family == Family::binomial ? logit(clip_prob(m)) : m;
  return fit;
}

FittedLearner fit_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                      const Eigen::VectorXd& case_weights) {
  check_shapes(x, y);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const Eigen::VectorXd w = case_weights.size() ? case_weights : Eigen::VectorXd::Ones(n);
  if (w.size() != n) throw Error(ErrorKind::config, "case weight length differs from rows");
  if ((w.array() < 0).any() || !w.allFinite()) throw Error(ErrorKind::config, "case weights must be nonnegative");
  if (family == Family::binomial) check_binary(y);

  Eigen::MatrixXd design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = x;

  const Eigen::VectorXd sqrt_w = w.cwiseSqrt();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sqrt_w.asDiagonal() * design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p + 1) throw Error(ErrorKind::numeric, "collinear design");

  Eigen::VectorXd beta;
  if (family == Family::gaussian) {
    beta = qr.solve(sqrt_w.cwiseProduct(y));
  } else {
    beta = Eigen::VectorXd::Zero(p + 1);
    beta[0] = logit(clip_prob(w.dot(y) / w.sum()));
    bool converged = false;
    Eigen::VectorXd eta = design * beta;
    double dev = weighted_binomial_deviance(eta, y, w);
    for (int iter = 0; iter < kGlmMaxIter; ++iter) {
      Eigen::VectorXd resid(n), info_w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pi = logistic(eta[i]);
        const double qi = logistic(-eta[i]);
        resid[i] = w[i] * (y[i] == 1.0 ? qi : -pi);
        info_w[i] = w[i] * pi * qi;
      }
      const Eigen::VectorXd score = design.transpose() * resid;
      const Eigen::MatrixXd info = design.transpose() * info_w.asDiagonal() * design;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      const auto& d = ldlt.vectorD();
      if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-14 * std::max(1.0, d.maxCoeff())) {
        throw Error(ErrorKind::numeric, "separation suspected", "information matrix became singular");
      }
      const Eigen::VectorXd step = ldlt.solve(score);
      if (!step.allFinite()) throw Error(ErrorKind::numeric, "separation suspected");
      if (score.cwiseAbs().maxCoeff() < kGlmScoreTol && step.cwiseAbs().maxCoeff() < 1e-6) {
        beta += step;
        converged = true;
        break;
      }
      double t = 1.0;
      Eigen::VectorXd trial = beta + step;
      Eigen::VectorXd trial_eta = design * trial;
      double trial_dev = weighted_binomial_deviance(trial_eta, y, w);
      while (trial_dev > dev * (1.0 + 1e-12) + 1e-300 && t > 1e-6) {
        t *= 0.5;
        trial = beta + t * step;
        trial_eta = design * trial;
        trial_dev = weighted_binomial_deviance(trial_eta, y, w);
      }
      beta = std::move(trial);
      eta = std::move(trial_eta);
      dev = trial_dev;
      if (beta.norm() > kSeparationNorm) {
        throw Error(ErrorKind::numeric, "separation suspected", "coefficient norm exceeded 1e3");
      }
    }
    if (!converged) throw Error(ErrorKind::numeric, "separation suspected", "IRLS did not converge in 50 iterations");
  }

  FittedLearner fit;
  fit.kind = LearnerKind::glm;
  fit.family = family;
  fit.intercept = beta[0];
  fit.coefficients = beta.tail(p);
  return fit;
}

double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  check_shapes(x, y);
  const auto s = standardize(x);
  const Eigen::VectorXd centered = y.array() - y.mean();
  if (x.cols() == 0) return 0.0;
  return (s.xs.transpose() * centered).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

std::vector<double> lasso_lambda_grid(double lambda_max, int points) {
  if (points < 1) throw Error(ErrorKind::config, "lambda grid needs at least one point");
  std::vector<double> grid;
  if (lambda_max <= 0.0) return {0.0};
  for (int k = 0; k < points; ++k) {
    const double frac = points == 1 ? 0.0 : static_cast<double>(k) / (points - 1);
    grid.push_back(lambda_max * std::pow(1e-3, frac));
  }
  return grid;
}

std::vector<FittedLearner> fit_lasso_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                                          const std::vector<double>& lambdas) {
  check_shapes(x, y);
  if (family == Family::binomial) check_binary(y);
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw Error(ErrorKind::config, "lambda must be nonnegative");
  }
  const auto s = standardize(x);
  std::vector<FittedLearner> path;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  if (family == Family::gaussian) {
    const double ybar = y.mean();
    Eigen::VectorXd r = y.array() - ybar;
    for (double lambda : lambdas) {
      gaussian_cd(s, beta, r, lambda);
      path.push_back(to_original_scale(s, ybar, beta, family, lambda));
    }
  } else {
    double b0 = logit(clip_prob(y.mean()));
    for (double lambda : lambdas) {
      binomial_cd(s, y, b0, beta, lambda);
      path.push_back(to_original_scale(s, b0, beta, family, lambda));
    }
  }
  return path;
}

FittedLearner fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::config, "lambda must be nonnegative");
  return fit_lasso_path(x, y, family, {lambda}).front();
}

FittedLearner fit_lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family, int points,
                           int folds, std::uint64_t seed) {
  check_shapes(x, y);
  const auto grid = lasso_lambda_grid(lasso_lambda_max(x, y), points);
  if (grid.size() == 1) return fit_lasso(x, y, family, grid.front());

  const int k = std::min<int>(folds, static_cast<int>(y.size()));
  const auto assignment = kfold_assign(static_cast<std::size_t>(y.size()), k, seed);
  std::vector<double> risk(grid.size(), 0.0);
  for (int f = 0; f < k; ++f) {
    const auto train = assignment.rows_not_in(f);
    const auto test = assignment.rows_in(f);
    const Eigen::MatrixXd xtr = x(train, Eigen::all);
    const Eigen::VectorXd ytr = y(train);
    const Eigen::MatrixXd xte = x(test, Eigen::all);
    const Eigen::VectorXd yte = y(test);
    const auto path = fit_lasso_path(xtr, ytr, family, grid);
    for (std::size_t l = 0; l < grid.size(); ++l) {
      risk[l] += (path[l].predict(xte) - yte).squaredNorm();
    }
  }
  const auto best = static_cast<std::size_t>(std::ranges::min_element(risk) - risk.begin());
  const std::vector<double> head(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  return fit_lasso_path(x, y, family, head).back();
}

double training_loss(const FittedLearner& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd pred = fit.predict(x);
  if (fit.family == Family::gaussian) return (pred - y).squaredNorm() / static_cast<double>(y.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    loss -= y[i] == 1.0 ? std::log(pred[i]) : std::log1p(-pred[i]);
  }
  return loss / static_cast<double>(y.size());
}

FittedLearner fit_gbstumps(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                           const StumpOptions& options) {
  check_shapes(x, y);
  if (options.rounds < 0) throw Error(ErrorKind::config, "rounds must be nonnegative");
  if (!(options.learning_rate > 0.0 && options.learning_rate <= 1.0)) {
    throw Error(ErrorKind::config, "learning_rate must lie in (0, 1]");
  }
  if (!(options.subsample > 0.0 && options.subsample <= 1.0)) {
    throw Error(ErrorKind::config, "subsample must lie in (0, 1]");
  }
  if (family == Family::binomial) check_binary(y);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const auto min_leaf = static_cast<double>(std::max(1, options.min_leaf));

  FittedLearner fit = fit_mean(y, family);
  fit.kind = LearnerKind::gbstumps;
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, fit.intercept);

  std::vector<std::vector<Eigen::Index>> order(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    auto& o = order[static_cast<std::size_t>(j)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Eigen::Index{0});
    std::ranges::stable_sort(o, [&](Eigen::Index a, Eigen::Index b) { return x(a, j) < x(b, j); });
  }

  auto loss_of = [&](const Eigen::VectorXd& e) {
    if (family == Family::gaussian) return (y - e).squaredNorm() / static_cast<double>(n);
    return weighted_binomial_deviance(e, y, Eigen::VectorXd::Ones(n)) / static_cast<double>(n);
  };

  Rng rng(options.seed);
  std::vector<char> in_sample(static_cast<std::size_t>(n), 1);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Eigen::VectorXd grad(n), hess(n);
  double loss = loss_of(eta);

  for (int round = 0; round < options.rounds; ++round) {
    if (options.subsample < 1.0) {
      rng.shuffle(perm);
      const auto keep = std::max<std::size_t>(2, static_cast<std::size_t>(options.subsample * static_cast<double>(n)));
      std::ranges::fill(in_sample, 0);
      for (std::size_t i = 0; i < keep && i < perm.size(); ++i) in_sample[static_cast<std::size_t>(perm[i])] = 1;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (family == Family::gaussian) {
        grad[i] = y[i] - eta[i];
        hess[i] = 1.0;
      } else {
        const double pi = logistic(eta[i]);
        grad[i] = y[i] - pi;
        hess[i] = pi * (1.0 - pi);
      }
    }
    double g_total = 0.0, h_total = 0.0, c_total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!in_sample[static_cast<std::size_t>(i)]) continue;
      g_total += grad[i];
      h_total += hess[i];
      c_total += 1.0;
    }
    const double h_floor = 1e-12;

    double best_gain = 0.0;
    std::optional<Stump> best;
    for (Eigen::Index j = 0; j < p; ++j) {
      double gl = 0.0, hl = 0.0, cl = 0.0;
      const auto& o = order[static_cast<std::size_t>(j)];
      Eigen::Index prev = -1;
      for (auto idx : o) {
        if (!in_sample[static_cast<std::size_t>(idx)]) continue;
        if (prev >= 0 && x(idx, j) > x(prev, j) && cl >= min_leaf && c_total - cl >= min_leaf) {
          const double gr = g_total - gl;
          const double hr = h_total - hl;
          const double gain = gl * gl / std::max(hl, h_floor) + gr * gr / std::max(hr, h_floor) -
                              g_total * g_total / std::max(h_total, h_floor);
          if (gain > best_gain + 1e-12) {
            best_gain = gain;
            best = Stump{j, 0.5 * (x(prev, j) + x(idx, j)), gl / std::max(hl, h_floor), gr / std::max(hr, h_floor)};
          }
        }
        gl += grad[idx];
        hl += hess[idx];
        cl += 1.0;
        prev = idx;
      }
    }
    if (!best) break;

    double step = options.learning_rate;
    Eigen::VectorXd trial(n);
    double trial_loss = 0.0;
    for (;;) {
      for (Eigen::Index i = 0; i < n; ++i) {
        trial[i] = eta[i] + step * (x(i, best->feature) <= best->threshold ? best->left : best->right);
      }
      trial_loss = loss_of(trial);
      if (trial_loss <= loss || step < 1e-10) break;
      step *= 0.5;
    }
    if (trial_loss > loss) break;
    best->left *= step;
    best->right *= step;
    fit.stumps.push_back(*best);
    eta = trial;
    loss = trial_loss;
  }
  return fit;
}

FittedLearner fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          Family family, std::uint64_t seed) {
  switch (spec.kind) {
    case LearnerKind::mean:
      check_shapes(x, y);
      return fit_mean(y, family);
    case LearnerKind::glm: {
      // Constant columns are aliased with the intercept; they get a zero
      // coefficient instead of failing the fit (rare levels vanish in folds).
      check_shapes(x, y);
      std::vector<Eigen::Index> keep;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (x.col(j).maxCoeff() > x.col(j).minCoeff()) keep.push_back(j);
      }
      if (static_cast<Eigen::Index>(keep.size()) == x.cols()) return fit_glm(x, y, family);
      auto fit = fit_glm(x(Eigen::all, keep), y, family);
      Eigen::VectorXd full = Eigen::VectorXd::Zero(x.cols());
      for (std::size_t k = 0; k < keep.size(); ++k) full[keep[k]] = fit.coefficients[static_cast<Eigen::Index>(k)];
      fit.coefficients = std::move(full);
      return fit;
    }
    case LearnerKind::lasso:
      if (spec.lambda) return fit_lasso(x, y, family, *spec.lambda);
      return fit_lasso_cv(x, y, family, spec.lambda_grid, spec.inner_folds, seed);
    case LearnerKind::gbstumps:
      return fit_gbstumps(x, y, family,
                          StumpOptions{spec.rounds, spec.learning_rate, spec.min_leaf, spec.subsample, seed});
  }
  throw Error(ErrorKind::config, "unknown learner kind");
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  if (z.rows() != y.size() || z.rows() < 1 || z.cols() < 1) {
    throw Error(ErrorKind::config, "nnls: incompatible shapes");
  }
  const Eigen::Index m = z.cols();
  const double tol = 1e-8 * std::max(1.0, (z.transpose() * y).cwiseAbs().maxCoeff());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);

  auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
    if (idx.empty()) return s;
    const Eigen::MatrixXd zp = z(Eigen::all, idx);
    const Eigen::VectorXd sp = zp.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < idx.size(); ++k) s[idx[k]] = sp[static_cast<Eigen::Index>(k)];
    return s;
  };

  for (int iter = 0; iter < 30 * static_cast<int>(m) + 30; ++iter) {
    const Eigen::VectorXd grad = z.transpose() * (y - z * w);
    Eigen::Index best = -1;
    double best_grad = tol;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && grad[j] > best_grad) {
        best_grad = grad[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    for (int inner = 0; inner < 3 * static_cast<int>(m) + 3; ++inner) {
      Eigen::VectorXd s = solve_passive();
      bool feasible = true;
      double alpha = 1.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) {
          feasible = false;
          alpha = std::min(alpha, w[j] / (w[j] - s[j]));
        }
      }
      if (feasible) {
        w = s;
        break;
      }
      w += alpha * (s - w);
      for (Eigen::Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && w[j] <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          w[j] = 0.0;
        }
      }
    }
  }
  return w.cwiseMax(0.0);
}

Eigen::VectorXd simplex_least_squares(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const Eigen::Index m = z.cols();
  if (m < 1 || m > 16 || z.rows() != y.size()) throw Error(ErrorKind::config, "simplex_least_squares: bad shape");
  const Eigen::MatrixXd g = z.transpose() * z;
  const Eigen::VectorXd b = z.transpose() * y;
  const double yy = y.squaredNorm();
  Eigen::VectorXd best_w;
  double best_obj = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (mask & (1u << j)) idx.push_back(j);
    }
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd rhs(k + 1);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index c = 0; c < k; ++c) kkt(a, c) = g(idx[a], idx[c]);
      kkt(a, k) = 1.0;
      kkt(k, a) = 1.0;
      rhs[a] = b[idx[a]];
    }
    rhs[k] = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    if ((sol.head(k).array() < -1e-12).any()) continue;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    for (Eigen::Index a = 0; a < k; ++a) w[idx[a]] = std::max(0.0, sol[a]);
    w /= w.sum();
    const double obj = w.dot(g * w) - 2.0 * b.dot(w) + yy;
    if (obj < best_obj) {
      best_obj = obj;
      best_w = w;
    }
  }
  return best_w;
}

Eigen::VectorXd EnsembleFit::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (std::size_t j = 0; j < base_fits.size(); ++j) {
    const double w = weights[static_cast<Eigen::Index>(j)];
    if (!base_fits[j] || w == 0.0) continue;
    out.noalias() += w * base_fits[j]->predict(x);
  }
  if (family == Family::binomial) out = out.unaryExpr([](double p) { return clip_prob(p); });
  return out;
}

EnsembleFit fit_superlearner(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                             const std::vector<LearnerSpec>& library, int k, std::uint64_t seed) {
  check_shapes(x, y);
  if (library.empty()) throw Error(ErrorKind::config, "learner library is empty");
  const auto folds = kfold_assign(static_cast<std::size_t>(y.size()), k, seed);
  const auto m = static_cast<Eigen::Index>(library.size());

  EnsembleFit ens;
  ens.family = family;
  ens.library = library;
  ens.cv_predictions = Eigen::MatrixXd::Zero(y.size(), m);
  std::vector<std::string> failure(library.size());

  for (int f = 0; f < k; ++f) {
    const auto train = folds.rows_not_in(f);
    const auto test = folds.rows_in(f);
    const Eigen::MatrixXd xtr = x(train, Eigen::all);
    const Eigen::VectorXd ytr = y(train);
    const Eigen::MatrixXd xte = x(test, Eigen::all);
    for (Eigen::Index j = 0; j < m; ++j) {
      auto& why = failure[static_cast<std::size_t>(j)];
      if (!why.empty()) continue;
      try {
        const auto fit = fit_learner(library[static_cast<std::size_t>(j)], xtr, ytr, family,
                                     derive_seed(seed, static_cast<std::uint64_t>(j * 1000 + f)));
        ens.cv_predictions(test, j) = fit.predict(xte);
      } catch (const Error& e) {
        why = std::string(to_string(library[static_cast<std::size_t>(j)].kind)) + " (fold " + std::to_string(f) +
              "): " + e.what();
      }
    }
  }

  std::vector<Eigen::Index> valid;
  std::string all_failures;
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& why = failure[static_cast<std::size_t>(j)];
    if (why.empty()) {
      valid.push_back(j);
    } else {
      ens.warnings.push_back("learner dropped: " + why);
      all_failures += (all_failures.empty() ? "" : "; ") + why;
    }
  }
  if (valid.empty()) throw Error(ErrorKind::numeric, "every learner failed", all_failures);

  const double n = static_cast<double>(y.size());
  ens.cv_risks = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  for (auto j : valid) ens.cv_risks[j] = (ens.cv_predictions.col(j) - y).squaredNorm() / n;
  const double best_single = ens.cv_risks.minCoeff();

  const Eigen::MatrixXd zv = ens.cv_predictions(Eigen::all, valid);
  Eigen::VectorXd wv = nnls(zv, y);
  if (wv.sum() > 0.0) {
    wv /= wv.sum();
  } else {
    wv = Eigen::VectorXd::Constant(wv.size(), 1.0 / static_cast<double>(wv.size()));
    ens.warnings.push_back("all stacking weights were zero; using uniform weights");
  }
  auto risk_of = [&](const Eigen::VectorXd& w) { return (zv * w - y).squaredNorm() / n; };
  if (risk_of(wv) > best_single && valid.size() <= 16) {
    wv = simplex_least_squares(zv, y);
    ens.warnings.push_back("normalized NNLS weights exceeded the best single-learner risk; "
                           "using the convex-combination optimum");
  }

  ens.weights = Eigen::VectorXd::Zero(m);
  for (std::size_t a = 0; a < valid.size(); ++a) ens.weights[valid[a]] = wv[static_cast<Eigen::Index>(a)];

  ens.base_fits.assign(library.size(), std::nullopt);
  for (auto j : valid) {
    try {
      ens.base_fits[static_cast<std::size_t>(j)] =
          fit_learner(library[static_cast<std::size_t>(j)], x, y, family,
                      derive_seed(seed, static_cast<std::uint64_t>(j * 1000 + 999)));
    } catch (const Error& e) {
      ens.warnings.push_back("learner dropped at full-data refit: " +
                             std::string(to_string(library[static_cast<std::size_t>(j)].kind)) + ": " + e.what());
      ens.weights[j] = 0.0;
      ens.cv_risks[j] = std::numeric_limits<double>::infinity();
    }
  }
  if (!(ens.weights.sum() > 0.0)) throw Error(ErrorKind::numeric, "every learner failed at full-data refit");
  ens.weights /= ens.weights.sum();
  ens.meta_risk = (ens.cv_predictions * ens.weights - y).squaredNorm() / n;
  return ens;
}

}  // namespace effectbench
