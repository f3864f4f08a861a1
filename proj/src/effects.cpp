#include "effectbench/effects.hpp"

#include <algorithm>
#include <cmath>

#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"

namespace effectbench {

namespace {

constexpr double kContinuousBound = 1e-6;

void require_variation(const Eigen::VectorXd& a) {
  const double treated = a.sum();
  if (treated == 0.0 || treated == static_cast<double>(a.size())) {
    throw Error(ErrorKind::config, "no variation in treatment");
  }
}

double softplus(double x) noexcept { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double quantile_type7(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::string_view to_string(PropensityMethod m) noexcept {
  return m == PropensityMethod::glm ? "glm" : "superlearner";
}

std::string_view to_string(EffectMethod m) noexcept {
  switch (m) {
    case EffectMethod::ipw: return "IPW";
    case EffectMethod::tmle: return "TMLE";
    case EffectMethod::ipw_km: return "IPW_KM";
  }
  return "?";
}

PropensityMethod parse_propensity_method(std::string_view s) {
  if (s == "glm") return PropensityMethod::glm;
  if (s == "superlearner") return PropensityMethod::superlearner;
  throw Error(ErrorKind::config, "unknown propensity method: " + std::string(s));
}

double normal_p_value(double estimate, double se) {
  if (!(se > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
  return std::erfc(std::abs(estimate / se) / std::sqrt(2.0));
}

PropensityModel estimate_propensity(const Eigen::MatrixXd& x, const Eigen::VectorXd& treatment,
                                    const PropensityOptions& options) {
  if (!(options.clip_bound > 0.0 && options.clip_bound < 0.5)) {
    throw Error(ErrorKind::config, "clip bound must lie in (0, 0.5)");
  }
  if (x.rows() != treatment.size()) throw Error(ErrorKind::config, "treatment length differs from design rows");
  for (Eigen::Index i = 0; i < treatment.size(); ++i) {
    if (treatment[i] != 0.0 && treatment[i] != 1.0) throw Error(ErrorKind::config, "treatment labels must be 0/1");
  }
  require_variation(treatment);

  PropensityModel model;
  model.method = options.method;
  model.clip_bound = options.clip_bound;
  Eigen::VectorXd raw;
  if (options.method == PropensityMethod::glm) {
    model.learner = fit_learner(learner_spec(LearnerKind::glm), x, treatment, Family::binomial, options.seed);
    raw = model.learner->predict(x);
  } else {
    const int k = std::min<int>(options.folds, static_cast<int>(treatment.size()));
    model.ensemble = fit_superlearner(x, treatment, Family::binomial, options.library, k, options.seed);
    raw = model.ensemble->predict(x);
  }
  model.scores = raw.cwiseMax(options.clip_bound).cwiseMin(1.0 - options.clip_bound);
  return model;
}

Eigen::VectorXd raw_weights(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment, Estimand estimand) {
  if (scores.size() != treatment.size()) throw Error(ErrorKind::config, "scores and treatment lengths differ");
  Eigen::VectorXd w(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double e = scores[i];
    const double a = treatment[i];
    if (!(e > 0.0 && e < 1.0)) throw Error(ErrorKind::config, "propensity scores must lie in (0, 1)");
    switch (estimand) {
      case Estimand::ate: w[i] = a / e + (1.0 - a) / (1.0 - e); break;
      case Estimand::att: w[i] = a + (1.0 - a) * e / (1.0 - e); break;
      case Estimand::atc: w[i] = a * (1.0 - e) / e + (1.0 - a); break;
    }
  }
  return w;
}

WeightVector compute_weights(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment, Estimand estimand) {
  WeightVector out;
  out.estimand = estimand;
  out.w = raw_weights(scores, treatment, estimand);
  double sum1 = 0.0, sum0 = 0.0, n1 = 0.0, n0 = 0.0;
  for (Eigen::Index i = 0; i < out.w.size(); ++i) {
    if (treatment[i] == 1.0) {
      sum1 += out.w[i];
      n1 += 1.0;
    } else {
      sum0 += out.w[i];
      n0 += 1.0;
    }
  }
  for (Eigen::Index i = 0; i < out.w.size(); ++i) {
    out.w[i] *= treatment[i] == 1.0 ? n1 / sum1 : n0 / sum0;
  }
  out.normalized = true;
  return out;
}

double hajek_difference(const Eigen::VectorXd& y, const Eigen::VectorXd& treatment, const Eigen::VectorXd& w) {
  double num1 = 0.0, den1 = 0.0, num0 = 0.0, den0 = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (treatment[i] == 1.0) {
      num1 += w[i] * y[i];
      den1 += w[i];
    } else {
      num0 += w[i] * y[i];
      den0 += w[i];
    }
  }
  if (!(den1 > 0.0) || !(den0 > 0.0)) throw Error(ErrorKind::numeric, "an arm has zero total weight");
  return num1 / den1 - num0 / den0;
}

Reweighter propensity_reweighter(const Eigen::MatrixXd& x, const Eigen::VectorXd& treatment, Estimand estimand,
                                 PropensityOptions options) {
  return [x, treatment, estimand, options](std::span<const Eigen::Index> rows) {
    const std::vector<Eigen::Index> idx(rows.begin(), rows.end());
    const Eigen::MatrixXd xb = x(idx, Eigen::all);
    const Eigen::VectorXd ab = treatment(idx);
    const auto model = estimate_propensity(xb, ab, options);
    return compute_weights(model.scores, ab, estimand).w;
  };
}

EffectEstimate ipw_estimate(const Eigen::VectorXd& y, const Eigen::VectorXd& treatment, const WeightVector& weights,
                            OutcomeKind kind, const BootstrapOptions& bootstrap) {
  const Eigen::Index n = y.size();
  if (treatment.size() != n || weights.w.size() != n) throw Error(ErrorKind::config, "ipw inputs differ in length");
  if (!weights.normalized) throw Error(ErrorKind::config, "ipw requires normalized weights");
  if (bootstrap.replicates < 100) throw Error(ErrorKind::config, "at least 100 bootstrap replicates are required");
  if (kind == OutcomeKind::binary) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) throw Error(ErrorKind::config, "binary outcome must be 0/1");
    }
  }
  require_variation(treatment);

  EffectEstimate est;
  est.method = EffectMethod::ipw;
  est.estimand = weights.estimand;
  est.psi = hajek_difference(y, treatment, weights.w);

  const auto b = static_cast<std::size_t>(bootstrap.replicates);
  const std::size_t budget = 10 * b;
  std::vector<double> reps(b);
  std::size_t attempts = 0;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < b; ++r) {
    Rng rng(derive_seed(bootstrap.seed, r));
    bool done = false;
    while (!done) {
      if (++attempts > budget) {
        throw Error(ErrorKind::numeric, "bootstrap could not draw resamples with both arms present",
                    std::to_string(budget) + " attempts");
      }
      double treated = 0.0;
      for (auto& i : idx) {
        i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        treated += treatment[i];
      }
      if (treated == 0.0 || treated == static_cast<double>(n)) continue;
      const Eigen::VectorXd yb = y(idx);
      const Eigen::VectorXd ab = treatment(idx);
      Eigen::VectorXd wb;
      if (bootstrap.reweight) {
        try {
          wb = bootstrap.reweight(idx);
        } catch (const Error&) {
          continue;  // e.g. separation in this resample; draw again
        }
      } else {
        wb = weights.w(idx);
      }
      reps[r] = hajek_difference(yb, ab, wb);
      done = true;
    }
  }

  est.std_error = sample_sd(reps);
  std::ranges::sort(reps);
  est.ci_low = std::min(quantile_type7(reps, 0.025), est.psi);
  est.ci_high = std::max(quantile_type7(reps, 0.975), est.psi);
  est.p_value = normal_p_value(est.psi, est.std_error);
  return est;
}

TmleResult tmle_estimate(const TmleInputs& in) {
  if (in.estimand != Estimand::ate) throw Error(ErrorKind::config, "TMLE not available for this estimand");
  const Eigen::Index n = in.outcome.size();
  if (in.treatment.size() != n || in.outcome_covariates.rows() != n || in.treatment_covariates.rows() != n) {
    throw Error(ErrorKind::config, "tmle inputs differ in length");
  }
  require_variation(in.treatment);

  TmleResult result;
  Eigen::VectorXd ystar = in.outcome;
  double lo = 0.0, scale = 1.0;
  Family q_family = Family::binomial;
  if (in.kind == OutcomeKind::binary) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (ystar[i] != 0.0 && ystar[i] != 1.0) throw Error(ErrorKind::config, "binary outcome must be 0/1");
    }
  } else {
    if (!in.outcome.allFinite()) throw Error(ErrorKind::config, "continuous outcome must be finite");
    lo = in.outcome.minCoeff();
    const double hi = in.outcome.maxCoeff();
    if (hi == lo) throw Error(ErrorKind::config, "constant outcome");
    scale = hi - lo;
    ystar = (in.outcome.array() - lo) / scale;
    result.outcome.outcome_scale = std::make_pair(lo, hi);
    q_family = Family::gaussian;
  }

  const Eigen::Index p = in.outcome_covariates.cols();
  Eigen::MatrixXd xq(n, p + 1);
  xq.leftCols(p) = in.outcome_covariates;
  xq.col(p) = in.treatment;
  const int k = std::min<int>(in.folds, static_cast<int>(n));
  result.outcome.fit = fit_superlearner(xq, ystar, q_family, in.outcome_library, k, derive_seed(in.seed, 1));

  auto bound = [&](Eigen::VectorXd q) {
    if (in.kind == OutcomeKind::continuous) q = q.cwiseMax(kContinuousBound).cwiseMin(1.0 - kContinuousBound);
    return q;
  };
  xq.col(p).setOnes();
  result.outcome.q_treated = bound(result.outcome.fit.predict(xq));
  xq.col(p).setZero();
  result.outcome.q_control = bound(result.outcome.fit.predict(xq));
  const auto& q1 = result.outcome.q_treated;
  const auto& q0 = result.outcome.q_control;

  PropensityOptions popt{.method = PropensityMethod::superlearner,
                         .clip_bound = in.clip_bound,
                         .library = in.treatment_library,
                         .folds = in.folds,
                         .seed = derive_seed(in.seed, 2)};
  result.propensity = estimate_propensity(in.treatment_covariates, in.treatment, popt);
  const auto& g = result.propensity.scores;

  Eigen::VectorXd h_obs(n), h1(n), h0(n), offset(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h1[i] = 1.0 / g[i];
    h0[i] = -1.0 / (1.0 - g[i]);
    const bool treated = in.treatment[i] == 1.0;
    h_obs[i] = treated ? h1[i] : h0[i];
    offset[i] = logit(treated ? q1[i] : q0[i]);
  }

  // One-dimensional logistic fluctuation with offset, no intercept. The
  // quasi-log-likelihood is concave in epsilon; Newton with halving.
  auto loglik = [&](double eps) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double eta = offset[i] + eps * h_obs[i];
      const double log_q = -softplus(-eta);
      const double log_1mq = -softplus(eta);
      ll += ystar[i] * log_q + (1.0 - ystar[i]) * log_1mq;
    }
    return ll;
  };
  double eps = 0.0;
  bool converged = false;
  double ll = loglik(eps);
  for (int iter = 0; iter < 100; ++iter) {
    double score = 0.0, info = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = logistic(offset[i] + eps * h_obs[i]);
      score += h_obs[i] * (ystar[i] - q);
      info += h_obs[i] * h_obs[i] * q * (1.0 - q);
    }
    if (!(info > 0.0)) throw Error(ErrorKind::numeric, "TMLE fluctuation information vanished");
    double delta = score / info;
    double trial = loglik(eps + delta);
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    for (int half = 0; half < 60 && trial < ll - slack && std::abs(delta) > 1e-14; ++half) {
      delta *= 0.5;
      trial = loglik(eps + delta);
    }
    eps += delta;
    ll = trial;
    if (std::abs(delta) < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(ErrorKind::numeric, "TMLE fluctuation did not converge");

  Eigen::VectorXd q1s(n), q0s(n), qas(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    q1s[i] = logistic(logit(q1[i]) + eps * h1[i]);
    q0s[i] = logistic(logit(q0[i]) + eps * h0[i]);
    qas[i] = in.treatment[i] == 1.0 ? q1s[i] : q0s[i];
  }
  const double psi_star = (q1s - q0s).mean();
  Eigen::VectorXd ic(n);
  double residual = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double resid_term = h_obs[i] * (ystar[i] - qas[i]);
    residual += resid_term;
    ic[i] = scale * (resid_term + q1s[i] - q0s[i] - psi_star);
  }
  result.score_residual = residual / static_cast<double>(n);

  auto& est = result.estimate;
  est.method = EffectMethod::tmle;
  est.estimand = Estimand::ate;
  est.psi = scale * psi_star;
  est.epsilon = eps;
  const double ic_mean = ic.mean();
  const double var = (ic.array() - ic_mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  est.std_error = std::sqrt(var / static_cast<double>(n));
  est.ci_low = est.psi - kZ975 * est.std_error;
  est.ci_high = est.psi + kZ975 * est.std_error;
  est.p_value = normal_p_value(est.psi, est.std_error);
  est.influence.assign(ic.data(), ic.data() + n);
  return result;
}

}  // namespace effectbench
