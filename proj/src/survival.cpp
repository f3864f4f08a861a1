#include "effectbench/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "effectbench/effects.hpp"
#include "effectbench/error.hpp"

namespace effectbench {

namespace {

constexpr int kCoxMaxIter = 25;
constexpr double kCoxTol = 1e-8;

std::vector<double> unit_or(std::span<const double> w, std::size_t n) {
  if (w.empty()) return std::vector<double>(n, 1.0);
  if (w.size() != n) throw Error(ErrorKind::config, "case weight length differs from observations");
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::config, "case weights must be nonnegative");
  }
  return {w.begin(), w.end()};
}

std::size_t step_index(const std::vector<double>& times, double t) {
  // Number of event times <= t.
  return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

struct CoxState {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;
};

// Breslow ties. Rows are visited in decreasing time so the risk-set sums
// accumulate; the linear predictor is shifted by its maximum, which leaves
// the partial likelihood unchanged.
CoxState cox_state(const Eigen::MatrixXd& x, std::span<const double> times, const std::vector<bool>& events,
                   const std::vector<double>& w, const std::vector<std::size_t>& order, const Eigen::VectorXd& beta,
                   bool derivatives) {
  const Eigen::Index p = x.cols();
  const std::size_t n = order.size();
  Eigen::VectorXd eta = x * beta;
  const double shift = n ? eta.maxCoeff() : 0.0;
  eta.array() -= shift;

  CoxState st;
  st.grad = Eigen::VectorXd::Zero(p);
  st.info = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);

  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    std::size_t j = i;
    double dw = 0.0;
    Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
    double eta_sum = 0.0;
    while (j < n && times[order[j]] == t) {
      const auto k = static_cast<Eigen::Index>(order[j]);
      const double r = w[order[j]] * std::exp(eta[k]);
      s0 += r;
      if (derivatives) {
        s1.noalias() += r * x.row(k).transpose();
        s2.noalias() += r * x.row(k).transpose() * x.row(k);
      }
      if (events[order[j]]) {
        dw += w[order[j]];
        eta_sum += w[order[j]] * eta[k];
        if (derivatives) xsum.noalias() += w[order[j]] * x.row(k).transpose();
      }
      ++j;
    }
    if (dw > 0.0) {
      st.loglik += eta_sum - dw * std::log(s0);
      if (derivatives) {
        const Eigen::VectorXd mean = s1 / s0;
        st.grad.noalias() += xsum - dw * mean;
        st.info.noalias() += dw * (s2 / s0 - mean * mean.transpose());
      }
    }
    i = j;
  }
  return st;
}

std::vector<std::size_t> descending_time_order(std::span<const double> times) {
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  return order;
}

}  // namespace

double SurvivalCurve::survival_at(double t) const noexcept {
  const auto k = step_index(times, t);
  return k == 0 ? 1.0 : survival[k - 1];
}

double SurvivalCurve::variance_at(double t) const noexcept {
  const auto k = step_index(times, t);
  return k == 0 ? 0.0 : variance[k - 1];
}

SurvivalCurve kaplan_meier(std::span<const double> times, const std::vector<bool>& events,
                           std::span<const double> case_weights) {
  const std::size_t n = times.size();
  if (events.size() != n) throw Error(ErrorKind::config, "times and events differ in length");
  for (double t : times) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorKind::config, "survival times must be nonnegative");
  }
  const auto w = unit_or(case_weights, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  double remaining = std::accumulate(w.begin(), w.end(), 0.0);
  SurvivalCurve curve;
  double s = 1.0;
  double greenwood = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    double d = 0.0, leaving = 0.0;
    std::size_t j = i;
    while (j < n && times[order[j]] == t) {
      leaving += w[order[j]];
      if (events[order[j]]) d += w[order[j]];
      ++j;
    }
    if (d > 0.0 && remaining > 0.0) {
      s *= 1.0 - d / remaining;
      if (remaining > d) greenwood += d / (remaining * (remaining - d));
      curve.times.push_back(t);
      curve.survival.push_back(s);
      curve.variance.push_back(s > 0.0 ? s * s * greenwood : 0.0);
      curve.at_risk.push_back(remaining);
      curve.events.push_back(d);
    }
    remaining -= leaving;
    i = j;
  }
  return curve;
}

double cox_partial_loglik(const Eigen::MatrixXd& x, std::span<const double> times, const std::vector<bool>& events,
                          std::span<const double> case_weights, const Eigen::VectorXd& beta) {
  const auto w = unit_or(case_weights, times.size());
  return cox_state(x, times, events, w, descending_time_order(times), beta, false).loglik;
}

CoxFit fit_cox(const Eigen::MatrixXd& x, std::span<const double> times, const std::vector<bool>& events,
               std::span<const double> case_weights) {
  const std::size_t n = times.size();
  if (static_cast<std::size_t>(x.rows()) != n || events.size() != n) {
    throw Error(ErrorKind::config, "cox inputs differ in length");
  }
  const auto w = unit_or(case_weights, n);
  double event_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i]) event_weight += w[i];
  }
  if (!(event_weight > 0.0)) throw Error(ErrorKind::numeric, "cox model needs at least one event");
  const double total_weight = std::accumulate(w.begin(), w.end(), 0.0);
  const double tol = kCoxTol * total_weight / static_cast<double>(n);

  // Centering changes nothing but conditioning.
  const Eigen::RowVectorXd center = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - center;
  const auto order = descending_time_order(times);
  const Eigen::Index p = x.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  CoxState st = cox_state(xc, times, events, w, order, beta, true);
  CoxFit fit;
  bool converged = false;
  bool singular = false;
  for (int iter = 0; iter < kCoxMaxIter; ++iter) {
    fit.iterations = iter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(st.info);
    const auto& d = ldlt.vectorD();
    if (p > 0 && (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-13 * std::max(1e-300, d.maxCoeff()))) {
      singular = true;
      break;
    }
    const Eigen::VectorXd step = p > 0 ? Eigen::VectorXd(ldlt.solve(st.grad)) : Eigen::VectorXd();
    const double grad_max = p > 0 ? st.grad.cwiseAbs().maxCoeff() : 0.0;
    const double step_max = p > 0 ? step.cwiseAbs().maxCoeff() : 0.0;
    if (grad_max < tol && step_max < 1e-6) {
      beta += step;
      st = cox_state(xc, times, events, w, order, beta, true);
      converged = true;
      break;
    }
    double t = 1.0;
    Eigen::VectorXd trial = beta + step;
    CoxState trial_state = cox_state(xc, times, events, w, order, trial, true);
    // Near the optimum the log-likelihood changes by less than its rounding
    // error, so only a real decrease triggers halving.
    const double slack = 1e-12 * (1.0 + std::abs(st.loglik));
    for (int half = 0; half < 30 && trial_state.loglik < st.loglik - slack; ++half) {
      t *= 0.5;
      trial = beta + t * step;
      trial_state = cox_state(xc, times, events, w, order, trial, true);
    }
    beta = std::move(trial);
    st = std::move(trial_state);
  }
  if (!converged) {
    Eigen::VectorXd sd = (xc.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
    const double scaled = p > 0 ? beta.cwiseProduct(sd).cwiseAbs().maxCoeff() : 0.0;
    if (singular || scaled > 10.0) {
      throw Error(ErrorKind::numeric, "monotone likelihood",
                  "a covariate appears to perfectly order the event times");
    }
    throw Error(ErrorKind::numeric, "cox model did not converge", "25 Newton-Raphson iterations");
  }

  fit.beta = beta;
  fit.hazard_ratios = beta.array().exp();
  fit.loglik = st.loglik;
  const Eigen::MatrixXd cov = st.info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) fit.p_values[j] = normal_p_value(beta[j], fit.se[j]);
  fit.variance_note = "model-based standard errors from the inverse information; case weights treated as fixed";
  return fit;
}

AteCurveResult ate_curve(std::span<const double> times, const std::vector<bool>& events,
                         const Eigen::VectorXd& treatment, const Eigen::VectorXd& scores, Estimand estimand) {
  const auto n = static_cast<Eigen::Index>(times.size());
  if (treatment.size() != n || scores.size() != n || static_cast<Eigen::Index>(events.size()) != n) {
    throw Error(ErrorKind::config, "ate_curve inputs differ in length");
  }
  const auto weights = compute_weights(scores, treatment, estimand);
  std::vector<double> t1, t0, w1, w0;
  std::vector<bool> e1, e0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (treatment[i] == 1.0) {
      t1.push_back(times[k]);
      e1.push_back(events[k]);
      w1.push_back(weights.w[i]);
    } else {
      t0.push_back(times[k]);
      e0.push_back(events[k]);
      w0.push_back(weights.w[i]);
    }
  }
  if (t1.empty() || t0.empty()) throw Error(ErrorKind::config, "both treatment arms must be nonempty");

  AteCurveResult out;
  out.treated = kaplan_meier(t1, e1, w1);
  out.control = kaplan_meier(t0, e0, w0);
  std::vector<double> grid = out.treated.times;
  grid.insert(grid.end(), out.control.times.begin(), out.control.times.end());
  std::ranges::sort(grid);
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  auto& c = out.curve;
  c.time_grid = grid;
  for (double t : grid) {
    const double ate = out.treated.survival_at(t) - out.control.survival_at(t);
    const double half = kZ975 * std::sqrt(out.treated.variance_at(t) + out.control.variance_at(t));
    c.ate.push_back(ate);
    c.ci_low.push_back(std::max(-1.0, ate - half));
    c.ci_high.push_back(std::min(1.0, ate + half));
  }
  return out;
}

}  // namespace effectbench
