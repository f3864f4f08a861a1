#include "effectbench/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"
#include "effectbench/survival.hpp"

namespace effectbench {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

double welch_p(const Moments& a, const Moments& b) {
  const double va = a.sd * a.sd / static_cast<double>(a.n);
  const double vb = b.sd * b.sd / static_cast<double>(b.n);
  const double se = std::sqrt(va + vb);
  if (!(se > 0.0)) return a.mean == b.mean ? 1.0 : 0.0;
  const double t = (a.mean - b.mean) / se;
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(a.n - 1) + vb * vb / static_cast<double>(b.n - 1));
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double chi_square_p(const std::vector<std::vector<double>>& counts) {
  // counts[level][arm]
  const std::size_t levels = counts.size();
  if (levels < 2) return 1.0;
  std::vector<double> row(levels, 0.0), col(2, 0.0);
  double total = 0.0;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t a = 0; a < 2; ++a) {
      row[l] += counts[l][a];
      col[a] += counts[l][a];
      total += counts[l][a];
    }
  }
  if (col[0] == 0.0 || col[1] == 0.0) return 1.0;
  double stat = 0.0;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t a = 0; a < 2; ++a) {
      const double expected = row[l] * col[a] / total;
      if (expected > 0.0) stat += (counts[l][a] - expected) * (counts[l][a] - expected) / expected;
    }
  }
  boost::math::chi_squared dist(static_cast<double>(levels - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_p(const std::optional<double>& p) {
  if (!p) return "";
  if (*p < 0.001) return "<0.001";
  return fmt("%.3f", *p);
}

std::string fmt_smd(const std::optional<double>& smd) {
  if (!smd) return "";
  if (std::isinf(*smd)) return "Inf";
  return fmt("%.3f", *smd);
}

double median_of(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quantile7(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Silverman's rule of thumb (R's bw.nrd0).
double silverman_bandwidth(std::vector<double> v) {
  std::ranges::sort(v);
  const double sd = moments(v).sd;
  const double iqr = quantile7(v, 0.75) - quantile7(v, 0.25);
  double lo = std::min(sd, iqr / 1.34);
  if (!(lo > 0.0)) lo = sd > 0.0 ? sd : (v.front() != 0.0 ? std::abs(v.front()) : 1.0);
  return 0.9 * lo * std::pow(static_cast<double>(v.size()), -0.2);
}

std::vector<std::string> arm_labels_of(const ValidatedConfig& cfg) {
  return {cfg.treatment_negative_label, cfg.treatment_positive_label};
}

}  // namespace

std::string_view to_string(MetricKind k) noexcept {
  switch (k) {
    case MetricKind::auc: return "auc";
    case MetricKind::mse: return "mse";
    case MetricKind::brier: return "brier";
    case MetricKind::c_index: return "c_index";
  }
  return "?";
}

double compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> truth,
                      const std::optional<SurvivalExtras>& survival) {
  const std::size_t n = predictions.size();
  if (truth.size() != n && kind != MetricKind::c_index) throw Error(ErrorKind::config, "metric inputs differ in length");
  if (n == 0) throw Error(ErrorKind::config, "metric needs at least one observation");

  switch (kind) {
    case MetricKind::mse:
    case MetricKind::brier: {
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (kind == MetricKind::brier && truth[i] != 0.0 && truth[i] != 1.0) {
          throw Error(ErrorKind::config, "brier score needs 0/1 labels");
        }
        ss += (predictions[i] - truth[i]) * (predictions[i] - truth[i]);
      }
      return ss / static_cast<double>(n);
    }
    case MetricKind::auc: {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::ranges::sort(order, [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });
      double rank_sum = 0.0, n1 = 0.0;
      std::size_t i = 0;
      while (i < n) {
        std::size_t j = i;
        while (j < n && predictions[order[j]] == predictions[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
          const double y = truth[order[k]];
          if (y != 0.0 && y != 1.0) throw Error(ErrorKind::config, "auc needs 0/1 labels");
          if (y == 1.0) {
            rank_sum += midrank;
            n1 += 1.0;
          }
        }
        i = j;
      }
      const double n0 = static_cast<double>(n) - n1;
      if (n1 == 0.0 || n0 == 0.0) throw Error(ErrorKind::config, "degenerate labels");
      return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
    }
    case MetricKind::c_index: {
      if (!survival || !survival->events || survival->times.size() != n || survival->events->size() != n) {
        throw Error(ErrorKind::config, "c_index requires survival times and events");
      }
      const auto& t = survival->times;
      const auto& e = *survival->events;
      double usable = 0.0, concordant = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!e[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const bool comparable = t[i] < t[j] || (t[i] == t[j] && !e[j]);
          if (!comparable) continue;
          usable += 1.0;
          if (predictions[i] > predictions[j]) {
            concordant += 1.0;
          } else if (predictions[i] == predictions[j]) {
            concordant += 0.5;
          }
        }
      }
      if (usable == 0.0) throw Error(ErrorKind::config, "c_index has no usable pairs");
      return concordant / usable;
    }
  }
  throw Error(ErrorKind::config, "unknown metric");
}

CvMetricSummary summarize_folds(MetricKind metric, std::vector<std::optional<double>> per_fold) {
  CvMetricSummary s;
  s.metric = metric;
  s.per_fold = std::move(per_fold);
  std::vector<double> v;
  for (const auto& f : s.per_fold) {
    if (f) v.push_back(*f);
  }
  if (v.empty()) throw Error(ErrorKind::numeric, "no fold produced a usable metric");
  const auto m = moments(v);
  s.mean = m.mean;
  s.sd = m.sd;
  s.min = *std::ranges::min_element(v);
  s.max = *std::ranges::max_element(v);
  return s;
}

CalibrationTable calibration_table(std::span<const double> predictions, std::span<const double> truth, int bins) {
  const std::size_t n = predictions.size();
  if (truth.size() != n || n == 0) throw Error(ErrorKind::config, "calibration inputs differ in length");
  if (bins < 1) throw Error(ErrorKind::config, "calibration needs at least one bin");
  CalibrationTable table;
  table.brier = compute_metric(MetricKind::brier, predictions, truth);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(bins), n);
  std::size_t start = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t size = n / k + (b < n % k ? 1 : 0);
    CalibrationBin bin;
    bin.count = size;
    for (std::size_t i = start; i < start + size; ++i) {
      bin.mean_predicted += predictions[order[i]];
      bin.observed_rate += truth[order[i]];
    }
    bin.mean_predicted /= static_cast<double>(size);
    bin.observed_rate /= static_cast<double>(size);
    table.bins.push_back(bin);
    start += size;
  }
  return table;
}

CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CvModel& model, int k,
                        std::uint64_t seed, MetricKind metric, const std::vector<bool>* events) {
  if (k < 2) throw Error(ErrorKind::config, "cross-validation needs at least 2 folds");
  if (x.rows() != y.size()) throw Error(ErrorKind::config, "design rows and response length differ");
  if (model.kind == CvModel::Kind::cox && (!events || static_cast<Eigen::Index>(events->size()) != y.size())) {
    throw Error(ErrorKind::config, "cox cross-validation needs event indicators");
  }
  const auto folds = kfold_assign(static_cast<std::size_t>(y.size()), k, seed);
  CvResult result;
  result.out_of_fold = Eigen::VectorXd::Zero(y.size());
  std::vector<std::optional<double>> per_fold;

  for (int f = 0; f < k; ++f) {
    const auto train = folds.rows_not_in(f);
    const auto test = folds.rows_in(f);
    const Eigen::MatrixXd xtr = x(train, Eigen::all);
    const Eigen::VectorXd ytr = y(train);
    const Eigen::MatrixXd xte = x(test, Eigen::all);
    const Eigen::VectorXd yte = y(test);
    Eigen::VectorXd pred;
    std::vector<bool> ev_test;
    const auto fold_seed = derive_seed(seed, static_cast<std::uint64_t>(f));
    switch (model.kind) {
      case CvModel::Kind::ensemble: {
        const int inner = std::min<int>(model.inner_folds, static_cast<int>(train.size()));
        const auto ens = fit_superlearner(xtr, ytr, model.family, model.library, inner, fold_seed);
        pred = ens.predict(xte);
        break;
      }
      case CvModel::Kind::learner:
        pred = fit_learner(model.learner, xtr, ytr, model.family, fold_seed).predict(xte);
        break;
      case CvModel::Kind::cox: {
        std::vector<double> ttr(ytr.data(), ytr.data() + ytr.size());
        std::vector<bool> etr;
        for (auto i : train) etr.push_back((*events)[static_cast<std::size_t>(i)]);
        for (auto i : test) ev_test.push_back((*events)[static_cast<std::size_t>(i)]);
        const auto cox = fit_cox(xtr, ttr, etr);
        pred = xte * cox.beta;
        break;
      }
    }
    result.out_of_fold(test) = pred;

    std::vector<double> p(pred.data(), pred.data() + pred.size());
    std::vector<double> t(yte.data(), yte.data() + yte.size());
    try {
      std::optional<SurvivalExtras> extras;
      if (metric == MetricKind::c_index) extras = SurvivalExtras{t, &ev_test};
      per_fold.emplace_back(compute_metric(metric, p, t, extras));
    } catch (const Error& e) {
      per_fold.emplace_back(std::nullopt);
      result.warnings.push_back("fold " + std::to_string(f) + " excluded: " + e.what());
    }
  }
  result.summary = summarize_folds(metric, std::move(per_fold));
  if (metric == MetricKind::auc || metric == MetricKind::brier) {
    std::vector<double> p(result.out_of_fold.data(), result.out_of_fold.data() + result.out_of_fold.size());
    std::vector<double> t(y.data(), y.data() + y.size());
    result.calibration = calibration_table(p, t, 10);
  }
  return result;
}

double smd_numeric(double mean1, double sd1, double mean0, double sd0) noexcept {
  const double denom = std::sqrt((sd1 * sd1 + sd0 * sd0) / 2.0);
  const double diff = std::abs(mean1 - mean0);
  if (!(denom > 0.0)) return diff == 0.0 ? 0.0 : kInf;
  return diff / denom;
}

double smd_categorical(const std::vector<double>& p1, const std::vector<double>& p0) {
  if (p1.size() != p0.size() || p1.size() < 2) throw Error(ErrorKind::config, "smd needs at least two levels");
  const auto k = static_cast<Eigen::Index>(p1.size() - 1);
  Eigen::VectorXd d(k);
  Eigen::MatrixXd s(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    const auto ia = static_cast<std::size_t>(a + 1);
    d[a] = p1[ia] - p0[ia];
    for (Eigen::Index b = 0; b < k; ++b) {
      const auto ib = static_cast<std::size_t>(b + 1);
      s(a, b) = a == b ? (p1[ia] * (1.0 - p1[ia]) + p0[ia] * (1.0 - p0[ia])) / 2.0
                       : -(p1[ia] * p1[ib] + p0[ia] * p0[ib]) / 2.0;
    }
  }
  if (d.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(s);
  cod.setThreshold(1e-12);
  const Eigen::VectorXd solved = cod.solve(d);
  // A difference outside the range of S has no finite standardization.
  if ((s * solved - d).norm() > 1e-9 * std::max(1.0, d.norm())) return kInf;
  return std::sqrt(std::max(0.0, d.dot(solved)));
}

Table1 table1(const RawTable& summary_view, const ValidatedConfig& cfg) {
  Table1 t;
  t.arm_labels = arm_labels_of(cfg);
  const auto& a_col = summary_view.columns[cfg.treatment_index];
  std::vector<int> arm(summary_view.n_rows, -1);
  t.n_by_arm = {0, 0};
  for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
    if (is_missing(a_col[r])) continue;
    arm[r] = cell_label(a_col[r]) == cfg.treatment_positive_label ? 1 : 0;
    ++t.n_by_arm[static_cast<std::size_t>(arm[r])];
  }

  std::vector<std::size_t> order{cfg.outcome_index, cfg.treatment_index};
  for (std::size_t j = 0; j < summary_view.n_cols(); ++j) {
    if (j == cfg.outcome_index || j == cfg.treatment_index || cfg.start_index == j || cfg.end_index == j) continue;
    order.push_back(j);
  }

  for (auto j : order) {
    const auto& name = summary_view.column_names[j];
    const auto& col = summary_view.columns[j];
    const bool categorical = cfg.config.categorical_columns.contains(name) || !summary_view.is_numeric(j);
    if (!categorical) {
      std::vector<double> v1, v0;
      for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
        if (arm[r] < 0 || is_missing(col[r])) continue;
        (arm[r] == 1 ? v1 : v0).push_back(std::get<double>(col[r]));
      }
      const auto m1 = moments(v1);
      const auto m0 = moments(v0);
      Table1Row row;
      row.label = name + " (mean (SD))";
      row.variable = name;
      row.arm_value = {m0.mean, m1.mean};
      row.arm_sd = {m0.sd, m1.sd};
      if (m1.n >= 2 && m0.n >= 2) row.p_value = welch_p(m1, m0);
      if (m1.n >= 1 && m0.n >= 1) row.smd = smd_numeric(m1.mean, m1.sd, m0.mean, m0.sd);
      t.rows.push_back(std::move(row));
      continue;
    }
    std::set<std::string> level_set;
    for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
      if (!is_missing(col[r])) level_set.insert(cell_label(col[r]));
    }
    const std::vector<std::string> levels(level_set.begin(), level_set.end());
    std::vector<std::vector<double>> counts(levels.size(), std::vector<double>(2, 0.0));
    std::vector<double> arm_total(2, 0.0);
    for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
      if (arm[r] < 0 || is_missing(col[r])) continue;
      const auto l = static_cast<std::size_t>(std::ranges::lower_bound(levels, cell_label(col[r])) - levels.begin());
      counts[l][static_cast<std::size_t>(arm[r])] += 1.0;
      arm_total[static_cast<std::size_t>(arm[r])] += 1.0;
    }
    Table1Row header;
    header.label = name + " (%)";
    header.variable = name;
    header.categorical = true;
    header.p_value = chi_square_p(counts);
    if (levels.size() >= 2 && arm_total[0] > 0 && arm_total[1] > 0) {
      std::vector<double> p1, p0;
      for (const auto& c : counts) {
        p1.push_back(c[1] / arm_total[1]);
        p0.push_back(c[0] / arm_total[0]);
      }
      header.smd = smd_categorical(p1, p0);
    } else {
      header.smd = 0.0;
    }
    t.rows.push_back(std::move(header));
    for (std::size_t l = 0; l < levels.size(); ++l) {
      Table1Row row;
      row.label = "   " + levels[l];
      row.variable = name;
      row.categorical = true;
      row.level = levels[l];
      row.arm_value = {arm_total[0] > 0 ? 100.0 * counts[l][0] / arm_total[0] : 0.0,
                       arm_total[1] > 0 ? 100.0 * counts[l][1] / arm_total[1] : 0.0};
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::string table1_tsv(const Table1& t) {
  std::ostringstream out;
  out << "Variable\t" << t.arm_labels[0] << '\t' << t.arm_labels[1] << "\tp\tSMD\n";
  out << "n\t" << t.n_by_arm[0] << '\t' << t.n_by_arm[1] << "\t\t\n";
  for (const auto& row : t.rows) {
    out << row.label;
    if (row.arm_value.empty()) {
      out << "\t\t";
    } else if (!row.arm_sd.empty()) {
      for (std::size_t a = 0; a < 2; ++a) out << '\t' << fmt("%.2f", row.arm_value[a]) << " (" << fmt("%.2f", row.arm_sd[a]) << ')';
    } else {
      for (std::size_t a = 0; a < 2; ++a) out << '\t' << fmt("%.1f", row.arm_value[a]);
    }
    out << '\t' << fmt_p(row.p_value) << '\t' << fmt_smd(row.smd) << '\n';
  }
  return out.str();
}

EdaReport eda_variable(const RawTable& summary_view, const std::string& variable, bool categorical,
                       const std::string& treatment_column, int bins) {
  const auto idx = summary_view.find(variable);
  if (!idx) throw Error(ErrorKind::not_found, "unknown variable", variable);
  std::optional<std::size_t> a_idx;
  if (!treatment_column.empty()) {
    a_idx = summary_view.find(treatment_column);
    if (!a_idx) throw Error(ErrorKind::not_found, "unknown variable", treatment_column);
  }
  const auto& col = summary_view.columns[*idx];
  EdaReport rep;
  rep.variable = variable;
  rep.categorical = categorical;

  auto arm_of = [&](std::size_t r) -> std::optional<std::string> {
    if (!a_idx || is_missing(summary_view.columns[*a_idx][r])) return std::nullopt;
    return cell_label(summary_view.columns[*a_idx][r]);
  };

  if (categorical) {
    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::map<std::string, std::size_t>> by_arm;
    std::size_t total = 0;
    for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
      if (is_missing(col[r])) continue;
      const auto level = cell_label(col[r]);
      ++counts[level];
      ++total;
      if (auto a = arm_of(r)) ++by_arm[*a][level];
    }
    rep.n_nonmissing = total;
    for (const auto& [level, c] : counts) {
      rep.proportions.emplace_back(level, static_cast<double>(c) / static_cast<double>(total));
      for (auto& [a, m] : by_arm) m.try_emplace(level, 0);
    }
    for (const auto& [a, m] : by_arm) rep.arm_counts[a].assign(m.begin(), m.end());
    return rep;
  }

  if (!summary_view.is_numeric(*idx)) {
    throw Error(ErrorKind::config, "variable is not numeric; request it as categorical", variable);
  }
  std::vector<double> values;
  std::map<std::string, std::vector<double>> arm_values;
  for (std::size_t r = 0; r < summary_view.n_rows; ++r) {
    if (is_missing(col[r])) continue;
    const double v = std::get<double>(col[r]);
    values.push_back(v);
    if (auto a = arm_of(r)) arm_values[*a].push_back(v);
  }
  if (values.empty()) throw Error(ErrorKind::config, "variable has no non-missing values", variable);
  rep.n_nonmissing = values.size();
  rep.min = *std::ranges::min_element(values);
  rep.max = *std::ranges::max_element(values);
  rep.mean = moments(values).mean;
  rep.median = median_of(values);

  double lo = rep.min, hi = rep.max;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) rep.histogram.push_back({lo + b * width, lo + (b + 1) * width, 0});
  for (double v : values) {
    auto b = static_cast<int>(std::floor((v - lo) / width));
    ++rep.histogram[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))].count;
  }

  const double h_all = silverman_bandwidth(values);
  const double grid_lo = rep.min - 3.0 * h_all;
  const double grid_hi = rep.max + 3.0 * h_all;
  constexpr int kPoints = 64;
  for (const auto& [a, v] : arm_values) {
    const double h = v.size() >= 2 ? silverman_bandwidth(v) : h_all;
    auto& pts = rep.arm_density[a];
    for (int k = 0; k < kPoints; ++k) {
      const double x = grid_lo + (grid_hi - grid_lo) * k / (kPoints - 1);
      double d = 0.0;
      for (double xi : v) {
        const double z = (x - xi) / h;
        d += std::exp(-0.5 * z * z);
      }
      pts.push_back({x, d / (static_cast<double>(v.size()) * h * std::sqrt(2.0 * M_PI))});
    }
  }
  return rep;
}

OverviewStats overview(const RawTable& summary_view, const ValidatedConfig& cfg, const SurvivalTimes* survival) {
  OverviewStats s;
  s.n_subjects = summary_view.n_rows;
  s.n_covariates = cfg.covariate_candidates(summary_view).size();
  s.pct_missing = missingness_report(summary_view).overall_pct;

  double treated = 0.0, observed = 0.0;
  for (const auto& c : summary_view.columns[cfg.treatment_index]) {
    if (is_missing(c)) continue;
    observed += 1.0;
    if (cell_label(c) == cfg.treatment_positive_label) treated += 1.0;
  }
  s.pct_treated = observed > 0 ? round_pct(100.0 * treated / observed) : 0.0;

  const auto& y_col = summary_view.columns[cfg.outcome_index];
  switch (cfg.config.analysis_kind) {
    case AnalysisKind::binary: {
      double pos = 0.0, obs = 0.0;
      for (const auto& c : y_col) {
        if (is_missing(c)) continue;
        obs += 1.0;
        if (cell_label(c) == *cfg.outcome_positive_label) pos += 1.0;
      }
      s.pct_outcome = obs > 0 ? round_pct(100.0 * pos / obs) : 0.0;
      break;
    }
    case AnalysisKind::continuous: {
      double sum = 0.0, obs = 0.0;
      for (const auto& c : y_col) {
        if (is_missing(c)) continue;
        sum += std::get<double>(c);
        obs += 1.0;
      }
      if (obs > 0) s.mean_outcome = sum / obs;
      break;
    }
    case AnalysisKind::survival:
      if (survival && !survival->time.empty()) {
        const double n = static_cast<double>(survival->time.size());
        double events = 0.0, time_sum = 0.0;
        for (std::size_t i = 0; i < survival->time.size(); ++i) {
          if (survival->event[i]) {
            events += 1.0;
            time_sum += survival->time[i];
          }
        }
        s.pct_event = round_pct(100.0 * events / n);
        s.pct_censored = round_pct(100.0 * (n - events) / n);
        if (events > 0) s.mean_time_to_event = time_sum / events;

        FollowUpHistogram hist;
        constexpr int kBins = 20;
        const double top = cfg.config.survival ? cfg.config.survival->cutoff
                                                : *std::ranges::max_element(survival->time);
        for (int b = 0; b <= kBins; ++b) hist.edges.push_back(top * b / kBins);
        hist.event_counts.assign(kBins, 0);
        hist.censored_counts.assign(kBins, 0);
        for (std::size_t i = 0; i < survival->time.size(); ++i) {
          auto b = top > 0 ? static_cast<int>(std::floor(survival->time[i] / top * kBins)) : 0;
          b = std::clamp(b, 0, kBins - 1);
          ++(survival->event[i] ? hist.event_counts : hist.censored_counts)[static_cast<std::size_t>(b)];
        }
        s.follow_up = std::move(hist);
      }
      break;
  }
  return s;
}

Eigen::MatrixXd correlation_matrix(const RawTable& summary_view, const std::vector<std::string>& variables) {
  if (variables.size() < 2) throw Error(ErrorKind::config, "correlation needs at least two variables");
  std::vector<std::size_t> idx;
  for (const auto& v : variables) {
    const auto i = summary_view.find(v);
    if (!i) throw Error(ErrorKind::not_found, "unknown variable", v);
    if (!summary_view.is_numeric(*i)) throw Error(ErrorKind::config, "correlation needs numeric variables", v);
    std::vector<double> vals;
    for (const auto& c : summary_view.columns[*i]) {
      if (!is_missing(c)) vals.push_back(std::get<double>(c));
    }
    if (vals.size() < 2 || moments(vals).sd == 0.0) throw Error(ErrorKind::config, "constant column", v);
    idx.push_back(*i);
  }
  const auto k = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      const auto& ca = summary_view.columns[idx[static_cast<std::size_t>(a)]];
      const auto& cb = summary_view.columns[idx[static_cast<std::size_t>(b)]];
      std::vector<double> xa, xb;
      for (std::size_t row = 0; row < summary_view.n_rows; ++row) {
        if (is_missing(ca[row]) || is_missing(cb[row])) continue;
        xa.push_back(std::get<double>(ca[row]));
        xb.push_back(std::get<double>(cb[row]));
      }
      const auto ma = moments(xa);
      const auto mb = moments(xb);
      double cov = 0.0;
      for (std::size_t i = 0; i < xa.size(); ++i) cov += (xa[i] - ma.mean) * (xb[i] - mb.mean);
      const double denom = std::sqrt(std::max(0.0, static_cast<double>(xa.size()) - 1.0)) * ma.sd *
                           std::sqrt(std::max(0.0, static_cast<double>(xb.size()) - 1.0)) * mb.sd;
      const double value = denom > 0.0 ? cov / denom : std::numeric_limits<double>::quiet_NaN();
      r(a, b) = r(b, a) = value;
    }
  }
  return r;
}

PropensityHistogram propensity_distribution(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment,
                                            int bins) {
  if (bins < 1) throw Error(ErrorKind::config, "histogram needs at least one bin");
  if (scores.size() != treatment.size()) throw Error(ErrorKind::config, "scores and treatment lengths differ");
  PropensityHistogram h;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(static_cast<double>(b) / bins);
  h.treated.assign(static_cast<std::size_t>(bins), 0);
  h.control.assign(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(scores[i] * bins)), 0, bins - 1));
    ++(treatment[i] == 1.0 ? h.treated : h.control)[b];
  }
  return h;
}

}  // namespace effectbench
