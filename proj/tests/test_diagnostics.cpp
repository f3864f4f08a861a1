#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "effectbench/diagnostics.hpp"
#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"
#include "support.hpp"

using namespace effectbench;
using testsupport::brute_auc;
using testsupport::brute_cindex;

namespace {

ValidatedConfig config_for(const RawTable& t, double treated_level = 1.0) {
  AnalysisConfig cfg;
  cfg.outcome_column = "Y";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.treatment_positive_level = treated_level;
  return validate_config(t, cfg);
}

const Table1Row& row_of(const Table1& t, const std::string& label) {
  for (const auto& r : t.rows) {
    if (r.label == label) return r;
  }
  FAIL("row not found: " << label);
  return t.rows.front();
}

// Welch p and Pearson chi-square p computed offline with scipy
// (ttest_ind equal_var=False; chi2_contingency correction=False).
constexpr double kWelchP = 0.055935241978974974;
constexpr double kChiSquareP = 0.06703502017597887;

}  // namespace

TEST_CASE("auc worked example and exhaustive pair counting") {
  const std::vector<double> s{0.9, 0.4, 0.3, 0.5};
  const std::vector<double> y{1, 1, 0, 0};
  CHECK(compute_metric(MetricKind::auc, s, y) == 0.75);

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 20 + rng.below(181);
    std::vector<double> score(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      score[i] = std::round(rng.uniform() * 20.0) / 20.0;  // plenty of ties
      label[i] = rng.bernoulli(0.2 + 0.6 * score[i]) ? 1.0 : 0.0;
    }
    label[0] = 1.0;
    label[1] = 0.0;
    CHECK(std::abs(compute_metric(MetricKind::auc, score, label) - brute_auc(score, label)) < 1e-12);
  }
  try {
    compute_metric(MetricKind::auc, s, std::vector<double>{1, 1, 1, 1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "degenerate labels");
  }
}

TEST_CASE("brier and mse") {
  const std::vector<double> y{1, 0, 1, 0};
  CHECK(compute_metric(MetricKind::brier, y, y) == 0.0);
  CHECK(compute_metric(MetricKind::brier, std::vector<double>(4, 0.5), y) == 0.25);
  CHECK(compute_metric(MetricKind::mse, std::vector<double>{1, 2}, std::vector<double>{2, 4}) == 2.5);
  CHECK_THROWS_AS(compute_metric(MetricKind::brier, y, std::vector<double>{2, 0, 1, 0}), Error);
}

TEST_CASE("c_index worked example and exhaustive usable pairs") {
  const std::vector<double> risk{2, 1}, time{1, 2};
  const std::vector<bool> ev{true, true};
  CHECK(compute_metric(MetricKind::c_index, risk, time, SurvivalExtras{time, &ev}) == 1.0);

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 10 + rng.below(91);
    std::vector<double> r(n), t(n);
    std::vector<bool> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = std::round(rng.normal() * 3.0);
      t[i] = std::ceil(rng.exponential(0.3 * std::exp(0.2 * r[i])));
      e[i] = rng.bernoulli(0.7);
    }
    e[0] = true;
    const double c = compute_metric(MetricKind::c_index, r, t, SurvivalExtras{t, &e});
    CHECK(std::abs(c - brute_cindex(r, t, e)) < 1e-12);
  }
  const std::vector<bool> none{false, false};
  CHECK_THROWS_AS(compute_metric(MetricKind::c_index, risk, time, SurvivalExtras{time, &none}), Error);
}

TEST_CASE("summarize_folds statistics are recomputable") {
  const auto s = summarize_folds(MetricKind::auc, {0.61, 0.7, std::nullopt, 0.76, 0.65});
  const std::vector<double> v{0.61, 0.7, 0.76, 0.65};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 4.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  CHECK(std::abs(s.mean - mean) < 1e-12);
  CHECK(std::abs(s.sd - std::sqrt(ss / 3.0)) < 1e-12);
  CHECK(s.min == 0.61);
  CHECK(s.max == 0.76);
  CHECK(s.per_fold.size() == 5);
  CHECK_THROWS_AS(summarize_folds(MetricKind::auc, {std::nullopt, std::nullopt}), Error);
}

TEST_CASE("calibration table consistency") {
  Rng rng(6);
  const std::size_t n = 537;
  std::vector<double> p(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = rng.uniform();
    y[i] = rng.bernoulli(p[i]) ? 1.0 : 0.0;
  }
  const auto cal = calibration_table(p, y, 10);
  REQUIRE(cal.bins.size() == 10);
  std::size_t total = 0;
  double weighted = 0.0;
  for (std::size_t b = 0; b < cal.bins.size(); ++b) {
    total += cal.bins[b].count;
    weighted += cal.bins[b].observed_rate * static_cast<double>(cal.bins[b].count);
    if (b) CHECK(cal.bins[b].mean_predicted >= cal.bins[b - 1].mean_predicted);
    CHECK((cal.bins[b].count == 53 || cal.bins[b].count == 54));
  }
  CHECK(total == n);
  CHECK(std::abs(weighted / static_cast<double>(n) - std::accumulate(y.begin(), y.end(), 0.0) / n) < 1e-12);
  CHECK(std::abs(cal.brier - compute_metric(MetricKind::brier, p, y)) < 1e-15);
}

TEST_CASE("cross_validate is deterministic and reaches auc 1 on separable data") {
  Rng rng(2);
  Eigen::MatrixXd x(120, 2);
  Eigen::VectorXd y(120);
  for (int i = 0; i < 120; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = x(i, 0) > 0.1 ? 1.0 : 0.0;
  }
  CvModel model;
  model.kind = CvModel::Kind::learner;
  model.learner = learner_spec(LearnerKind::gbstumps);
  const auto a = cross_validate(x, y, model, 5, 9, MetricKind::auc);
  CHECK(a.summary.mean == 1.0);
  REQUIRE(a.calibration.has_value());
  const auto b = cross_validate(x, y, model, 5, 9, MetricKind::auc);
  CHECK(a.summary.per_fold == b.summary.per_fold);
  CHECK(a.out_of_fold == b.out_of_fold);

  CvModel ens;
  const auto c = cross_validate(x, y, ens, 5, 4, MetricKind::auc);
  const auto d = cross_validate(x, y, ens, 5, 4, MetricKind::auc);
  CHECK(c.summary.per_fold == d.summary.per_fold);
  CHECK(c.summary.per_fold.size() == 5);
}

TEST_CASE("cross_validate records single-class folds as missing") {
  Eigen::MatrixXd x(20, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(20);
  for (int i = 0; i < 20; ++i) x(i, 0) = i;
  y[3] = y[11] = 1.0;
  CvModel model;
  model.kind = CvModel::Kind::learner;
  model.learner = learner_spec(LearnerKind::mean);
  const auto r = cross_validate(x, y, model, 5, 1, MetricKind::auc);
  const auto missing = std::ranges::count_if(r.summary.per_fold, [](const auto& v) { return !v; });
  CHECK(missing >= 3);
  CHECK(r.warnings.size() == static_cast<std::size_t>(missing));
  CHECK(r.warnings[0].find("excluded") != std::string::npos);
}

TEST_CASE("cross_validate a Cox model with the c-index") {
  Rng rng(12);
  const int n = 300;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd t(n);
  std::vector<bool> e(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    t[i] = rng.exponential(0.1 * std::exp(x(i, 0)));
    e[i] = t[i] < 15.0;
    t[i] = std::min(t[i], 15.0);
  }
  CvModel model;
  model.kind = CvModel::Kind::cox;
  const auto r = cross_validate(x, t, model, 5, 3, MetricKind::c_index, &e);
  CHECK(r.summary.mean > 0.6);
  CHECK(r.summary.mean <= 1.0);
  CHECK_FALSE(r.calibration.has_value());
}

TEST_CASE("smd formulas") {
  // Display values of a binary covariate: 0.25 (0.43) treated, 0.10 (0.30) control.
  CHECK(std::abs(smd_numeric(0.25, 0.43, 0.10, 0.30) - 0.399) < 0.01);
  CHECK(std::isinf(smd_numeric(1.0, 0.0, 0.0, 0.0)));
  CHECK(smd_numeric(2.0, 0.0, 2.0, 0.0) == 0.0);
  // Two levels: Yang-Dalton reduces to the binary-proportion SMD.
  const double p1 = 0.3, p0 = 0.45;
  const double binary = std::abs(p1 - p0) / std::sqrt((p1 * (1 - p1) + p0 * (1 - p0)) / 2.0);
  CHECK(smd_categorical({1 - p1, p1}, {1 - p0, p0}) == doctest::Approx(binary).epsilon(1e-12));
  // Three levels against a direct inverse.
  const std::vector<double> a{0.2, 0.5, 0.3}, b{0.4, 0.4, 0.2};
  Eigen::Vector2d d(a[1] - b[1], a[2] - b[2]);
  Eigen::Matrix2d s;
  s << (a[1] * (1 - a[1]) + b[1] * (1 - b[1])) / 2, -(a[1] * a[2] + b[1] * b[2]) / 2,
      -(a[1] * a[2] + b[1] * b[2]) / 2, (a[2] * (1 - a[2]) + b[2] * (1 - b[2])) / 2;
  CHECK(smd_categorical(a, b) == doctest::Approx(std::sqrt(d.dot(s.inverse() * d))).epsilon(1e-12));
  // A level present in only one arm with zero spread elsewhere.
  CHECK(std::isinf(smd_categorical({0.0, 1.0}, {1.0, 0.0})));
}

TEST_CASE("table1 numeric and categorical rows with reference p-values") {
  const std::vector<double> ctrl{1.5, 2.0, 3.5, 4.0, 5.5, 2.2};
  const std::vector<double> trt{2.0, 4.1, 6.3, 8.0, 10.2, 12.5, 3.3};
  std::ostringstream csv;
  csv << "Y,A,V\n";
  for (double v : ctrl) csv << "0,0," << v << "\n";
  for (double v : trt) csv << (v > 5 ? 1 : 0) << ",1," << v << "\n";
  const auto raw = parse_csv(csv.str());
  const auto t = table1(raw, config_for(raw));
  CHECK(t.arm_labels == std::vector<std::string>{"0", "1"});
  CHECK(t.n_by_arm == std::vector<std::size_t>{6, 7});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].variable == "Y");
  CHECK(t.rows[1].variable == "A");
  const auto& v = row_of(t, "V (mean (SD))");
  CHECK(std::abs(*v.p_value - kWelchP) < 1e-10);
  CHECK(std::isinf(*row_of(t, "A (mean (SD))").smd));

  std::ostringstream cat;
  cat << "Y,A,G\n";
  const int counts[3][2] = {{12, 5}, {7, 9}, {3, 8}};
  const char* levels[3] = {"a", "b", "c"};
  for (int l = 0; l < 3; ++l)
    for (int arm = 0; arm < 2; ++arm)
      for (int k = 0; k < counts[l][arm]; ++k) cat << (k % 2) << "," << arm << "," << levels[l] << "\n";
  const auto raw2 = parse_csv(cat.str());
  const auto t2 = table1(raw2, config_for(raw2));
  const auto& g = row_of(t2, "G (%)");
  CHECK(g.categorical);
  CHECK(std::abs(*g.p_value - kChiSquareP) < 1e-10);
  const auto& b = row_of(t2, "   b");
  CHECK(b.arm_value[0] == doctest::Approx(700.0 / 22.0));
  CHECK(b.arm_value[1] == doctest::Approx(900.0 / 22.0));
  CHECK(*g.smd == doctest::Approx(smd_categorical({5 / 22.0, 9 / 22.0, 8 / 22.0}, {12 / 22.0, 7 / 22.0, 3 / 22.0})));
}

TEST_CASE("table1 symmetry, identical arms and small arms") {
  const auto s = testsupport::simulate_confounded(200, 4, true, 1.0);
  const auto raw = parse_csv(testsupport::numeric_csv({"Y", "A", "X1", "X2"}, {s.y, s.a, s.x.col(0), s.x.col(1)}));
  const auto fwd = table1(raw, config_for(raw, 1.0));
  const auto rev = table1(raw, config_for(raw, 0.0));
  REQUIRE(fwd.rows.size() == rev.rows.size());
  CHECK(fwd.arm_labels[0] == rev.arm_labels[1]);
  for (std::size_t r = 0; r < fwd.rows.size(); ++r) {
    if (fwd.rows[r].smd && std::isinf(*fwd.rows[r].smd)) {
      CHECK(std::isinf(*rev.rows[r].smd));
    } else if (fwd.rows[r].smd) {
      CHECK(*fwd.rows[r].smd == doctest::Approx(*rev.rows[r].smd).epsilon(1e-12));
    }
    const double d1 = fwd.rows[r].arm_value[1] - fwd.rows[r].arm_value[0];
    const double d2 = rev.rows[r].arm_value[1] - rev.rows[r].arm_value[0];
    CHECK(d1 == doctest::Approx(-d2).epsilon(1e-12));
  }

  const auto same = parse_csv("Y,A,V,G\n1,0,1.5,x\n0,0,2.5,y\n1,1,1.5,x\n0,1,2.5,y\n");
  auto cfg = config_for(same);
  for (const auto& row : table1(same, cfg).rows) {
    if (row.variable == "A") continue;
    if (row.smd) CHECK(*row.smd == 0.0);
  }

  const auto tiny = parse_csv("Y,A,V\n1,0,1\n0,1,2\n1,1,3\n");
  const auto t = table1(tiny, config_for(tiny));
  CHECK_FALSE(row_of(t, "V (mean (SD))").p_value.has_value());
}

TEST_CASE("table1 excludes survival date columns and every other variable appears once") {
  const auto raw = parse_csv("Y,A,s,e,V,G\n1,0,2020-01-01,2020-01-05,1,a\n0,1,2020-01-01,2020-02-01,2,b\n");
  AnalysisConfig cfg;
  cfg.outcome_column = "Y";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.analysis_kind = AnalysisKind::survival;
  cfg.survival = SurvivalSpec{"s", "e", DateFormat::iso, TimeUnit::days, 100.0};
  const auto t = table1(raw, validate_config(raw, cfg));
  std::vector<std::string> vars;
  for (const auto& r : t.rows) {
    if (r.level.empty()) vars.push_back(r.variable);
  }
  CHECK(vars == std::vector<std::string>{"Y", "A", "V", "G"});
}

TEST_CASE("table1_tsv layout") {
  const auto raw = parse_csv("Y,A,V\n1,0,1\n0,0,2\n1,1,3\n0,1,5\n");
  const auto tsv = table1_tsv(table1(raw, config_for(raw)));
  std::istringstream in(tsv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "Variable\t0\t1\tp\tSMD");
  std::getline(in, line);
  CHECK(line == "n\t2\t2\t\t");
  std::getline(in, line);
  CHECK(line.rfind("Y (mean (SD))\t0.50 (0.71)\t0.50 (0.71)\t1.000\t0.000", 0) == 0);
  std::getline(in, line);
  CHECK(line == "A (mean (SD))\t0.00 (0.00)\t1.00 (0.00)\t<0.001\tInf");
}

TEST_CASE("eda_variable continuous and categorical") {
  const auto raw = parse_csv("A,V,G\n0,1,a\n1,2,a\n0,3,b\n1,4,\n");
  const auto c = eda_variable(raw, "V", false, "A");
  CHECK(c.min == 1.0);
  CHECK(c.mean == 2.5);
  CHECK(c.median == 2.5);
  CHECK(c.max == 4.0);
  std::size_t total = 0;
  for (const auto& b : c.histogram) total += b.count;
  CHECK(total == 4);
  CHECK(c.histogram.size() == 20);
  CHECK(c.arm_density.size() == 2);
  CHECK(c.arm_density.at("1").size() == 64);

  const auto g = eda_variable(raw, "G", true, "A");
  REQUIRE(g.proportions.size() == 2);
  CHECK(g.proportions[0].first == "a");
  CHECK(g.proportions[0].second == doctest::Approx(2.0 / 3.0));
  CHECK(g.proportions[0].second + g.proportions[1].second == doctest::Approx(1.0).epsilon(1e-9));

  try {
    eda_variable(raw, "nope", false, "");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::not_found);
  }
}

TEST_CASE("eda density integrates to about one") {
  Rng rng(1);
  std::ostringstream csv;
  csv << "A,V\n";
  for (int i = 0; i < 400; ++i) csv << (i % 2) << "," << rng.normal() << "\n";
  const auto r = eda_variable(parse_csv(csv.str()), "V", false, "A");
  for (const auto& [arm, pts] : r.arm_density) {
    double area = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) area += 0.5 * (pts[k].density + pts[k - 1].density) * (pts[k].x - pts[k - 1].x);
    CHECK(area == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("overview statistics") {
  std::ostringstream csv;
  csv << "Y,A,V\n";
  for (int i = 0; i < 668; ++i) csv << (i % 3 == 0) << "," << (i < 187) << "," << i << "\n";
  const auto raw = parse_csv(csv.str());
  const auto o = overview(raw, config_for(raw));
  CHECK(o.pct_treated == doctest::Approx(28.0).epsilon(1e-12));
  CHECK(o.pct_missing == 0.0);
  CHECK(o.n_subjects == 668);
  CHECK(o.n_covariates == 1);

  AnalysisConfig cfg;
  cfg.outcome_column = "E";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.analysis_kind = AnalysisKind::survival;
  cfg.survival = SurvivalSpec{"s", "e", DateFormat::iso, TimeUnit::days, 50.0};
  // The event level must exist in the data; the only event falls after the cutoff.
  const auto with_event = parse_csv("E,A,V,s,e\n0,0,1,2020-01-01,2020-01-05\n1,1,2,2020-01-01,2020-04-01\n");
  const auto v = validate_config(with_event, cfg);
  const auto st = derive_survival(with_event, v);
  const auto so = overview(with_event, v, &st);
  CHECK(*so.pct_censored == 100.0);
  CHECK(*so.pct_event == 0.0);
  CHECK_FALSE(so.mean_time_to_event.has_value());
  REQUIRE(so.follow_up.has_value());
  CHECK(so.follow_up->censored_counts.size() == so.follow_up->edges.size() - 1);
}

TEST_CASE("correlation_matrix") {
  Rng rng(5);
  std::ostringstream csv;
  csv << "x,neg,z,c\n";
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.normal();
    csv << x << "," << -x << "," << rng.normal() << ",1\n";
  }
  const auto raw = parse_csv(csv.str());
  const auto r = correlation_matrix(raw, {"x", "neg", "z"});
  CHECK(r(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r(0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(std::abs(r(0, 2)) < 0.05);
  CHECK(r(1, 2) == r(2, 1));
  try {
    correlation_matrix(raw, {"x", "c"});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.detail() == "c");
  }
  CHECK_THROWS_AS(correlation_matrix(raw, {"x"}), Error);
}

TEST_CASE("propensity_distribution") {
  Eigen::VectorXd a(6);
  a << 1, 1, 0, 0, 0, 1;
  const auto h = propensity_distribution(Eigen::VectorXd::Constant(6, 0.5), a, 20);
  CHECK(h.edges.size() == 21);
  CHECK(std::ranges::count_if(h.treated, [](std::size_t c) { return c > 0; }) == 1);
  CHECK(std::ranges::count_if(h.control, [](std::size_t c) { return c > 0; }) == 1);

  const auto s = testsupport::simulate_confounded(1000, 3, true, 1.0);
  Eigen::VectorXd e(1000);
  for (int i = 0; i < 1000; ++i) e[i] = testsupport::expit(0.4 * s.x(i, 0) - 0.4 * s.x(i, 1));
  const auto sim = propensity_distribution(e, s.a, 20);
  CHECK(std::accumulate(sim.treated.begin(), sim.treated.end(), std::size_t{0}) == static_cast<std::size_t>(s.a.sum()));
  CHECK(std::accumulate(sim.control.begin(), sim.control.end(), std::size_t{0}) ==
        1000 - static_cast<std::size_t>(s.a.sum()));
  int shared = 0;
  for (std::size_t b = 1; b + 1 < sim.treated.size(); ++b) shared += sim.treated[b] > 0 && sim.control[b] > 0;
  CHECK(shared >= 3);
}
