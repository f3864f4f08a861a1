#pragma once

// Model-quality metrics, cross-validated summaries, and descriptive
// statistics for the summary page.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "effectbench/learners.hpp"
#include "effectbench/table.hpp"

namespace effectbench {

enum class MetricKind { auc, mse, brier, c_index };

std::string_view to_string(MetricKind k) noexcept;

struct SurvivalExtras {
  std::span<const double> times;
  const std::vector<bool>* events = nullptr;
};

/// auc: Mann-Whitney with half credit for ties. mse / brier: mean squared
/// error. c_index: Harrell's C with `predictions` as risk scores (higher
/// risk should fail sooner); ties in risk count one half.
double compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> truth,
                      const std::optional<SurvivalExtras>& survival = std::nullopt);

struct CvMetricSummary {
  MetricKind metric = MetricKind::auc;
  std::vector<std::optional<double>> per_fold;  // nullopt: fold excluded
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Summary statistics over the non-missing folds (sample SD).
CvMetricSummary summarize_folds(MetricKind metric, std::vector<std::optional<double>> per_fold);

struct CalibrationBin {
  double mean_predicted = 0.0;
  double observed_rate = 0.0;
  std::size_t count = 0;
};

struct CalibrationTable {
  std::vector<CalibrationBin> bins;
  double brier = 0.0;
};

/// Equal-frequency bins over predictions sorted ascending.
CalibrationTable calibration_table(std::span<const double> predictions, std::span<const double> truth, int bins = 10);

/// What to cross-validate: a stacked ensemble, a single learner, or a Cox
/// model whose linear predictor is the risk score.
struct CvModel {
  enum class Kind { ensemble, learner, cox } kind = Kind::ensemble;
  Family family = Family::binomial;
  std::vector<LearnerSpec> library = default_library();
  LearnerSpec learner;
  int inner_folds = 5;
};

struct CvResult {
  CvMetricSummary summary;
  std::optional<CalibrationTable> calibration;  // probability models only
  Eigen::VectorXd out_of_fold;
  std::vector<std::string> warnings;
};

/// `y` holds times for the Cox model, with `events` alongside.
CvResult cross_validate(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CvModel& model, int k,
                        std::uint64_t seed, MetricKind metric, const std::vector<bool>* events = nullptr);

struct Table1Row {
  std::string label;
  std::string variable;
  bool categorical = false;
  std::string level;             // categorical level rows only
  std::vector<double> arm_value;  // [control, treated]: mean or level %
  std::vector<double> arm_sd;     // numeric rows only
  std::optional<double> p_value;
  std::optional<double> smd;      // +inf allowed
};

struct Table1 {
  std::vector<std::string> arm_labels;  // [control, treated]
  std::vector<std::size_t> n_by_arm;    // [control, treated]
  std::vector<Table1Row> rows;          // categorical variables: header row then one row per level
};

/// Standardized mean difference of two numeric samples' summaries.
double smd_numeric(double mean1, double sd1, double mean0, double sd0) noexcept;

/// Multivariate SMD for a categorical variable from per-arm level
/// proportions (first level is the reference).
double smd_categorical(const std::vector<double>& p1, const std::vector<double>& p0);

Table1 table1(const RawTable& summary_view, const ValidatedConfig& cfg);

/// Tab-separated text, header first. Values at display precision.
std::string table1_tsv(const Table1& t);

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
};

struct DensityPoint {
  double x = 0.0;
  double density = 0.0;
};

struct EdaReport {
  std::string variable;
  bool categorical = false;
  // continuous
  double min = 0.0, mean = 0.0, median = 0.0, max = 0.0;
  std::size_t n_nonmissing = 0;
  std::vector<HistogramBin> histogram;
  std::map<std::string, std::vector<DensityPoint>> arm_density;  // keyed by arm label
  // categorical
  std::vector<std::pair<std::string, double>> proportions;
  std::map<std::string, std::vector<std::pair<std::string, std::size_t>>> arm_counts;
};

/// `treatment_column` may be empty (no per-arm output).
EdaReport eda_variable(const RawTable& summary_view, const std::string& variable, bool categorical,
                       const std::string& treatment_column, int bins = 20);

struct FollowUpHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> event_counts;
  std::vector<std::size_t> censored_counts;
};

struct OverviewStats {
  std::size_t n_subjects = 0;
  std::size_t n_covariates = 0;
  double pct_treated = 0.0;
  std::optional<double> pct_outcome;   // binary
  std::optional<double> mean_outcome;  // continuous
  double pct_missing = 0.0;
  // survival
  std::optional<double> pct_event;
  std::optional<double> pct_censored;
  std::optional<double> mean_time_to_event;  // nullopt when nobody had the event
  std::optional<FollowUpHistogram> follow_up;
};

OverviewStats overview(const RawTable& summary_view, const ValidatedConfig& cfg,
                       const SurvivalTimes* survival = nullptr);

/// Pairwise complete-case Pearson correlations.
Eigen::MatrixXd correlation_matrix(const RawTable& summary_view, const std::vector<std::string>& variables);

struct PropensityHistogram {
  std::vector<double> edges;  // bins + 1 edges over [0, 1]
  std::vector<std::size_t> treated;
  std::vector<std::size_t> control;
};

PropensityHistogram propensity_distribution(const Eigen::VectorXd& scores, const Eigen::VectorXd& treatment,
                                            int bins = 20);

}  // namespace effectbench
