#pragma once

// Tabular ingestion: CSV parsing, analysis configuration, per-model views,
// design-matrix encoding and survival-time derivation.

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace effectbench {

/// One CSV cell: missing, numeric, or text.
using Cell = std::variant<std::monostate, double, std::string>;

inline bool is_missing(const Cell& c) noexcept { return std::holds_alternative<std::monostate>(c); }

/// Canonical text form of a non-missing cell. Numbers use the shortest
/// round-trip representation, so 1.0 and "1" both render as "1".
std::string cell_label(const Cell& c);

struct RawTable {
  std::vector<std::string> column_names;
  std::vector<std::vector<Cell>> columns;
  std::size_t n_rows = 0;

  std::size_t n_cols() const noexcept { return column_names.size(); }
  std::optional<std::size_t> find(std::string_view name) const noexcept;
  /// Throws a config error naming the column when absent.
  std::size_t index_of(std::string_view name) const;
  /// True iff every non-missing cell of the column is numeric.
  bool is_numeric(std::size_t col) const noexcept;

  RawTable select_columns(std::span<const std::string> names) const;
  RawTable select_rows(std::span<const std::size_t> rows) const;
};

/// RFC 4180 CSV with a mandatory header row. Quoted fields may contain
/// commas, doubled quotes and line breaks. A column is numeric iff every
/// non-empty cell parses as a finite decimal number; otherwise every
/// non-empty cell is kept as text. Empty cells are missing.
RawTable parse_csv(std::string_view bytes);

enum class Estimand { ate, att, atc };
enum class AnalysisKind { binary, continuous, survival };
enum class TimeUnit { days, months, years };
enum class DateFormat { iso, day_month_year, month_day_year };

std::string_view to_string(Estimand e) noexcept;
std::string_view to_string(AnalysisKind k) noexcept;
std::string_view to_string(TimeUnit u) noexcept;
std::string_view to_string(DateFormat f) noexcept;
Estimand parse_estimand(std::string_view s);
AnalysisKind parse_analysis_kind(std::string_view s);
TimeUnit parse_time_unit(std::string_view s);
DateFormat parse_date_format(std::string_view s);

/// A level value as written in the configuration: either a number or text.
using LevelValue = std::variant<double, std::string>;

struct SurvivalSpec {
  std::string start_column;
  std::string end_column;
  DateFormat date_format = DateFormat::iso;
  TimeUnit time_unit = TimeUnit::days;
  double cutoff = 0.0;
};

struct AnalysisConfig {
  std::string outcome_column;
  std::optional<LevelValue> outcome_positive_level;
  std::string treatment_column;
  LevelValue treatment_positive_level = 1.0;
  std::set<std::string> categorical_columns;
  std::set<std::string> excluded_from_outcome_model;
  std::set<std::string> excluded_from_treatment_model;
  Estimand estimand = Estimand::ate;
  AnalysisKind analysis_kind = AnalysisKind::binary;
  std::optional<SurvivalSpec> survival;
};

/// An AnalysisConfig checked against a table, with resolved indices and
/// the confirmed level labels of the two-valued columns.
struct ValidatedConfig {
  AnalysisConfig config;
  std::size_t outcome_index = 0;
  std::size_t treatment_index = 0;
  std::optional<std::size_t> start_index;
  std::optional<std::size_t> end_index;
  std::string treatment_positive_label;
  std::string treatment_negative_label;
  /// Set for binary and survival analyses (survival: the event level).
  std::optional<std::string> outcome_positive_label;

  /// Columns that may serve as covariates: everything except outcome,
  /// treatment, and the survival date columns, in table order.
  std::vector<std::string> covariate_candidates(const RawTable& table) const;
};

ValidatedConfig validate_config(const RawTable& table, const AnalysisConfig& cfg);

struct ModelViews {
  RawTable summary_view;
  RawTable treatment_view;
  RawTable outcome_view;
  std::vector<std::string> treatment_covariates;
  std::vector<std::string> outcome_covariates;
};

ModelViews build_views(const RawTable& table, const ValidatedConfig& cfg);

struct ColumnMeta {
  std::string source;
  /// Categorical level for indicator columns, "numeric" for pass-through.
  std::string level;
};

struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<ColumnMeta> column_meta;
  /// Row ids of the encoded view that survived the complete-case filter.
  std::vector<std::size_t> row_index;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }
};

/// Complete-case filter followed by encoding. Numeric columns pass through;
/// categorical columns (declared, or any text column) expand to L-1
/// indicators with the lexicographically smallest level as reference.
DesignMatrix encode_design(const RawTable& view, const std::set<std::string>& categorical);

/// Rows of `table` with no missing cell among `columns`.
std::vector<std::size_t> complete_rows(const RawTable& table, std::span<const std::string> columns);

/// Everything the estimators need, aligned on a common analysis sample:
/// rows complete in both model views.
struct ModelFrame {
  DesignMatrix treatment_design;
  DesignMatrix outcome_design;
  Eigen::VectorXd treatment;  // 1 = positive level
  Eigen::VectorXd outcome;    // 0/1 for binary and survival events, raw for continuous
  std::vector<std::size_t> rows;  // original table row ids
  std::size_t n_dropped = 0;
};

ModelFrame build_model_frame(const RawTable& table, const ValidatedConfig& cfg, const ModelViews& views);

struct SurvivalTimes {
  std::vector<double> time;
  std::vector<bool> event;
  double censored_fraction = 0.0;
};

/// Day count between two dates under the configured format, converted to
/// the configured unit (months = days / 30.4375, years = days / 365.25),
/// then censored at the cutoff.
SurvivalTimes derive_survival(const RawTable& table, const ValidatedConfig& cfg);

/// Parses a date and returns days since 1970-01-01. Throws parse errors.
long long parse_date_days(std::string_view text, DateFormat format);

struct MissingnessReport {
  std::vector<double> column_pct;  // parallel to column_names, rounded to 0.1
  double overall_pct = 0.0;        // rounded to 0.1
};

MissingnessReport missingness_report(const RawTable& table);

/// Rounds to one decimal place, the precision of every reported percentage.
double round_pct(double pct) noexcept;

}  // namespace effectbench
