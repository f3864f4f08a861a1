#include "effectbench/table.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <unordered_set>

#include "effectbench/error.hpp"

namespace effectbench {

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80) {
      extra = 0;
    } else if ((c >> 5) == 0x6) {
      extra = 1;
      if (c < 0xc2) return false;
    } else if ((c >> 4) == 0xe) {
      extra = 2;
    } else if ((c >> 3) == 0x1e && c <= 0xf4) {
      extra = 3;
    } else {
      return false;
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      if (i + k >= s.size()) return false;
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

struct RawRecord {
  std::vector<std::string> fields;
  std::vector<bool> quoted;
};

// Blank lines are skipped. Errors report data-row ordinals (header = row 0).
std::vector<RawRecord> split_records(std::string_view text) {
  std::vector<RawRecord> records;
  RawRecord current;
  std::string field;
  bool field_quoted = false;
  bool in_quotes = false;
  bool record_has_content = false;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    current.quoted.push_back(field_quoted);
    field.clear();
    field_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty() && !current.quoted[0];
    if (!blank) records.push_back(std::move(current));
    current = RawRecord{};
    record_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!trim(field).empty()) {
          throw Error(ErrorKind::parse, "malformed quoted field",
                      "record " + std::to_string(records.size()) + ": quote inside unquoted field");
        }
        field.clear();
        in_quotes = true;
        field_quoted = true;
        record_has_content = true;
        break;
      case ',':
        end_field();
        record_has_content = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
        record_has_content = true;
    }
  }
  if (in_quotes) throw Error(ErrorKind::parse, "unterminated quoted field");
  if (record_has_content || !field.empty()) end_record();
  return records;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string level_label(const LevelValue& level, bool numeric_column) {
  if (const auto* d = std::get_if<double>(&level)) return format_number(*d);
  const auto& text = std::get<std::string>(level);
  if (numeric_column) {
    if (auto v = parse_number(text)) return format_number(*v);
  }
  return text;
}

// Distinct non-missing labels, sorted.
std::vector<std::string> distinct_labels(const std::vector<Cell>& column) {
  std::set<std::string> labels;
  for (const auto& c : column) {
    if (!is_missing(c)) labels.insert(cell_label(c));
  }
  return {labels.begin(), labels.end()};
}

}  // namespace

std::string cell_label(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  return {};
}

std::optional<std::size_t> RawTable::find(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < column_names.size(); ++i) {
    if (column_names[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t RawTable::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw Error(ErrorKind::config, "column not found: " + std::string(name));
}

bool RawTable::is_numeric(std::size_t col) const noexcept {
  return std::ranges::all_of(columns[col], [](const Cell& c) { return !std::holds_alternative<std::string>(c); });
}

RawTable RawTable::select_columns(std::span<const std::string> names) const {
  RawTable out;
  out.n_rows = n_rows;
  for (const auto& name : names) {
    const auto idx = index_of(name);
    out.column_names.push_back(column_names[idx]);
    out.columns.push_back(columns[idx]);
  }
  return out;
}

RawTable RawTable::select_rows(std::span<const std::size_t> rows) const {
  RawTable out;
  out.column_names = column_names;
  out.n_rows = rows.size();
  out.columns.resize(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out.columns[j].reserve(rows.size());
    for (auto r : rows) out.columns[j].push_back(columns[j][r]);
  }
  return out;
}

RawTable parse_csv(std::string_view bytes) {
  if (bytes.starts_with("\xEF\xBB\xBF")) bytes.remove_prefix(3);
  if (!valid_utf8(bytes)) throw Error(ErrorKind::parse, "input is not valid UTF-8");
  auto records = split_records(bytes);
  if (records.empty()) throw Error(ErrorKind::parse, "empty file");

  RawTable table;
  std::unordered_set<std::string> seen;
  for (auto& name : records.front().fields) {
    std::string clean{trim(name)};
    if (clean.empty()) throw Error(ErrorKind::parse, "empty column name in header");
    if (!seen.insert(clean).second) {
      throw Error(ErrorKind::config, "duplicate column name: " + clean);
    }
    table.column_names.push_back(std::move(clean));
  }
  const std::size_t width = table.column_names.size();
  if (records.size() < 2) throw Error(ErrorKind::parse, "no data rows");

  table.n_rows = records.size() - 1;
  table.columns.assign(width, {});
  for (auto& col : table.columns) col.reserve(table.n_rows);

  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& rec = records[r];
    if (rec.fields.size() != width) {
      throw Error(ErrorKind::parse, "ragged row " + std::to_string(r),
                  "row " + std::to_string(r) + ": expected " + std::to_string(width) + " cells, found " +
                      std::to_string(rec.fields.size()));
    }
    for (std::size_t j = 0; j < width; ++j) {
      auto& text = rec.fields[j];
      if (trim(text).empty()) {
        table.columns[j].emplace_back(std::monostate{});
      } else if (auto v = parse_number(text)) {
        table.columns[j].emplace_back(*v);
      } else {
        table.columns[j].emplace_back(std::string(trim(text)));
      }
    }
  }

  // A column with any text cell is a text column throughout; numeric-looking
  // cells in it are kept verbatim as labels.
  for (std::size_t j = 0; j < width; ++j) {
    if (table.is_numeric(j)) continue;
    for (std::size_t r = 0; r < table.n_rows; ++r) {
      auto& cell = table.columns[j][r];
      if (std::holds_alternative<double>(cell)) cell = std::string(trim(records[r + 1].fields[j]));
    }
  }
  return table;
}

std::string_view to_string(Estimand e) noexcept {
  switch (e) {
    case Estimand::ate: return "ATE";
    case Estimand::att: return "ATT";
    case Estimand::atc: return "ATC";
  }
  return "?";
}

std::string_view to_string(AnalysisKind k) noexcept {
  switch (k) {
    case AnalysisKind::binary: return "binary";
    case AnalysisKind::continuous: return "continuous";
    case AnalysisKind::survival: return "survival";
  }
  return "?";
}

std::string_view to_string(TimeUnit u) noexcept {
  switch (u) {
    case TimeUnit::days: return "days";
    case TimeUnit::months: return "months";
    case TimeUnit::years: return "years";
  }
  return "?";
}

std::string_view to_string(DateFormat f) noexcept {
  switch (f) {
    case DateFormat::iso: return "YYYY-MM-DD";
    case DateFormat::day_month_year: return "DD/MM/YYYY";
    case DateFormat::month_day_year: return "MM/DD/YYYY";
  }
  return "?";
}

Estimand parse_estimand(std::string_view s) {
  if (s == "ATE") return Estimand::ate;
  if (s == "ATT") return Estimand::att;
  if (s == "ATC") return Estimand::atc;
  throw Error(ErrorKind::config, "unknown estimand: " + std::string(s));
}

AnalysisKind parse_analysis_kind(std::string_view s) {
  if (s == "binary") return AnalysisKind::binary;
  if (s == "continuous") return AnalysisKind::continuous;
  if (s == "survival") return AnalysisKind::survival;
  throw Error(ErrorKind::config, "unknown analysis_kind: " + std::string(s));
}

TimeUnit parse_time_unit(std::string_view s) {
  if (s == "days") return TimeUnit::days;
  if (s == "months") return TimeUnit::months;
  if (s == "years") return TimeUnit::years;
  throw Error(ErrorKind::config, "unknown time_unit: " + std::string(s));
}

DateFormat parse_date_format(std::string_view s) {
  if (s == "YYYY-MM-DD") return DateFormat::iso;
  if (s == "DD/MM/YYYY") return DateFormat::day_month_year;
  if (s == "MM/DD/YYYY") return DateFormat::month_day_year;
  throw Error(ErrorKind::config, "unknown date_format: " + std::string(s));
}

std::vector<std::string> ValidatedConfig::covariate_candidates(const RawTable& table) const {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < table.n_cols(); ++j) {
    if (j == outcome_index || j == treatment_index) continue;
    if (start_index == j || end_index == j) continue;
    out.push_back(table.column_names[j]);
  }
  return out;
}

ValidatedConfig validate_config(const RawTable& table, const AnalysisConfig& cfg) {
  ValidatedConfig v;
  v.config = cfg;
  if (cfg.outcome_column.empty()) throw Error(ErrorKind::config, "outcome_column is required");
  if (cfg.treatment_column.empty()) throw Error(ErrorKind::config, "treatment_column is required");
  v.outcome_index = table.index_of(cfg.outcome_column);
  v.treatment_index = table.index_of(cfg.treatment_column);
  if (v.outcome_index == v.treatment_index) {
    throw Error(ErrorKind::config, "outcome and treatment columns must differ");
  }

  const auto treat_levels = distinct_labels(table.columns[v.treatment_index]);
  if (treat_levels.size() != 2) {
    throw Error(ErrorKind::config, "treatment not dichotomous",
                cfg.treatment_column + " has " + std::to_string(treat_levels.size()) + " distinct values");
  }
  v.treatment_positive_label = level_label(cfg.treatment_positive_level, table.is_numeric(v.treatment_index));
  if (std::ranges::find(treat_levels, v.treatment_positive_label) == treat_levels.end()) {
    throw Error(ErrorKind::config, "level not found",
                "treatment level " + v.treatment_positive_label + " absent from " + cfg.treatment_column);
  }
  v.treatment_negative_label =
      treat_levels[0] == v.treatment_positive_label ? treat_levels[1] : treat_levels[0];

  const auto outcome_levels = distinct_labels(table.columns[v.outcome_index]);
  switch (cfg.analysis_kind) {
    case AnalysisKind::binary:
      if (outcome_levels.size() != 2) {
        throw Error(ErrorKind::config, "outcome not dichotomous",
                    cfg.outcome_column + " has " + std::to_string(outcome_levels.size()) + " distinct values");
      }
      [[fallthrough]];
    case AnalysisKind::survival: {
      if (outcome_levels.size() > 2) {
        throw Error(ErrorKind::config, "event indicator not dichotomous");
      }
      if (!cfg.outcome_positive_level) {
        throw Error(ErrorKind::config, "outcome_positive_level is required for binary and survival analyses");
      }
      auto label = level_label(*cfg.outcome_positive_level, table.is_numeric(v.outcome_index));
      if (std::ranges::find(outcome_levels, label) == outcome_levels.end()) {
        throw Error(ErrorKind::config, "level not found",
                    "outcome level " + label + " absent from " + cfg.outcome_column);
      }
      v.outcome_positive_label = std::move(label);
      break;
    }
    case AnalysisKind::continuous:
      if (!table.is_numeric(v.outcome_index)) {
        throw Error(ErrorKind::config, "continuous outcome must be numeric", cfg.outcome_column);
      }
      break;
  }

  if (cfg.analysis_kind == AnalysisKind::survival) {
    if (!cfg.survival) throw Error(ErrorKind::config, "survival settings are required for survival analyses");
    const auto& s = *cfg.survival;
    if (s.start_column.empty() || s.end_column.empty()) {
      throw Error(ErrorKind::config, "survival config missing date columns");
    }
    v.start_index = table.index_of(s.start_column);
    v.end_index = table.index_of(s.end_column);
    if (!(s.cutoff > 0.0) || !std::isfinite(s.cutoff)) {
      throw Error(ErrorKind::config, "survival cutoff must be positive");
    }
    for (auto idx : {*v.start_index, *v.end_index}) {
      if (idx == v.outcome_index || idx == v.treatment_index) {
        throw Error(ErrorKind::config, "date columns must differ from outcome and treatment");
      }
    }
  }

  auto check_names = [&](const std::set<std::string>& names, const char* what) {
    for (const auto& name : names) {
      const auto idx = table.index_of(name);
      if (idx == v.outcome_index || idx == v.treatment_index) {
        throw Error(ErrorKind::config, std::string(what) + " may not name the outcome or treatment column", name);
      }
    }
  };
  check_names(cfg.categorical_columns, "categorical_columns");
  check_names(cfg.excluded_from_outcome_model, "excluded_from_outcome_model");
  check_names(cfg.excluded_from_treatment_model, "excluded_from_treatment_model");
  return v;
}

ModelViews build_views(const RawTable& table, const ValidatedConfig& cfg) {
  ModelViews views;
  views.summary_view = table;
  for (const auto& name : cfg.covariate_candidates(table)) {
    if (!cfg.config.excluded_from_treatment_model.contains(name)) views.treatment_covariates.push_back(name);
    if (!cfg.config.excluded_from_outcome_model.contains(name)) views.outcome_covariates.push_back(name);
  }
  if (views.treatment_covariates.empty()) {
    throw Error(ErrorKind::config, "no covariates remain", "treatment model");
  }
  if (views.outcome_covariates.empty()) {
    throw Error(ErrorKind::config, "no covariates remain", "outcome model");
  }
  auto treat_cols = views.treatment_covariates;
  treat_cols.push_back(cfg.config.treatment_column);
  auto outcome_cols = views.outcome_covariates;
  outcome_cols.push_back(cfg.config.treatment_column);
  outcome_cols.push_back(cfg.config.outcome_column);
  views.treatment_view = table.select_columns(treat_cols);
  views.outcome_view = table.select_columns(outcome_cols);
  return views;
}

std::vector<std::size_t> complete_rows(const RawTable& table, std::span<const std::string> columns) {
  std::vector<std::size_t> idx;
  idx.reserve(columns.size());
  for (const auto& name : columns) idx.push_back(table.index_of(name));
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table.n_rows; ++r) {
    const bool complete = std::ranges::none_of(idx, [&](auto j) { return is_missing(table.columns[j][r]); });
    if (complete) rows.push_back(r);
  }
  return rows;
}

DesignMatrix encode_design(const RawTable& view, const std::set<std::string>& categorical) {
  const auto rows = complete_rows(view, view.column_names);
  if (rows.empty()) throw Error(ErrorKind::config, "no complete rows remain after dropping missing values");

  DesignMatrix dm;
  dm.row_index = rows;
  std::vector<Eigen::VectorXd> cols;
  const auto n = static_cast<Eigen::Index>(rows.size());

  for (std::size_t j = 0; j < view.n_cols(); ++j) {
    const auto& name = view.column_names[j];
    const auto& column = view.columns[j];
    const bool as_categorical = categorical.contains(name) || !view.is_numeric(j);
    if (!as_categorical) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = std::get<double>(column[rows[i]]);
      cols.push_back(std::move(v));
      dm.column_meta.push_back({name, "numeric"});
      continue;
    }
    std::set<std::string> level_set;
    std::vector<std::string> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      labels[i] = cell_label(column[rows[i]]);
      level_set.insert(labels[i]);
    }
    if (level_set.size() < 2) {
      throw Error(ErrorKind::config, "categorical column has a single level", name);
    }
    // std::set orders lexicographically; skip the first (reference) level.
    for (auto it = std::next(level_set.begin()); it != level_set.end(); ++it) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v[i] = labels[i] == *it ? 1.0 : 0.0;
      cols.push_back(std::move(v));
      dm.column_meta.push_back({name, *it});
    }
  }

  dm.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) dm.values.col(static_cast<Eigen::Index>(c)) = cols[c];
  return dm;
}

ModelFrame build_model_frame(const RawTable& table, const ValidatedConfig& cfg, const ModelViews& views) {
  std::set<std::string> needed(views.treatment_view.column_names.begin(), views.treatment_view.column_names.end());
  needed.insert(views.outcome_view.column_names.begin(), views.outcome_view.column_names.end());
  const std::vector<std::string> needed_cols(needed.begin(), needed.end());

  ModelFrame frame;
  frame.rows = complete_rows(table, needed_cols);
  if (frame.rows.empty()) throw Error(ErrorKind::config, "no complete rows remain after dropping missing values");
  frame.n_dropped = table.n_rows - frame.rows.size();

  const auto sample = table.select_rows(frame.rows);
  auto encode = [&](const std::vector<std::string>& covariates) {
    auto dm = encode_design(sample.select_columns(covariates), cfg.config.categorical_columns);
    for (auto& r : dm.row_index) r = frame.rows[r];
    return dm;
  };
  frame.treatment_design = encode(views.treatment_covariates);
  frame.outcome_design = encode(views.outcome_covariates);

  const auto n = static_cast<Eigen::Index>(frame.rows.size());
  frame.treatment.resize(n);
  frame.outcome.resize(n);
  const auto& a_col = table.columns[cfg.treatment_index];
  const auto& y_col = table.columns[cfg.outcome_index];
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = frame.rows[i];
    frame.treatment[i] = cell_label(a_col[r]) == cfg.treatment_positive_label ? 1.0 : 0.0;
    if (cfg.outcome_positive_label) {
      frame.outcome[i] = cell_label(y_col[r]) == *cfg.outcome_positive_label ? 1.0 : 0.0;
    } else {
      frame.outcome[i] = std::get<double>(y_col[r]);
    }
  }
  return frame;
}

long long parse_date_days(std::string_view text, DateFormat format) {
  text = trim(text);
  const auto fail = [&]() -> long long {
    throw Error(ErrorKind::parse, "unparseable date", std::string(text));
  };
  auto to_int = [&](std::string_view part) {
    int value = 0;
    if (part.empty() || part.size() > 4) fail();
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
    if (ec != std::errc{} || ptr != part.data() + part.size()) fail();
    return value;
  };
  const char sep = format == DateFormat::iso ? '-' : '/';
  const auto p1 = text.find(sep);
  const auto p2 = p1 == std::string_view::npos ? p1 : text.find(sep, p1 + 1);
  if (p2 == std::string_view::npos || text.find(sep, p2 + 1) != std::string_view::npos) fail();
  const auto a = text.substr(0, p1);
  const auto b = text.substr(p1 + 1, p2 - p1 - 1);
  const auto c = text.substr(p2 + 1);
  int y = 0, m = 0, d = 0;
  switch (format) {
    case DateFormat::iso:
      if (a.size() != 4) fail();
      y = to_int(a), m = to_int(b), d = to_int(c);
      break;
    case DateFormat::day_month_year:
      if (c.size() != 4) fail();
      d = to_int(a), m = to_int(b), y = to_int(c);
      break;
    case DateFormat::month_day_year:
      if (c.size() != 4) fail();
      m = to_int(a), d = to_int(b), y = to_int(c);
      break;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (m < 1 || d < 1 || !ymd.ok()) fail();
  return sys_days{ymd}.time_since_epoch().count();
}

SurvivalTimes derive_survival(const RawTable& table, const ValidatedConfig& cfg) {
  if (!cfg.config.survival || !cfg.start_index || !cfg.end_index || !cfg.outcome_positive_label) {
    throw Error(ErrorKind::config, "survival config missing date columns");
  }
  const auto& spec = *cfg.config.survival;
  const double divisor = spec.time_unit == TimeUnit::days     ? 1.0
                         : spec.time_unit == TimeUnit::months ? 30.4375
                                                              : 365.25;
  SurvivalTimes out;
  out.time.reserve(table.n_rows);
  out.event.reserve(table.n_rows);
  std::size_t censored = 0;
  for (std::size_t r = 0; r < table.n_rows; ++r) {
    const auto row_tag = "row " + std::to_string(r + 1);
    auto day_of = [&](std::size_t col) {
      const auto& cell = table.columns[col][r];
      try {
        return parse_date_days(cell_label(cell), spec.date_format);
      } catch (const Error& e) {
        throw Error(ErrorKind::parse, "unparseable date", row_tag + ": '" + e.detail() + "' in " + table.column_names[col]);
      }
    };
    const auto start = day_of(*cfg.start_index);
    const auto end = day_of(*cfg.end_index);
    if (end < start) throw Error(ErrorKind::config, "end date before start date", row_tag);
    const auto& ev_cell = table.columns[cfg.outcome_index][r];
    if (is_missing(ev_cell)) throw Error(ErrorKind::config, "missing event indicator", row_tag);

    const double duration = static_cast<double>(end - start) / divisor;
    const bool flagged = cell_label(ev_cell) == *cfg.outcome_positive_label;
    if (flagged && duration <= spec.cutoff) {
      out.time.push_back(duration);
      out.event.push_back(true);
    } else {
      out.time.push_back(std::min(duration, spec.cutoff));
      out.event.push_back(false);
      ++censored;
    }
  }
  out.censored_fraction = table.n_rows ? static_cast<double>(censored) / static_cast<double>(table.n_rows) : 0.0;
  return out;
}

double round_pct(double pct) noexcept { return std::round(pct * 10.0) / 10.0; }

MissingnessReport missingness_report(const RawTable& table) {
  MissingnessReport rep;
  std::size_t total_missing = 0;
  for (const auto& col : table.columns) {
    const auto missing = static_cast<std::size_t>(std::ranges::count_if(col, is_missing));
    total_missing += missing;
    rep.column_pct.push_back(table.n_rows ? round_pct(100.0 * static_cast<double>(missing) / static_cast<double>(table.n_rows)) : 0.0);
  }
  const auto cells = table.n_rows * table.n_cols();
  rep.overall_pct = cells ? round_pct(100.0 * static_cast<double>(total_missing) / static_cast<double>(cells)) : 0.0;
  return rep;
}

}  // namespace effectbench
