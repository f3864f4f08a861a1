#include <doctest.h>

#include "effectbench/error.hpp"
#include "effectbench/table.hpp"

using namespace effectbench;

namespace {

AnalysisConfig binary_config() {
  AnalysisConfig cfg;
  cfg.outcome_column = "Y";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.treatment_positive_level = 1.0;
  return cfg;
}

std::string error_message(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

const char* kSmall =
    "Y,A,V1,V2,V3\n"
    "1,0,2.5,a,10\n"
    "0,1,3.0,b,11\n"
    "1,1,1.0,c,12\n"
    "0,0,4.0,a,13\n";

}  // namespace

TEST_CASE("parse_csv reads a minimal file") {
  const auto t = parse_csv("Y,A,V1\n1,0,2.5\n0,1,3.0");
  CHECK(t.n_cols() == 3);
  CHECK(t.n_rows == 2);
  for (std::size_t j = 0; j < 3; ++j) CHECK(t.is_numeric(j));
  CHECK(std::get<double>(t.columns[2][0]) == 2.5);
}

TEST_CASE("parse_csv reports ragged rows by number") {
  try {
    parse_csv("Y,A\n1,0,9");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    CHECK(e.detail().find("row 1") != std::string::npos);
  }
}

TEST_CASE("parse_csv rejects empty input and duplicate headers") {
  CHECK_THROWS_AS(parse_csv(""), Error);
  try {
    parse_csv("A,A\n1,2\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  try {
    parse_csv("Y,A\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
  }
  CHECK_THROWS_AS(parse_csv("Y\n\xff\xfe\n"), Error);
}

TEST_CASE("parse_csv handles quoting, BOM, CRLF, missing and text cells") {
  const auto t = parse_csv("\xEF\xBB\xBFname,note,x\r\n\"Smith, J\",\"say \"\"hi\"\"\",1\r\nLee,,\r\n");
  CHECK(t.column_names[0] == "name");
  CHECK(t.n_rows == 2);
  CHECK(std::get<std::string>(t.columns[0][0]) == "Smith, J");
  CHECK(std::get<std::string>(t.columns[1][0]) == "say \"hi\"");
  CHECK(is_missing(t.columns[1][1]));
  CHECK(is_missing(t.columns[2][1]));
  CHECK(t.is_numeric(2));
  CHECK_FALSE(t.is_numeric(0));
}

TEST_CASE("parse_csv keeps numeric-looking cells of text columns as labels") {
  const auto t = parse_csv("g\n1\nx\n01\n");
  CHECK_FALSE(t.is_numeric(0));
  CHECK(std::get<std::string>(t.columns[0][2]) == "01");
}

TEST_CASE("validate_config accepts a well-formed binary config") {
  const auto t = parse_csv(kSmall);
  const auto v = validate_config(t, binary_config());
  CHECK(v.outcome_index == 0);
  CHECK(v.treatment_index == 1);
  CHECK(v.treatment_positive_label == "1");
  CHECK(v.treatment_negative_label == "0");
  CHECK(*v.outcome_positive_label == "1");
}

TEST_CASE("validate_config errors") {
  const auto t = parse_csv("Y,A,B,V\n1,0,0,1\n0,1,1,2\n1,2,0,3\n");
  auto cfg = binary_config();
  CHECK(error_message([&] { validate_config(t, cfg); }) == "treatment not dichotomous");

  cfg.treatment_column = "B";
  cfg.outcome_positive_level = 2.0;
  CHECK(error_message([&] { validate_config(t, cfg); }) == "level not found");

  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "nope";
  CHECK(error_message([&] { validate_config(t, cfg); }).find("nope") != std::string::npos);

  cfg.treatment_column = "B";
  cfg.categorical_columns = {"Y"};
  CHECK_THROWS_AS(validate_config(t, cfg), Error);

  cfg.categorical_columns.clear();
  cfg.analysis_kind = AnalysisKind::survival;
  CHECK_THROWS_AS(validate_config(t, cfg), Error);
  cfg.survival = SurvivalSpec{"s", "e", DateFormat::iso, TimeUnit::days, 5.0};
  CHECK_THROWS_AS(validate_config(t, cfg), Error);
}

TEST_CASE("validate_config accepts text levels") {
  const auto t = parse_csv("Y,A,V\nyes,drug,1\nno,placebo,2\nyes,placebo,3\n");
  auto cfg = binary_config();
  cfg.outcome_positive_level = std::string("yes");
  cfg.treatment_positive_level = std::string("drug");
  const auto v = validate_config(t, cfg);
  CHECK(v.treatment_negative_label == "placebo");
}

TEST_CASE("build_views applies per-model exclusions only to the matching view") {
  const auto t = parse_csv(
      "Y,A,V1,V2,V3,V4,V5,V6,V7,V8,V9,V10\n"
      "1,0,1,2,3,4,5,6,7,8,9,10\n"
      "0,1,2,3,4,5,6,7,8,9,10,11\n");
  auto cfg = binary_config();
  cfg.excluded_from_outcome_model = {"V10", "V9"};
  cfg.excluded_from_treatment_model = {"V8"};
  const auto v = validate_config(t, cfg);
  const auto views = build_views(t, v);
  CHECK_FALSE(views.outcome_view.find("V9"));
  CHECK_FALSE(views.outcome_view.find("V10"));
  CHECK(views.outcome_view.find("V8"));
  CHECK_FALSE(views.treatment_view.find("V8"));
  CHECK(views.treatment_view.find("V9"));
  CHECK(views.summary_view.column_names == t.column_names);
  CHECK(views.summary_view.n_rows == t.n_rows);
  CHECK(views.outcome_view.find("Y"));
  CHECK(views.outcome_view.find("A"));
  CHECK(views.treatment_view.find("A"));
  CHECK(views.outcome_covariates.size() == 8);
  CHECK(views.treatment_covariates.size() == 9);

  // View consistency: covariates in the view plus exclusions cover all.
  for (const auto& c : v.covariate_candidates(t)) {
    const bool in_view = std::ranges::find(views.treatment_covariates, c) != views.treatment_covariates.end();
    CHECK((in_view || cfg.excluded_from_treatment_model.contains(c)));
  }
}

TEST_CASE("build_views without exclusions shares covariates; excluding all fails") {
  const auto t = parse_csv(kSmall);
  auto cfg = binary_config();
  auto views = build_views(t, validate_config(t, cfg));
  CHECK(views.treatment_covariates == views.outcome_covariates);
  CHECK(views.treatment_covariates == std::vector<std::string>{"V1", "V2", "V3"});

  cfg.excluded_from_treatment_model = {"V1", "V2", "V3"};
  CHECK(error_message([&] { build_views(t, validate_config(t, cfg)); }) == "no covariates remain");
}

TEST_CASE("build_views never uses survival date columns as covariates") {
  const auto t = parse_csv("E,A,X,s,e\n1,0,1,2020-01-01,2020-01-03\n0,1,2,2020-01-01,2020-01-05\n");
  AnalysisConfig cfg;
  cfg.outcome_column = "E";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.analysis_kind = AnalysisKind::survival;
  cfg.survival = SurvivalSpec{"s", "e", DateFormat::iso, TimeUnit::days, 10.0};
  const auto views = build_views(t, validate_config(t, cfg));
  CHECK(views.outcome_covariates == std::vector<std::string>{"X"});
  CHECK(views.treatment_covariates == std::vector<std::string>{"X"});
}

TEST_CASE("encode_design passes numeric columns through") {
  const auto t = parse_csv("a,b\n1,2\n3,4\n5,6\n");
  const auto d = encode_design(t, {});
  CHECK(d.rows() == 3);
  CHECK(d.cols() == 2);
  CHECK(d.values(2, 1) == 6.0);
  CHECK(d.column_meta[0].level == "numeric");
  CHECK(d.row_index == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("encode_design expands L levels into L-1 indicators") {
  const auto t = parse_csv("g,x\nc,1\na,2\nb,3\na,4\n");
  const auto d = encode_design(t, {"g"});
  REQUIRE(d.cols() == 3);
  CHECK(d.column_meta[0].source == "g");
  CHECK(d.column_meta[0].level == "b");
  CHECK(d.column_meta[1].level == "c");
  // Round-trip: at most one indicator per variable is set.
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const double s = d.values(i, 0) + d.values(i, 1);
    CHECK((s == 0.0 || s == 1.0));
  }
  CHECK(d.values(0, 1) == 1.0);
  CHECK(d.values(1, 0) + d.values(1, 1) == 0.0);

  // Numeric columns declared categorical are encoded by level too.
  const auto n = encode_design(parse_csv("k\n1\n2\n3\n2\n"), {"k"});
  CHECK(n.cols() == 2);
}

TEST_CASE("encode_design drops incomplete rows and rejects single-level factors") {
  const auto t = parse_csv("x,y\n1,1\n,2\n3,3\n4,\n5,5\n6,6\n7,\n8,8\n9,9\n10,10\n");
  const auto d = encode_design(t, {});
  CHECK(d.rows() == 7);
  CHECK(d.row_index.size() == 7);
  CHECK(d.row_index[1] == 2);
  CHECK_THROWS_AS(encode_design(parse_csv("g,x\na,1\na,2\n"), {"g"}), Error);
  CHECK_THROWS_AS(encode_design(parse_csv("x,y\n1,\n,2\n"), {}), Error);
}

TEST_CASE("encode_design is deterministic") {
  const auto t = parse_csv("g,x\nb,1\na,2\nc,3\n");
  const auto d1 = encode_design(t, {"g"});
  const auto d2 = encode_design(parse_csv("g,x\nb,1\na,2\nc,3\n"), {"g"});
  CHECK(d1.values == d2.values);
}

TEST_CASE("build_model_frame aligns both designs on rows complete in both views") {
  const auto t = parse_csv("Y,A,V1,V2\n1,0,1,\n0,1,2,5\n1,1,,6\n0,0,4,7\n1,1,5,8\n");
  auto cfg = binary_config();
  cfg.excluded_from_outcome_model = {"V2"};
  const auto v = validate_config(t, cfg);
  const auto frame = build_model_frame(t, v, build_views(t, v));
  CHECK(frame.rows == std::vector<std::size_t>{1, 3, 4});
  CHECK(frame.n_dropped == 2);
  CHECK(frame.treatment_design.rows() == 3);
  CHECK(frame.outcome_design.cols() == 1);
  CHECK(frame.treatment[0] == 1.0);
  CHECK(frame.outcome[1] == 0.0);
}

namespace {

SurvivalTimes survival_of(const std::string& csv, TimeUnit unit, double cutoff, DateFormat fmt = DateFormat::iso) {
  const auto t = parse_csv(csv);
  AnalysisConfig cfg;
  cfg.outcome_column = "E";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  cfg.analysis_kind = AnalysisKind::survival;
  cfg.survival = SurvivalSpec{"s", "e", fmt, unit, cutoff};
  return derive_survival(t, validate_config(t, cfg));
}

}  // namespace

TEST_CASE("derive_survival censors at the cutoff") {
  auto st = survival_of("E,A,s,e\n1,0,2020-01-01,2020-01-11\n1,1,2020-01-01,2020-01-04\n0,1,2020-01-01,2020-01-03\n",
                        TimeUnit::days, 5.0);
  CHECK(st.time[0] == 5.0);
  CHECK_FALSE(st.event[0]);
  CHECK(st.time[1] == 3.0);
  CHECK(st.event[1]);
  CHECK(st.time[2] == 2.0);
  CHECK_FALSE(st.event[2]);
  CHECK(st.censored_fraction == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("derive_survival converts units and formats") {
  auto years = survival_of("E,A,s,e\n1,0,2000-01-01,2002-01-01\n0,1,2000-01-01,2010-01-01\n", TimeUnit::years, 3.5);
  CHECK(years.time[0] == doctest::Approx(731.0 / 365.25).epsilon(1e-14));
  CHECK(years.event[0]);
  CHECK(years.time[1] == 3.5);
  auto months = survival_of("E,A,s,e\n1,0,31/01/2020,01/03/2020\n0,1,01/01/2020,02/01/2020\n", TimeUnit::months, 12.0,
                            DateFormat::day_month_year);
  CHECK(months.time[0] == doctest::Approx(30.0 / 30.4375).epsilon(1e-14));
  auto us = survival_of("E,A,s,e\n1,0,01/31/2020,03/01/2020\n0,1,01/01/2020,01/02/2020\n", TimeUnit::days, 100.0,
                        DateFormat::month_day_year);
  CHECK(us.time[0] == 30.0);
  // Leap day is a real date.
  CHECK(parse_date_days("2020-02-29", DateFormat::iso) - parse_date_days("2020-02-28", DateFormat::iso) == 1);
  CHECK_THROWS_AS(parse_date_days("2021-02-29", DateFormat::iso), Error);
}

TEST_CASE("derive_survival errors name the row") {
  try {
    survival_of("E,A,s,e\n1,0,2020-01-01,2020-01-11\n1,1,2020-01-05,2020-01-04\n", TimeUnit::days, 5.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "end date before start date");
    CHECK(e.detail() == "row 2");
  }
  try {
    survival_of("E,A,s,e\n1,0,2020-13-01,2020-01-11\n1,1,2020-01-01,2020-01-04\n", TimeUnit::days, 5.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.detail().find("row 1") != std::string::npos);
    CHECK(e.detail().find("2020-13-01") != std::string::npos);
  }
}

TEST_CASE("derive_survival respects the censoring bound") {
  std::string csv = "E,A,s,e\n";
  for (int d = 0; d < 40; ++d) {
    csv += std::to_string(d % 3 ? 1 : 0) + "," + std::to_string(d % 2) + ",2021-03-01,2021-" +
           (d < 31 ? "03-" + std::string(d + 1 < 10 ? "0" : "") + std::to_string(d + 1)
                   : "04-0" + std::to_string(d - 30)) +
           "\n";
  }
  const auto st = survival_of(csv, TimeUnit::days, 17.0);
  for (std::size_t i = 0; i < st.time.size(); ++i) {
    CHECK(st.time[i] <= 17.0);
    if (st.event[i]) CHECK(st.time[i] <= 17.0);
  }
}

TEST_CASE("missingness_report") {
  CHECK(missingness_report(parse_csv("a,b\n1,2\n3,4\n")).overall_pct == 0.0);
  const auto r = missingness_report(parse_csv("a,b,c,d,e\n1,2,3,4,5\n1,2,,4,5\n"));
  CHECK(r.overall_pct == 10.0);
  CHECK(r.column_pct[2] == 50.0);
  const auto all = missingness_report(parse_csv("a,b\n1,\n2,\n"));
  CHECK(all.column_pct[1] == 100.0);
  CHECK(round_pct(100.0 / 3.0) == doctest::Approx(33.3));
}
