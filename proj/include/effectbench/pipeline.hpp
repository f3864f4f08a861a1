#pragma once

// End-to-end analysis: config in, ResultsDocument out. Shared by the CLI
// and the HTTP service.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "effectbench/diagnostics.hpp"
#include "effectbench/effects.hpp"
#include "effectbench/survival.hpp"
#include "effectbench/table.hpp"

namespace effectbench {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSoftwareVersion = "0.3.0";

struct AnalysisOptions {
  double clip_bound = kDefaultClip;
  int bootstrap_replicates = 499;
  int cv_folds = 5;
  std::vector<LearnerSpec> learner_library = default_library();
  PropensityMethod propensity_method = PropensityMethod::glm;
  int histogram_bins = 20;
  int cox_bootstrap_replicates = 0;  // 0: model-based standard errors only
};

struct AnalysisRequest {
  AnalysisConfig config;
  AnalysisOptions options;
  std::uint64_t seed = 1;
};

enum class Stage { parsing, fitting_treatment_model, fitting_outcome_model, estimating, cross_validating, summarizing };

std::string_view to_string(Stage s) noexcept;

using ProgressFn = std::function<void(Stage)>;

struct SampleCounts {
  std::size_t n_input = 0;
  std::size_t n_analyzed = 0;
  std::size_t n_dropped = 0;
};

struct NamedCv {
  std::string model;  // "treatment_model" or "outcome_model"
  CvResult result;
};

struct EnsembleSummary {
  std::string model;
  std::vector<std::string> learners;
  std::vector<double> weights;
  std::vector<double> cv_risks;
  double meta_risk = 0.0;
};

struct SurvivalSection {
  SurvivalCurve km_treated;  // unweighted
  SurvivalCurve km_control;
  AteCurveResult ate;        // IPW-weighted curves and their difference
  CoxFit cox;                // weighted marginal model on the treatment indicator
  std::optional<double> cox_bootstrap_se;
  double cutoff = 0.0;
  TimeUnit time_unit = TimeUnit::days;
};

struct ResultsDocument {
  AnalysisRequest request;
  SampleCounts sample;
  OverviewStats overview;
  std::vector<EffectEstimate> estimates;
  std::vector<std::string> notes;
  std::vector<std::pair<std::string, PropensityHistogram>> propensity_histograms;  // keyed by method
  std::vector<NamedCv> cv;
  std::vector<EnsembleSummary> ensembles;
  Table1 table1;
  std::optional<SurvivalSection> survival;
  std::vector<std::string> warnings;
};

/// Runs the whole pipeline. Throws Error on invalid config or failed fits.
ResultsDocument run_analysis(const RawTable& table, const AnalysisRequest& request, const ProgressFn& progress = {});

// JSON mapping. Field names follow the C++ types in snake_case.
Json config_to_json(const AnalysisConfig& cfg);
AnalysisConfig config_from_json(const Json& j);
Json options_to_json(const AnalysisOptions& options);
AnalysisOptions options_from_json(const Json& j);

/// Reads {<AnalysisConfig fields>, "options": {...}}; options optional.
AnalysisRequest request_from_json(const Json& j, std::uint64_t seed);

/// The document printed by --print-default-config.
Json default_config_json();

Json to_json(const OverviewStats& s);
Json to_json(const EffectEstimate& e, bool with_influence = true);
Json to_json(const CvMetricSummary& s);
Json to_json(const CalibrationTable& c);
Json to_json(const Table1& t);
Json to_json(const EdaReport& r);
Json to_json(const PropensityHistogram& h);
Json to_json(const SurvivalCurve& c);
Json to_json(const ResultsDocument& doc);

/// Full-precision doubles; +/-inf written as "Inf"/"-Inf", NaN as null.
Json number(double v);

/// Deterministic serialization used for results.json and HTTP bodies.
std::string dump(const Json& j);

/// Plot-data exports written by the CLI.
std::string forest_csv(const ResultsDocument& doc);
std::string propensity_csv(const ResultsDocument& doc);
std::string curves_csv(const ResultsDocument& doc);
std::string cv_summary_csv(const ResultsDocument& doc);

}  // namespace effectbench
