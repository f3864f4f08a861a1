#include "effectbench/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"

namespace effectbench {

namespace {

// Stream indices for derive_seed(seed, .).
constexpr std::uint64_t kPropensityStream = 10;
constexpr std::uint64_t kIpwBootstrapStream = 11;
constexpr std::uint64_t kTmleStream = 12;
constexpr std::uint64_t kCoxBootstrapStream = 13;
constexpr std::uint64_t kTreatmentCvStream = 20;
constexpr std::uint64_t kOutcomeCvStream = 21;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Json level_to_json(const LevelValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return number(*d);
  return std::get<std::string>(v);
}

LevelValue level_from_json(const Json& j, const char* field) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw Error(ErrorKind::config, "invalid config", std::string(field) + " must be a number or a string");
}

std::set<std::string> name_set(const Json& j, const char* field) {
  if (!j.contains(field) || j[field].is_null()) return {};
  if (!j[field].is_array()) throw Error(ErrorKind::config, "invalid config", std::string(field) + " must be a list");
  std::set<std::string> out;
  for (const auto& v : j[field]) out.insert(v.get<std::string>());
  return out;
}

template <typename T>
T field_or(const Json& j, const char* name, T fallback) {
  if (!j.contains(name) || j[name].is_null()) return fallback;
  return j[name].get<T>();
}

Json learner_to_json(const LearnerSpec& s) {
  Json j;
  j["kind"] = std::string(to_string(s.kind));
  Json h = Json::object();
  switch (s.kind) {
    case LearnerKind::mean:
    case LearnerKind::glm:
      break;
    case LearnerKind::lasso:
      h["lambda"] = s.lambda ? number(*s.lambda) : Json(nullptr);
      h["lambda_grid"] = s.lambda_grid;
      h["inner_folds"] = s.inner_folds;
      break;
    case LearnerKind::gbstumps:
      h["rounds"] = s.rounds;
      h["learning_rate"] = number(s.learning_rate);
      h["min_leaf"] = s.min_leaf;
      h["subsample"] = number(s.subsample);
      break;
  }
  j["hyperparameters"] = h;
  return j;
}

LearnerSpec learner_from_json(const Json& j) {
  LearnerSpec s;
  s.kind = parse_learner_kind(j.at("kind").get<std::string>());
  const Json h = j.contains("hyperparameters") ? j["hyperparameters"] : Json::object();
  if (h.contains("lambda") && !h["lambda"].is_null()) s.lambda = h["lambda"].get<double>();
  s.lambda_grid = field_or(h, "lambda_grid", s.lambda_grid);
  s.inner_folds = field_or(h, "inner_folds", s.inner_folds);
  s.rounds = field_or(h, "rounds", s.rounds);
  s.learning_rate = field_or(h, "learning_rate", s.learning_rate);
  s.min_leaf = field_or(h, "min_leaf", s.min_leaf);
  s.subsample = field_or(h, "subsample", s.subsample);
  if (s.lambda && *s.lambda < 0.0) throw Error(ErrorKind::config, "invalid config", "lambda must be nonnegative");
  if (s.rounds < 0 || !(s.learning_rate > 0.0 && s.learning_rate <= 1.0) || s.min_leaf < 1 ||
      !(s.subsample > 0.0 && s.subsample <= 1.0) || s.lambda_grid < 1 || s.inner_folds < 2) {
    throw Error(ErrorKind::config, "invalid config", "learner hyperparameter out of range");
  }
  return s;
}

EnsembleSummary summarize_ensemble(const std::string& model, const EnsembleFit& fit) {
  EnsembleSummary s;
  s.model = model;
  for (const auto& spec : fit.library) s.learners.emplace_back(to_string(spec.kind));
  s.weights.assign(fit.weights.data(), fit.weights.data() + fit.weights.size());
  s.cv_risks.assign(fit.cv_risks.data(), fit.cv_risks.data() + fit.cv_risks.size());
  s.meta_risk = fit.meta_risk;
  return s;
}

void add_warnings(std::vector<std::string>& out, const std::string& prefix, const std::vector<std::string>& in) {
  for (const auto& w : in) out.push_back(prefix + w);
}

Json vec(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

Json vec(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

Json curve_json(const AteCurve& c) {
  Json j;
  j["time_grid"] = vec(c.time_grid);
  j["values"] = vec(c.ate);
  j["ci_low"] = vec(c.ci_low);
  j["ci_high"] = vec(c.ci_high);
  return j;
}

double cox_bootstrap_se(const Eigen::MatrixXd& xa, const Eigen::VectorXd& a, const std::vector<double>& times,
                        const std::vector<bool>& events, Estimand estimand, const PropensityOptions& popt,
                        int replicates, std::uint64_t seed) {
  const auto n = a.size();
  const auto b = static_cast<std::size_t>(replicates);
  std::vector<double> betas;
  std::size_t attempts = 0;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < b; ++r) {
    Rng rng(derive_seed(seed, r));
    while (true) {
      if (++attempts > 10 * b) {
        throw Error(ErrorKind::numeric, "cox bootstrap failed", std::to_string(10 * b) + " attempts");
      }
      for (auto& i : idx) i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      try {
        const Eigen::MatrixXd xb = xa(idx, Eigen::all);
        const Eigen::VectorXd ab = a(idx);
        std::vector<double> tb;
        std::vector<bool> eb;
        for (auto i : idx) {
          tb.push_back(times[static_cast<std::size_t>(i)]);
          eb.push_back(events[static_cast<std::size_t>(i)]);
        }
        const auto model = estimate_propensity(xb, ab, popt);
        const auto w = compute_weights(model.scores, ab, estimand);
        const Eigen::MatrixXd design = ab;
        const std::vector<double> wv(w.w.data(), w.w.data() + w.w.size());
        betas.push_back(fit_cox(design, tb, eb, wv).beta[0]);
        break;
      } catch (const Error&) {
      }
    }
  }
  double mean = 0.0;
  for (double v : betas) mean += v;
  mean /= static_cast<double>(betas.size());
  double ss = 0.0;
  for (double v : betas) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(betas.size() - 1));
}

void check_options(const AnalysisOptions& o) {
  if (!(o.clip_bound > 0.0 && o.clip_bound < 0.5)) throw Error(ErrorKind::config, "clip bound must lie in (0, 0.5)");
  if (o.bootstrap_replicates < 100) throw Error(ErrorKind::config, "at least 100 bootstrap replicates are required");
  if (o.cv_folds < 2) throw Error(ErrorKind::config, "cross-validation needs at least 2 folds");
  if (o.histogram_bins < 1) throw Error(ErrorKind::config, "histogram needs at least one bin");
  if (o.cox_bootstrap_replicates != 0 && o.cox_bootstrap_replicates < 2) {
    throw Error(ErrorKind::config, "cox bootstrap needs at least 2 replicates");
  }
  if (o.learner_library.empty()) throw Error(ErrorKind::config, "learner library is empty");
  if (o.learner_library.size() > 16) throw Error(ErrorKind::config, "learner library holds at most 16 learners");
}

}  // namespace

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::parsing: return "parsing";
    case Stage::fitting_treatment_model: return "fitting_treatment_model";
    case Stage::fitting_outcome_model: return "fitting_outcome_model";
    case Stage::estimating: return "estimating";
    case Stage::cross_validating: return "cross_validating";
    case Stage::summarizing: return "summarizing";
  }
  return "?";
}

ResultsDocument run_analysis(const RawTable& table, const AnalysisRequest& request, const ProgressFn& progress) {
  const auto report = [&](Stage s) {
    if (progress) progress(s);
  };
  report(Stage::parsing);
  const auto& opt = request.options;
  check_options(opt);
  const auto cfg = validate_config(table, request.config);
  const auto views = build_views(table, cfg);
  const auto frame = build_model_frame(table, cfg, views);
  const bool is_survival = cfg.config.analysis_kind == AnalysisKind::survival;
  std::optional<SurvivalTimes> all_times;
  if (is_survival) all_times = derive_survival(table, cfg);

  ResultsDocument doc;
  doc.request = request;
  doc.sample = {table.n_rows, frame.rows.size(), frame.n_dropped};
  if (frame.n_dropped > 0) {
    doc.warnings.push_back(std::to_string(frame.n_dropped) +
                           " rows with missing values in model columns were excluded");
  }

  const auto& xa = frame.treatment_design.values;
  const auto& xo = frame.outcome_design.values;
  const auto& a = frame.treatment;
  const auto& y = frame.outcome;
  const auto n = static_cast<int>(frame.rows.size());
  const auto estimand = cfg.config.estimand;
  const int folds = std::min(opt.cv_folds, n);

  report(Stage::fitting_treatment_model);
  const PropensityOptions popt{opt.propensity_method, opt.clip_bound, opt.learner_library, folds,
                               derive_seed(request.seed, kPropensityStream)};
  const auto prop = estimate_propensity(xa, a, popt);
  if (prop.ensemble) {
    doc.ensembles.push_back(summarize_ensemble("treatment_model", *prop.ensemble));
    add_warnings(doc.warnings, "treatment model: ", prop.ensemble->warnings);
  }
  const auto weights = compute_weights(prop.scores, a, estimand);

  std::vector<double> times;
  std::vector<bool> events;
  if (is_survival) {
    for (auto r : frame.rows) {
      times.push_back(all_times->time[r]);
      events.push_back(all_times->event[r]);
    }
    report(Stage::fitting_outcome_model);
    SurvivalSection s;
    s.cutoff = cfg.config.survival->cutoff;
    s.time_unit = cfg.config.survival->time_unit;
    std::vector<double> t1, t0;
    std::vector<bool> e1, e0;
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      (a[i] == 1.0 ? t1 : t0).push_back(times[k]);
      (a[i] == 1.0 ? e1 : e0).push_back(events[k]);
    }
    s.km_treated = kaplan_meier(t1, e1);
    s.km_control = kaplan_meier(t0, e0);
    s.ate = ate_curve(times, events, a, prop.scores, estimand);
    const Eigen::MatrixXd design = a;
    const std::vector<double> wv(weights.w.data(), weights.w.data() + weights.w.size());
    s.cox = fit_cox(design, times, events, wv);
    if (opt.cox_bootstrap_replicates > 0) {
      s.cox_bootstrap_se = cox_bootstrap_se(xa, a, times, events, estimand, popt, opt.cox_bootstrap_replicates,
                                            derive_seed(request.seed, kCoxBootstrapStream));
    }

    report(Stage::estimating);
    EffectEstimate est;
    est.method = EffectMethod::ipw_km;
    est.estimand = estimand;
    est.psi = s.ate.treated.survival_at(s.cutoff) - s.ate.control.survival_at(s.cutoff);
    est.std_error = std::sqrt(s.ate.treated.variance_at(s.cutoff) + s.ate.control.variance_at(s.cutoff));
    est.ci_low = std::max(-1.0, est.psi - kZ975 * est.std_error);
    est.ci_high = std::min(1.0, est.psi + kZ975 * est.std_error);
    est.p_value = normal_p_value(est.psi, est.std_error);
    doc.estimates.push_back(est);
    doc.notes.push_back("IPW_KM estimate is the weighted survival difference S1(t) - S0(t) at the cutoff");
    doc.notes.push_back("Cox " + s.cox.variance_note);
    doc.propensity_histograms.emplace_back("IPW_KM", propensity_distribution(prop.scores, a, opt.histogram_bins));
    doc.survival = std::move(s);
  } else {
    const auto kind = cfg.config.analysis_kind == AnalysisKind::binary ? OutcomeKind::binary : OutcomeKind::continuous;
    std::optional<TmleResult> tmle;
    if (estimand == Estimand::ate) {
      report(Stage::fitting_outcome_model);
      TmleInputs in;
      in.outcome_covariates = xo;
      in.treatment_covariates = xa;
      in.treatment = a;
      in.outcome = y;
      in.kind = kind;
      in.estimand = estimand;
      in.outcome_library = opt.learner_library;
      in.treatment_library = opt.learner_library;
      in.clip_bound = opt.clip_bound;
      in.folds = folds;
      in.seed = derive_seed(request.seed, kTmleStream);
      tmle = tmle_estimate(in);
      doc.ensembles.push_back(summarize_ensemble("outcome_model", tmle->outcome.fit));
      add_warnings(doc.warnings, "outcome model: ", tmle->outcome.fit.warnings);
      if (tmle->propensity.ensemble) {
        doc.ensembles.push_back(summarize_ensemble("tmle_treatment_model", *tmle->propensity.ensemble));
        add_warnings(doc.warnings, "tmle treatment model: ", tmle->propensity.ensemble->warnings);
      }
    } else {
      doc.notes.push_back("TMLE not available for this estimand");
    }

    report(Stage::estimating);
    BootstrapOptions boot;
    boot.replicates = opt.bootstrap_replicates;
    boot.seed = derive_seed(request.seed, kIpwBootstrapStream);
    boot.reweight = propensity_reweighter(xa, a, estimand, popt);
    doc.estimates.push_back(ipw_estimate(y, a, weights, kind, boot));
    doc.propensity_histograms.emplace_back("IPW", propensity_distribution(prop.scores, a, opt.histogram_bins));
    if (tmle) {
      doc.estimates.push_back(tmle->estimate);
      doc.propensity_histograms.emplace_back(
          "TMLE", propensity_distribution(tmle->propensity.scores, a, opt.histogram_bins));
    }
  }

  report(Stage::cross_validating);
  {
    CvModel m;
    m.family = Family::binomial;
    m.library = opt.learner_library;
    m.inner_folds = folds;
    if (opt.propensity_method == PropensityMethod::glm) {
      m.kind = CvModel::Kind::learner;
      m.learner = learner_spec(LearnerKind::glm);
    }
    auto cv = cross_validate(xa, a, m, folds, derive_seed(request.seed, kTreatmentCvStream), MetricKind::auc);
    add_warnings(doc.warnings, "treatment model cross-validation: ", cv.warnings);
    doc.cv.push_back({"treatment_model", std::move(cv)});
  }
  {
    const Eigen::Index p = xo.cols();
    Eigen::MatrixXd xq(xo.rows(), p + 1);
    xq.leftCols(p) = xo;
    xq.col(p) = a;
    CvModel m;
    m.library = opt.learner_library;
    m.inner_folds = folds;
    CvResult cv;
    const auto cv_seed = derive_seed(request.seed, kOutcomeCvStream);
    switch (cfg.config.analysis_kind) {
      case AnalysisKind::binary:
        m.family = Family::binomial;
        cv = cross_validate(xq, y, m, folds, cv_seed, MetricKind::auc);
        break;
      case AnalysisKind::continuous:
        m.family = Family::gaussian;
        cv = cross_validate(xq, y, m, folds, cv_seed, MetricKind::mse);
        break;
      case AnalysisKind::survival: {
        m.kind = CvModel::Kind::cox;
        const Eigen::VectorXd tv = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
        cv = cross_validate(xq, tv, m, folds, cv_seed, MetricKind::c_index, &events);
        break;
      }
    }
    add_warnings(doc.warnings, "outcome model cross-validation: ", cv.warnings);
    doc.cv.push_back({"outcome_model", std::move(cv)});
  }

  report(Stage::summarizing);
  doc.overview = overview(table, cfg, all_times ? &*all_times : nullptr);
  doc.table1 = table1(table, cfg);
  return doc;
}

Json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  return v;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json config_to_json(const AnalysisConfig& cfg) {
  Json j;
  j["outcome_column"] = cfg.outcome_column;
  j["outcome_positive_level"] = cfg.outcome_positive_level ? level_to_json(*cfg.outcome_positive_level) : Json(nullptr);
  j["treatment_column"] = cfg.treatment_column;
  j["treatment_positive_level"] = level_to_json(cfg.treatment_positive_level);
  j["categorical_columns"] = cfg.categorical_columns;
  j["excluded_from_outcome_model"] = cfg.excluded_from_outcome_model;
  j["excluded_from_treatment_model"] = cfg.excluded_from_treatment_model;
  j["estimand"] = std::string(to_string(cfg.estimand));
  j["analysis_kind"] = std::string(to_string(cfg.analysis_kind));
  if (cfg.survival) {
    const auto& s = *cfg.survival;
    Json sj;
    sj["start_column"] = s.start_column;
    sj["end_column"] = s.end_column;
    sj["date_format"] = std::string(to_string(s.date_format));
    sj["time_unit"] = std::string(to_string(s.time_unit));
    sj["cutoff"] = number(s.cutoff);
    j["survival"] = sj;
  } else {
    j["survival"] = nullptr;
  }
  return j;
}

AnalysisConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::config, "invalid config", "expected a JSON object");
  try {
    AnalysisConfig cfg;
    cfg.outcome_column = j.at("outcome_column").get<std::string>();
    if (j.contains("outcome_positive_level") && !j["outcome_positive_level"].is_null()) {
      cfg.outcome_positive_level = level_from_json(j["outcome_positive_level"], "outcome_positive_level");
    }
    cfg.treatment_column = j.at("treatment_column").get<std::string>();
    if (j.contains("treatment_positive_level") && !j["treatment_positive_level"].is_null()) {
      cfg.treatment_positive_level = level_from_json(j["treatment_positive_level"], "treatment_positive_level");
    }
    cfg.categorical_columns = name_set(j, "categorical_columns");
    cfg.excluded_from_outcome_model = name_set(j, "excluded_from_outcome_model");
    cfg.excluded_from_treatment_model = name_set(j, "excluded_from_treatment_model");
    if (j.contains("estimand")) cfg.estimand = parse_estimand(j["estimand"].get<std::string>());
    if (j.contains("analysis_kind")) cfg.analysis_kind = parse_analysis_kind(j["analysis_kind"].get<std::string>());
    if (j.contains("survival") && !j["survival"].is_null()) {
      const auto& sj = j["survival"];
      SurvivalSpec s;
      s.start_column = sj.at("start_column").get<std::string>();
      s.end_column = sj.at("end_column").get<std::string>();
      if (sj.contains("date_format")) s.date_format = parse_date_format(sj["date_format"].get<std::string>());
      if (sj.contains("time_unit")) s.time_unit = parse_time_unit(sj["time_unit"].get<std::string>());
      s.cutoff = sj.at("cutoff").get<double>();
      cfg.survival = s;
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "invalid config", e.what());
  }
}

Json options_to_json(const AnalysisOptions& o) {
  Json j;
  j["clip_bound"] = number(o.clip_bound);
  j["bootstrap_replicates"] = o.bootstrap_replicates;
  j["cv_folds"] = o.cv_folds;
  j["propensity_method"] = std::string(to_string(o.propensity_method));
  j["histogram_bins"] = o.histogram_bins;
  j["cox_bootstrap_replicates"] = o.cox_bootstrap_replicates;
  Json lib = Json::array();
  for (const auto& s : o.learner_library) lib.push_back(learner_to_json(s));
  j["learner_library"] = lib;
  return j;
}

AnalysisOptions options_from_json(const Json& j) {
  AnalysisOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw Error(ErrorKind::config, "invalid config", "options must be an object");
  try {
    o.clip_bound = field_or(j, "clip_bound", o.clip_bound);
    o.bootstrap_replicates = field_or(j, "bootstrap_replicates", o.bootstrap_replicates);
    o.cv_folds = field_or(j, "cv_folds", o.cv_folds);
    o.histogram_bins = field_or(j, "histogram_bins", o.histogram_bins);
    o.cox_bootstrap_replicates = field_or(j, "cox_bootstrap_replicates", o.cox_bootstrap_replicates);
    if (j.contains("propensity_method")) {
      o.propensity_method = parse_propensity_method(j["propensity_method"].get<std::string>());
    }
    if (j.contains("learner_library")) {
      o.learner_library.clear();
      for (const auto& s : j["learner_library"]) o.learner_library.push_back(learner_from_json(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "invalid config", e.what());
  }
  check_options(o);
  return o;
}

AnalysisRequest request_from_json(const Json& j, std::uint64_t seed) {
  AnalysisRequest r;
  r.config = config_from_json(j);
  if (j.contains("options")) r.options = options_from_json(j["options"]);
  r.seed = seed;
  return r;
}

Json default_config_json() {
  AnalysisConfig cfg;
  cfg.outcome_column = "Y";
  cfg.outcome_positive_level = 1.0;
  cfg.treatment_column = "A";
  Json j = config_to_json(cfg);
  j["options"] = options_to_json(AnalysisOptions{});
  return j;
}

Json to_json(const OverviewStats& s) {
  Json j;
  j["n_subjects"] = s.n_subjects;
  j["n_covariates"] = s.n_covariates;
  j["pct_treated"] = number(s.pct_treated);
  j["pct_missing"] = number(s.pct_missing);
  if (s.pct_outcome) j["pct_outcome"] = number(*s.pct_outcome);
  if (s.mean_outcome) j["mean_outcome"] = number(*s.mean_outcome);
  if (s.pct_event) {
    j["pct_event"] = number(*s.pct_event);
    j["pct_censored"] = number(*s.pct_censored);
    j["mean_time_to_event"] = s.mean_time_to_event ? number(*s.mean_time_to_event) : Json(nullptr);
  }
  if (s.follow_up) {
    Json h;
    h["edges"] = vec(s.follow_up->edges);
    h["event_counts"] = s.follow_up->event_counts;
    h["censored_counts"] = s.follow_up->censored_counts;
    j["follow_up_histogram"] = h;
  }
  return j;
}

Json to_json(const EffectEstimate& e, bool with_influence) {
  Json j;
  j["method"] = std::string(to_string(e.method));
  j["estimand"] = std::string(to_string(e.estimand));
  j["psi"] = number(e.psi);
  j["ci_low"] = number(e.ci_low);
  j["ci_high"] = number(e.ci_high);
  j["p_value"] = number(e.p_value);
  j["std_error"] = number(e.std_error);
  if (e.epsilon) j["epsilon"] = number(*e.epsilon);
  if (with_influence && !e.influence.empty()) j["influence"] = vec(e.influence);
  return j;
}

Json to_json(const CvMetricSummary& s) {
  Json j;
  j["metric"] = std::string(to_string(s.metric));
  Json folds = Json::array();
  for (const auto& f : s.per_fold) folds.push_back(f ? number(*f) : Json(nullptr));
  j["per_fold"] = folds;
  j["mean"] = number(s.mean);
  j["sd"] = number(s.sd);
  j["min"] = number(s.min);
  j["max"] = number(s.max);
  return j;
}

Json to_json(const CalibrationTable& c) {
  Json j;
  Json bins = Json::array();
  for (const auto& b : c.bins) {
    Json bj;
    bj["mean_predicted"] = number(b.mean_predicted);
    bj["observed_rate"] = number(b.observed_rate);
    bj["count"] = b.count;
    bins.push_back(bj);
  }
  j["bins"] = bins;
  j["brier"] = number(c.brier);
  return j;
}

Json to_json(const Table1& t) {
  Json j;
  j["arm_labels"] = t.arm_labels;
  j["n_by_arm"] = t.n_by_arm;
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json rj;
    rj["label"] = r.label;
    rj["variable"] = r.variable;
    rj["categorical"] = r.categorical;
    if (!r.level.empty()) rj["level"] = r.level;
    rj["values"] = vec(r.arm_value);
    if (!r.arm_sd.empty()) rj["sds"] = vec(r.arm_sd);
    rj["p_value"] = r.p_value ? number(*r.p_value) : Json(nullptr);
    rj["smd"] = r.smd ? number(*r.smd) : Json(nullptr);
    rows.push_back(rj);
  }
  j["rows"] = rows;
  return j;
}

Json to_json(const EdaReport& r) {
  Json j;
  j["variable"] = r.variable;
  j["kind"] = r.categorical ? "categorical" : "continuous";
  j["n_nonmissing"] = r.n_nonmissing;
  if (r.categorical) {
    Json props = Json::array();
    for (const auto& [level, p] : r.proportions) props.push_back({{"level", level}, {"proportion", number(p)}});
    j["proportions"] = props;
    Json arms = Json::object();
    for (const auto& [arm, counts] : r.arm_counts) {
      Json cj = Json::array();
      for (const auto& [level, c] : counts) cj.push_back({{"level", level}, {"count", c}});
      arms[arm] = cj;
    }
    j["arm_counts"] = arms;
    return j;
  }
  j["min"] = number(r.min);
  j["mean"] = number(r.mean);
  j["median"] = number(r.median);
  j["max"] = number(r.max);
  Json hist = Json::array();
  for (const auto& b : r.histogram) {
    hist.push_back({{"lower", number(b.lower)}, {"upper", number(b.upper)}, {"count", b.count}});
  }
  j["histogram"] = hist;
  Json dens = Json::object();
  for (const auto& [arm, pts] : r.arm_density) {
    Json xs = Json::array(), ds = Json::array();
    for (const auto& p : pts) {
      xs.push_back(number(p.x));
      ds.push_back(number(p.density));
    }
    dens[arm] = {{"x", xs}, {"density", ds}};
  }
  j["arm_density"] = dens;
  return j;
}

Json to_json(const PropensityHistogram& h) {
  Json j;
  j["edges"] = vec(h.edges);
  j["treated"] = h.treated;
  j["control"] = h.control;
  return j;
}

Json to_json(const SurvivalCurve& c) {
  Json j;
  j["times"] = vec(c.times);
  j["survival"] = vec(c.survival);
  j["variance"] = vec(c.variance);
  j["at_risk"] = vec(c.at_risk);
  j["events"] = vec(c.events);
  return j;
}

Json to_json(const ResultsDocument& doc) {
  Json j;
  Json prov;
  Json cfg = config_to_json(doc.request.config);
  cfg["options"] = options_to_json(doc.request.options);
  prov["config"] = cfg;
  prov["seed"] = doc.request.seed;
  prov["software_version"] = kSoftwareVersion;
  j["provenance"] = prov;
  j["sample"] = {{"n_input", doc.sample.n_input},
                 {"n_analyzed", doc.sample.n_analyzed},
                 {"n_dropped", doc.sample.n_dropped}};
  j["overview"] = to_json(doc.overview);
  Json est = Json::array();
  for (const auto& e : doc.estimates) est.push_back(to_json(e));
  j["estimates"] = est;
  j["notes"] = doc.notes;
  Json hist = Json::object();
  for (const auto& [method, h] : doc.propensity_histograms) hist[method] = to_json(h);
  j["propensity_histograms"] = hist;
  Json cv = Json::object(), cal = Json::object();
  for (const auto& c : doc.cv) {
    cv[c.model] = to_json(c.result.summary);
    if (c.result.calibration) cal[c.model] = to_json(*c.result.calibration);
  }
  j["cv_summaries"] = cv;
  j["calibration"] = cal;
  Json ens = Json::object();
  for (const auto& e : doc.ensembles) {
    Json ej;
    ej["learners"] = e.learners;
    ej["weights"] = vec(e.weights);
    ej["cv_risks"] = vec(e.cv_risks);
    ej["meta_risk"] = number(e.meta_risk);
    ens[e.model] = ej;
  }
  j["ensembles"] = ens;
  j["table1"] = to_json(doc.table1);
  if (doc.survival) {
    const auto& s = *doc.survival;
    Json sj;
    sj["time_unit"] = std::string(to_string(s.time_unit));
    sj["cutoff"] = number(s.cutoff);
    sj["km"] = {{"treated", to_json(s.km_treated)}, {"control", to_json(s.km_control)}};
    sj["weighted_km"] = {{"treated", to_json(s.ate.treated)}, {"control", to_json(s.ate.control)}};
    sj["ate_curve"] = curve_json(s.ate.curve);
    Json cox;
    cox["terms"] = {"treatment"};
    cox["beta"] = vec(s.cox.beta);
    cox["hazard_ratios"] = vec(s.cox.hazard_ratios);
    cox["se"] = vec(s.cox.se);
    cox["p_values"] = vec(s.cox.p_values);
    cox["loglik"] = number(s.cox.loglik);
    cox["iterations"] = s.cox.iterations;
    cox["bootstrap_se"] = s.cox_bootstrap_se ? number(*s.cox_bootstrap_se) : Json(nullptr);
    cox["variance_note"] = s.cox.variance_note;
    sj["cox"] = cox;
    j["survival"] = sj;
  } else {
    j["survival"] = nullptr;
  }
  j["warnings"] = doc.warnings;
  return j;
}

std::string forest_csv(const ResultsDocument& doc) {
  std::ostringstream out;
  out << "method,estimand,psi,ci_low,ci_high,p_value\n";
  for (const auto& e : doc.estimates) {
    out << to_string(e.method) << ',' << to_string(e.estimand) << ',' << fmt("%.4f", e.psi) << ','
        << fmt("%.4f", e.ci_low) << ',' << fmt("%.4f", e.ci_high) << ',' << fmt("%.4f", e.p_value) << '\n';
  }
  return out.str();
}

std::string propensity_csv(const ResultsDocument& doc) {
  std::ostringstream out;
  out << "method,bin_lower,bin_upper,treated,control\n";
  for (const auto& [method, h] : doc.propensity_histograms) {
    for (std::size_t b = 0; b < h.treated.size(); ++b) {
      out << method << ',' << fmt("%.4f", h.edges[b]) << ',' << fmt("%.4f", h.edges[b + 1]) << ',' << h.treated[b]
          << ',' << h.control[b] << '\n';
    }
  }
  return out.str();
}

std::string curves_csv(const ResultsDocument& doc) {
  std::ostringstream out;
  out << "curve,time,value,ci_low,ci_high\n";
  if (!doc.survival) return out.str();
  const auto& s = *doc.survival;
  const auto& c = s.ate.curve;
  for (std::size_t i = 0; i < c.time_grid.size(); ++i) {
    out << "ate," << fmt("%.6g", c.time_grid[i]) << ',' << fmt("%.6f", c.ate[i]) << ',' << fmt("%.6f", c.ci_low[i])
        << ',' << fmt("%.6f", c.ci_high[i]) << '\n';
  }
  auto km = [&](const char* name, const SurvivalCurve& curve) {
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
      const double half = kZ975 * std::sqrt(curve.variance[i]);
      out << name << ',' << fmt("%.6g", curve.times[i]) << ',' << fmt("%.6f", curve.survival[i]) << ','
          << fmt("%.6f", std::max(0.0, curve.survival[i] - half)) << ','
          << fmt("%.6f", std::min(1.0, curve.survival[i] + half)) << '\n';
    }
  };
  km("weighted_treated", s.ate.treated);
  km("weighted_control", s.ate.control);
  km("km_treated", s.km_treated);
  km("km_control", s.km_control);
  return out.str();
}

std::string cv_summary_csv(const ResultsDocument& doc) {
  std::ostringstream out;
  out << "model,metric,mean,sd,min,max\n";
  for (const auto& c : doc.cv) {
    const auto& s = c.result.summary;
    out << c.model << ',' << to_string(s.metric) << ',' << fmt("%.2f", s.mean) << ',' << fmt("%.2f", s.sd) << ','
        << fmt("%.2f", s.min) << ',' << fmt("%.2f", s.max) << '\n';
  }
  return out.str();
}

}  // namespace effectbench
