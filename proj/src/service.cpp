#include "effectbench/service.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include "effectbench/error.hpp"
#include "effectbench/rng.hpp"

namespace effectbench {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read file", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& bytes) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write file", tmp.string());
    out << bytes;
    if (!out) throw Error(ErrorKind::io, "cannot write file", tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw Error(ErrorKind::io, "cannot write file", p.string() + ": " + ec.message());
}

JobStatus parse_job_status(const std::string& s) {
  if (s == "pending") return JobStatus::pending;
  if (s == "running") return JobStatus::running;
  if (s == "done") return JobStatus::done;
  return JobStatus::failed;
}

}  // namespace

std::string_view to_string(JobStatus s) noexcept {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

AnalysisService::AnalysisService(ServiceOptions options) : options_(std::move(options)) {
  std::random_device rd;
  id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
              static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
  if (options_.data_dir) {
    std::error_code ec;
    fs::create_directories(*options_.data_dir / "datasets", ec);
    fs::create_directories(*options_.data_dir / "jobs", ec);
    if (ec) throw Error(ErrorKind::io, "cannot create data directory", options_.data_dir->string());
    load_persisted();
  }
  const int workers = std::max(1, options_.workers);
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker_loop(); });
}

AnalysisService::~AnalysisService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::string AnalysisService::fresh_id(const char* prefix) {
  // Caller holds mu_.
  std::string id;
  do {
    id_state_ = mix_seed(id_state_);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id_state_));
    id = std::string(prefix) + buf;
  } while (sessions_.contains(id) || jobs_.contains(id));
  return id;
}

std::shared_ptr<const Session> AnalysisService::upload(std::string bytes) {
  auto session = std::make_shared<Session>();
  session->raw = parse_csv(bytes);
  session->created_at = utc_now();
  std::lock_guard lock(mu_);
  session->dataset_id = fresh_id("ds_");
  if (options_.data_dir) {
    const auto dir = *options_.data_dir / "datasets";
    write_file_atomic(dir / (session->dataset_id + ".csv"), bytes);
    write_file_atomic(dir / (session->dataset_id + ".json"), dump(Json{{"created_at", session->created_at}}));
  }
  sessions_[session->dataset_id] = session;
  return session;
}

std::shared_ptr<const Session> AnalysisService::dataset(const std::string& dataset_id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(dataset_id);
  if (it == sessions_.end()) throw Error(ErrorKind::not_found, "unknown dataset", dataset_id);
  return it->second;
}

std::string AnalysisService::start(const std::string& dataset_id, AnalysisRequest request) {
  const auto session = dataset(dataset_id);
  const auto cfg = validate_config(session->raw, request.config);
  build_views(session->raw, cfg);

  std::lock_guard lock(mu_);
  const auto id = fresh_id("job_");
  Job job;
  job.snapshot.job_id = id;
  job.snapshot.dataset_id = dataset_id;
  job.request = std::move(request);
  jobs_.emplace(id, std::move(job));
  queue_.push_back(id);
  queue_cv_.notify_one();
  return id;
}

JobSnapshot AnalysisService::status(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorKind::not_found, "unknown job", job_id);
  return it->second.snapshot;
}

std::shared_ptr<const std::string> AnalysisService::results(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorKind::not_found, "unknown job", job_id);
  const auto& snap = it->second.snapshot;
  if (snap.status != JobStatus::done) {
    throw Error(ErrorKind::conflict, "job is not done", "status " + std::string(to_string(snap.status)));
  }
  return it->second.result;
}

JobSnapshot AnalysisService::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  const auto finished = [&] {
    const auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw Error(ErrorKind::not_found, "unknown job", job_id);
    const auto s = it->second.snapshot.status;
    return s == JobStatus::done || s == JobStatus::failed;
  };
  job_changed_.wait_for(lock, timeout, finished);
  return jobs_.at(job_id).snapshot;
}

void AnalysisService::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    run_job(id);
  }
}

void AnalysisService::run_job(const std::string& job_id) {
  AnalysisRequest request;
  std::shared_ptr<const Session> session;
  {
    std::lock_guard lock(mu_);
    auto& job = jobs_.at(job_id);
    job.snapshot.status = JobStatus::running;
    job.snapshot.stage = Stage::parsing;
    request = job.request;
    session = sessions_.at(job.snapshot.dataset_id);
  }
  job_changed_.notify_all();

  std::shared_ptr<const std::string> result;
  std::optional<std::pair<std::string, std::string>> failure;
  try {
    const auto doc = run_analysis(session->raw, request, [&](Stage s) {
      {
        std::lock_guard lock(mu_);
        jobs_.at(job_id).snapshot.stage = s;
      }
      job_changed_.notify_all();
    });
    result = std::make_shared<const std::string>(dump(to_json(doc)));
  } catch (const Error& e) {
    std::string detail = e.what();
    if (!e.detail().empty()) detail += ": " + e.detail();
    failure.emplace(to_string(e.kind()), detail);
  } catch (const std::exception& e) {
    failure.emplace("internal_error", e.what());
  }

  {
    std::lock_guard lock(mu_);
    auto& job = jobs_.at(job_id);
    if (failure) {
      job.snapshot.status = JobStatus::failed;
      job.snapshot.error_code = failure->first;
      job.snapshot.error_detail = failure->second;
    } else {
      job.result = result;
      job.snapshot.status = JobStatus::done;
    }
    if (options_.data_dir) {
      try {
        persist_job(job);
      } catch (const Error&) {
        // The in-memory job is still served; persistence is best effort.
      }
    }
  }
  job_changed_.notify_all();
}

void AnalysisService::persist_job(const Job& job) const {
  const auto dir = *options_.data_dir / "jobs";
  Json meta;
  meta["job_id"] = job.snapshot.job_id;
  meta["dataset_id"] = job.snapshot.dataset_id;
  meta["status"] = std::string(to_string(job.snapshot.status));
  meta["seed"] = job.request.seed;
  Json cfg = config_to_json(job.request.config);
  cfg["options"] = options_to_json(job.request.options);
  meta["config"] = cfg;
  if (job.snapshot.error_code) meta["error_code"] = *job.snapshot.error_code;
  if (job.snapshot.error_detail) meta["error_detail"] = *job.snapshot.error_detail;
  if (job.result) write_file_atomic(dir / (job.snapshot.job_id + ".results.json"), *job.result);
  write_file_atomic(dir / (job.snapshot.job_id + ".json"), dump(meta));
}

void AnalysisService::load_persisted() {
  const auto ds_dir = *options_.data_dir / "datasets";
  for (const auto& entry : fs::directory_iterator(ds_dir)) {
    if (entry.path().extension() != ".csv") continue;
    try {
      auto session = std::make_shared<Session>();
      session->dataset_id = entry.path().stem().string();
      session->raw = parse_csv(read_file(entry.path()));
      auto meta_path = entry.path();
      meta_path.replace_extension(".json");
      if (fs::exists(meta_path)) session->created_at = Json::parse(read_file(meta_path)).value("created_at", "");
      sessions_[session->dataset_id] = session;
    } catch (const std::exception&) {
      // Unreadable leftovers are skipped.
    }
  }
  const auto job_dir = *options_.data_dir / "jobs";
  for (const auto& entry : fs::directory_iterator(job_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".json" || name.ends_with(".results.json")) continue;
    try {
      const auto meta = Json::parse(read_file(entry.path()));
      Job job;
      job.snapshot.job_id = meta.at("job_id").get<std::string>();
      job.snapshot.dataset_id = meta.at("dataset_id").get<std::string>();
      job.snapshot.status = parse_job_status(meta.at("status").get<std::string>());
      if (job.snapshot.status != JobStatus::done && job.snapshot.status != JobStatus::failed) continue;
      if (!sessions_.contains(job.snapshot.dataset_id)) continue;
      try {
        job.request = request_from_json(meta.at("config"), meta.at("seed").get<std::uint64_t>());
      } catch (const Error&) {
        // A job that failed on its own options still reports that failure.
        if (job.snapshot.status != JobStatus::failed) throw;
      }
      if (meta.contains("error_code")) job.snapshot.error_code = meta["error_code"].get<std::string>();
      if (meta.contains("error_detail")) job.snapshot.error_detail = meta["error_detail"].get<std::string>();
      if (job.snapshot.status == JobStatus::done) {
        job.result = std::make_shared<const std::string>(
            read_file(job_dir / (job.snapshot.job_id + ".results.json")));
      }
      jobs_[job.snapshot.job_id] = std::move(job);
    } catch (const std::exception&) {
    }
  }
}

}  // namespace effectbench
