#pragma once

// Dataset sessions and the analysis job queue behind the HTTP API.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "effectbench/error.hpp"
#include "effectbench/pipeline.hpp"
#include "effectbench/table.hpp"

namespace httplib {
class Server;
}

namespace effectbench {

struct Session {
  std::string dataset_id;
  RawTable raw;
  std::string created_at;  // UTC, ISO 8601
};

enum class JobStatus { pending, running, done, failed };

std::string_view to_string(JobStatus s) noexcept;

struct JobSnapshot {
  std::string job_id;
  std::string dataset_id;
  JobStatus status = JobStatus::pending;
  std::optional<Stage> stage;
  std::optional<std::string> error_code;
  std::optional<std::string> error_detail;
};

struct ServiceOptions {
  std::optional<std::filesystem::path> data_dir;  // persistence root; nullopt keeps everything in memory
  int workers = 1;
};

class AnalysisService {
 public:
  explicit AnalysisService(ServiceOptions options = {});
  ~AnalysisService();
  AnalysisService(const AnalysisService&) = delete;
  AnalysisService& operator=(const AnalysisService&) = delete;

  std::shared_ptr<const Session> upload(std::string bytes);
  std::shared_ptr<const Session> dataset(const std::string& dataset_id) const;

  /// Validates the request against the dataset, then enqueues it.
  std::string start(const std::string& dataset_id, AnalysisRequest request);
  JobSnapshot status(const std::string& job_id) const;
  /// Serialized ResultsDocument. conflict unless the job is done.
  std::shared_ptr<const std::string> results(const std::string& job_id) const;

  /// Blocks until the job leaves pending/running or the timeout passes.
  JobSnapshot wait(const std::string& job_id, std::chrono::milliseconds timeout) const;

 private:
  struct Job {
    JobSnapshot snapshot;
    AnalysisRequest request;
    std::shared_ptr<const std::string> result;
  };

  void worker_loop();
  void run_job(const std::string& job_id);
  void persist_job(const Job& job) const;
  void load_persisted();
  std::string fresh_id(const char* prefix);

  ServiceOptions options_;
  mutable std::mutex mu_;
  mutable std::condition_variable job_changed_;
  std::condition_variable queue_cv_;
  std::map<std::string, std::shared_ptr<const Session>> sessions_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::uint64_t id_state_;
  std::vector<std::thread> threads_;
};

/// Installs every route of the HTTP API on `server`.
void register_routes(httplib::Server& server, AnalysisService& service);

/// HTTP status for an error kind.
int http_status(ErrorKind kind) noexcept;

/// {code, message, detail}
Json error_body(const std::string& code, const std::string& message, const std::string& detail);

}  // namespace effectbench
