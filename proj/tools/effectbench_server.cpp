// HTTP front end for AnalysisService.

#include <cstdlib>
#include <iostream>

#include "effectbench/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

using namespace effectbench;

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect analysis HTTP service"};
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 1;
  std::string data_dir;
  if (const char* env = std::getenv("EFFECTBENCH_DATA_DIR")) data_dir = env;
  app.add_option("--host", host)->capture_default_str();
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--workers", workers, "analysis worker threads")->capture_default_str();
  app.add_option("--data-dir", data_dir, "persistence root (default: $EFFECTBENCH_DATA_DIR)");
  CLI11_PARSE(app, argc, argv);

  try {
    ServiceOptions opts;
    if (!data_dir.empty()) opts.data_dir = data_dir;
    opts.workers = workers;
    AnalysisService service(opts);
    httplib::Server server;
    register_routes(server, service);
    std::cerr << "listening on " << host << ':' << port << '\n';
    if (!server.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
