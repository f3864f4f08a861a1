// Headless run of the full analysis: CSV + config JSON in, results files out.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "effectbench/error.hpp"
#include "effectbench/pipeline.hpp"

namespace fs = std::filesystem;
using namespace effectbench;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::config, "cannot read file", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
  if (!out) throw Error(ErrorKind::io, "cannot write file", p.string());
}

int run(const std::string& data, const std::string& config, const std::string& out_dir, std::uint64_t seed) {
  const auto table = parse_csv(slurp(data));
  Json cfg_json;
  try {
    cfg_json = Json::parse(slurp(config));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::config, "config is not valid JSON", e.what());
  }
  const auto request = request_from_json(cfg_json, seed);
  const auto doc = run_analysis(table, request, [](Stage s) { std::cerr << "stage: " << to_string(s) << '\n'; });

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create output directory", out_dir);
  const fs::path out(out_dir);
  write(out / "results.json", dump(to_json(doc)));
  write(out / "table1.tsv", table1_tsv(doc.table1));
  write(out / "forest.csv", forest_csv(doc));
  write(out / "propensity_histograms.csv", propensity_csv(doc));
  write(out / "cv_summary.csv", cv_summary_csv(doc));
  if (doc.survival) write(out / "curves.csv", curves_csv(doc));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect estimation from a CSV file"};
  std::string data, config, out_dir;
  std::uint64_t seed = 1;
  bool print_default = false;
  app.add_option("--data", data, "input CSV file");
  app.add_option("--config", config, "analysis config JSON");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_flag("--print-default-config", print_default, "print the default config JSON and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (print_default) {
    std::cout << dump(default_config_json());
    return 0;
  }
  if (data.empty() || config.empty() || out_dir.empty()) {
    std::cerr << "error: --data, --config and --out are required\n";
    return kExitValidation;
  }
  try {
    return run(data, config, out_dir, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (!e.detail().empty()) std::cerr << " (" << e.detail() << ')';
    std::cerr << '\n';
    const bool validation = e.kind() == ErrorKind::parse || e.kind() == ErrorKind::config ||
                            e.kind() == ErrorKind::not_found;
    return validation ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
