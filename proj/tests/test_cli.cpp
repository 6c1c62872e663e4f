#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "spillover/csv.hpp"

using namespace spillover;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = SPILLOVER_CLI_PATH;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_file(const fs::path& p, const std::string& content) {
  write_text_file(p.string(), content);
}

}  // namespace

TEST_CASE("simulate-path runs twice to byte-identical artifacts") {
  TempDir dir("spillover_cli_path");
  write_file(dir.path / "p.toml",
             "[path]\ns0 = 0.2\ndrift_a = 0.05\nsigma = 0.1\nlambda0 = 0.4\njump_mean = 0.3\n"
             "horizon = 5.0\ndt = 0.01\n");
  const std::string base = " simulate-path --config " + (dir.path / "p.toml").string() +
                           " --seed 7 --out ";
  REQUIRE(run(base + (dir.path / "a").string()) == 0);
  REQUIRE(run(base + (dir.path / "b").string()) == 0);
  CHECK(read_text_file((dir.path / "a/path.csv").string()) ==
        read_text_file((dir.path / "b/path.csv").string()));
  CHECK(read_text_file((dir.path / "a/manifest.json").string()) ==
        read_text_file((dir.path / "b/manifest.json").string()));
}

TEST_CASE("unknown config keys name the offender and exit 2") {
  TempDir dir("spillover_cli_badkey");
  write_file(dir.path / "bad.toml", "[path]\nsgima = 0.1\n");
  const int code = run("simulate-path --config " + (dir.path / "bad.toml").string() + " --out " +
                       (dir.path / "out").string());
  CHECK(code == 2);
  // The error text names the key (captured via stderr redirect).
  const std::string cmd = kCli + " simulate-path --config " + (dir.path / "bad.toml").string() +
                          " --out " + (dir.path / "out").string() + " 2> " +
                          (dir.path / "err.txt").string() + " >/dev/null";
  std::system(cmd.c_str());
  const std::string err = read_text_file((dir.path / "err.txt").string());
  CHECK(err.find("sgima") != std::string::npos);
}

TEST_CASE("config parse errors carry line numbers") {
  TempDir dir("spillover_cli_parse");
  write_file(dir.path / "broken.toml", "[path]\nsigma 0.1\n");
  const std::string cmd = kCli + " simulate-path --config " + (dir.path / "broken.toml").string() +
                          " --out " + (dir.path / "out").string() + " 2> " +
                          (dir.path / "err.txt").string() + " >/dev/null";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
  const std::string err = read_text_file((dir.path / "err.txt").string());
  CHECK(err.find("line 2") != std::string::npos);
}

TEST_CASE("unknown subcommand exits with usage error") {
  CHECK(run("frobnicate") != 0);
}

TEST_CASE("panel round-trips through the CSV triplet and detection runs on it") {
  TempDir dir("spillover_cli_panel");
  write_file(dir.path / "panel.toml",
             "[panel]\nn = 30\nt = 8\nnoise_sd = 0.05\n[spillover]\nlambda0 = 0.5\n");
  REQUIRE(run("simulate-panel --config " + (dir.path / "panel.toml").string() + " --seed 3 --out " +
              (dir.path / "p").string()) == 0);
  CHECK(fs::exists(dir.path / "p/outcomes.csv"));
  CHECK(fs::exists(dir.path / "p/treatment.csv"));
  CHECK(fs::exists(dir.path / "p/covariates.csv"));
  CHECK(fs::exists(dir.path / "p/panel.json"));

  // Observation series for the detector: per-period mean outcomes.
  const CsvTable outcomes = read_csv((dir.path / "p/outcomes.csv").string());
  CsvTable series;
  series.header = {"value"};
  for (std::size_t t = 1; t < outcomes.header.size(); ++t) {
    double acc = 0.0;
    for (const auto& row : outcomes.rows) acc += std::stod(row[t]);
    series.rows.push_back({format_double(acc / outcomes.rows.size())});
  }
  write_csv((dir.path / "series.csv").string(), series);
  REQUIRE(run("detect --input " + (dir.path / "series.csv").string() + " --out " +
              (dir.path / "det").string()) == 0);
  const json det = json::parse(read_text_file((dir.path / "det/detect.json").string()));
  CHECK(det.contains("trace"));
}

TEST_CASE("spatial detection reads distance-effect pairs") {
  TempDir dir("spillover_cli_spatial");
  CsvTable pairs;
  pairs.header = {"distance", "effect"};
  for (int i = 0; i < 120; ++i) {
    const double d = 100.0 * (i + 0.5) / 120.0;
    pairs.rows.push_back({format_double(d), format_double(d <= 35.0 ? 0.4 : 0.2)});
  }
  write_csv((dir.path / "pairs.csv").string(), pairs);
  REQUIRE(run("detect --spatial --input " + (dir.path / "pairs.csv").string() + " --out " +
              (dir.path / "det").string()) == 0);
  const json det = json::parse(read_text_file((dir.path / "det/detect.json").string()));
  REQUIRE(!det.at("s_star").is_null());
  CHECK(det.at("s_star").get<double>() >= 30.0);
  CHECK(det.at("s_star").get<double>() <= 40.0);
}

TEST_CASE("montecarlo emits the summary schema and is reproducible") {
  TempDir dir("spillover_cli_mc");
  write_file(dir.path / "sc.toml",
             "[scenario]\nlambda = 0.5\nrho = 0.3\nn = 50\nt = 10\nreps = 10\n"
             "methods = [\"ols\", \"sar\", \"ddpm_boundary\"]\n[ddpm]\nepochs = 40\n");
  const std::string base = " montecarlo --scenario " + (dir.path / "sc.toml").string() +
                           " --seed 5 --threads 2 --out ";
  REQUIRE(run(base + (dir.path / "a").string()) == 0);
  const CsvTable summary = read_csv((dir.path / "a/summary.csv").string());
  for (const char* col : {"lambda", "method", "bias", "rmse", "coverage", "ci_width",
                          "boundary_mae", "boundary_within_5", "power"})
    CHECK(summary.column(col) >= 0);
  CHECK(summary.rows.size() == 3);  // one row per method

  // Determinism across runs and thread counts.
  REQUIRE(run(" montecarlo --scenario " + (dir.path / "sc.toml").string() +
              " --seed 5 --threads 1 --out " + (dir.path / "b").string()) == 0);
  CHECK(read_text_file((dir.path / "a/summary.csv").string()) ==
        read_text_file((dir.path / "b/summary.csv").string()));
  CHECK(read_text_file((dir.path / "a/replications.csv").string()) ==
        read_text_file((dir.path / "b/replications.csv").string()));
}

TEST_CASE("train, estimate and bootstrap run end to end on a small panel") {
  TempDir dir("spillover_cli_train");
  write_file(dir.path / "panel.toml",
             "[panel]\nn = 40\nt = 10\nnoise_sd = 0.08\n[spillover]\nlambda0 = 0.5\n");
  REQUIRE(run("simulate-panel --config " + (dir.path / "panel.toml").string() +
              " --seed 11 --out " + (dir.path / "p").string()) == 0);
  write_file(dir.path / "train.toml",
             "[train]\nepochs = 60\nbatch = 128\nlr = 0.005\nsteps = 50\nhidden = [32, 32]\n");
  REQUIRE(run("train-ddpm --config " + (dir.path / "train.toml").string() + " --panel " +
              (dir.path / "p").string() + " --seed 13 --out " + (dir.path / "m").string()) == 0);
  CHECK(fs::exists(dir.path / "m/model.json"));
  REQUIRE(run("estimate --panel " + (dir.path / "p").string() + " --model " +
              (dir.path / "m/model.json").string() + " --m 2 --seed 17 --out " +
              (dir.path / "e").string()) == 0);
  const json effects = json::parse(read_text_file((dir.path / "e/effects.json").string()));
  CHECK(effects.contains("tau_aggregate"));
  CHECK(effects.contains("ci_aggregate"));

  write_file(dir.path / "boot.toml", "[bootstrap]\nb = 50\nbudget_epochs = 20\nsteps = 30\n");
  REQUIRE(run("bootstrap --config " + (dir.path / "boot.toml").string() + " --panel " +
              (dir.path / "p").string() + " --seed 19 --threads 2 --out " +
              (dir.path / "bb").string()) == 0);
  const json boot = json::parse(read_text_file((dir.path / "bb/bootstrap_summary.json").string()));
  CHECK(boot.contains("tau_pe_ci"));
  const CsvTable draws = read_csv((dir.path / "bb/bootstrap_draws.csv").string());
  CHECK(draws.rows.size() == 50);
}

TEST_CASE("policy subcommand round-trips JSON") {
  TempDir dir("spillover_cli_policy");
  json in;
  in["tau_pe"] = {0.2, 0.1, 0.3, 0.15};
  in["tau_ge"] = {0.1, 0.4, 0.05, 0.2};
  in["crossing_prob"] = {0.9, 0.8, 0.1, 0.5};
  in["cost"] = 0.05;
  in["budget"] = 2;
  write_file(dir.path / "inputs.json", in.dump());
  REQUIRE(run("policy --input " + (dir.path / "inputs.json").string() + " --out " +
              (dir.path / "out").string()) == 0);
  const json out = json::parse(read_text_file((dir.path / "out/policy.json").string()));
  CHECK(out.at("ge_welfare").get<double>() >= out.at("pe_welfare_under_ge").get<double>() - 1e-12);
}

TEST_CASE("report renders scenario artifacts and fails cleanly on an empty directory") {
  TempDir dir("spillover_cli_report");
  CHECK(run("report --dir " + (dir.path / "nothing").string() + " --out " +
            (dir.path / "r0").string()) == 1);

  write_file(dir.path / "sc.toml",
             "[scenario]\nlambda = 0\nrho = 0\nn = 50\nt = 10\nreps = 4\nmethods = [\"ols\"]\n");
  REQUIRE(run("montecarlo --scenario " + (dir.path / "sc.toml").string() + " --seed 23 --out " +
              (dir.path / "runs/cell0").string()) == 0);
  REQUIRE(run("report --dir " + (dir.path / "runs").string() + " --out " +
              (dir.path / "r1").string()) == 0);
  const std::string md = read_text_file((dir.path / "r1/report.md").string());
  CHECK(md.find("| lambda |") != std::string::npos);
  // Rerun renders identical bytes.
  REQUIRE(run("report --dir " + (dir.path / "runs").string() + " --out " +
              (dir.path / "r2").string()) == 0);
  CHECK(md == read_text_file((dir.path / "r2/report.md").string()));
}
