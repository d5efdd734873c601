#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kBin = POC_LAB_BIN;

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / "poc_lab_cli_tests";
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cmd(const std::string& args, int threads = 1) {
  const std::string cmd = "POC_LAB_THREADS=" + std::to_string(threads) + " \"" + kBin + "\" " +
                          args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string run_config(const fs::path& dir, const std::string& out_name) {
  return "name = \"cli_smoke\"\n"
         "output_dir = \"" + (dir / out_name).string() + "\"\n"
         "[problem]\n"
         "d = 6\n"
         "hermite = [0, 0, 0, 0, 1]\n"
         "target = \"single_index\"\n"
         "[schedule]\n"
         "eta = 0.01\n"
         "steps = 20\n"
         "record_every = 5\n"
         "width = 16\n"
         "[seeds]\n"
         "init = 11\n";
}

}  // namespace

TEST_CASE("run subcommand writes a complete output directory") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "run.toml";
  write_file(cfg, run_config(dir, "run_out"));
  REQUIRE(run_cmd("run --config " + cfg.string()) == 0);
  for (const char* f : {"metrics.csv", "loss.svg", "alignment.svg", "manifest.json"})
    CHECK(fs::exists(dir / "run_out" / f));

  const std::string first = slurp(dir / "run_out" / "metrics.csv");
  CHECK(first.rfind("step,time,loss_pop,loss_emp,mean_alignment", 0) == 0);
  REQUIRE(run_cmd("run --config " + cfg.string()) == 0);
  CHECK(slurp(dir / "run_out" / "metrics.csv") == first);  // reruns are byte-identical

  // a different seed changes the trajectory
  REQUIRE(run_cmd("run --config " + cfg.string() + " --seed 99") == 0);
  CHECK(slurp(dir / "run_out" / "metrics.csv") != first);
}

TEST_CASE("thread count never changes the numbers") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "threads.toml";
  write_file(cfg, run_config(dir, "thr_out"));
  REQUIRE(run_cmd("run --config " + cfg.string(), 1) == 0);
  const std::string single = slurp(dir / "thr_out" / "metrics.csv");
  REQUIRE(run_cmd("run --config " + cfg.string(), 4) == 0);
  CHECK(slurp(dir / "thr_out" / "metrics.csv") == single);
}

TEST_CASE("couple subcommand and report pipeline") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "couple.toml";
  write_file(cfg, "name = \"cli_couple\"\n"
                  "output_dir = \"" + (dir / "couple_out").string() + "\"\n"
                  "[problem]\n"
                  "d = 6\n"
                  "[schedule]\n"
                  "eta = 0.01\n"
                  "steps = 10\n"
                  "record_every = 5\n"
                  "[coupling]\n"
                  "widths = [8, 16]\n"
                  "proxy = 64\n");
  REQUIRE(run_cmd("couple --config " + cfg.string()) == 0);
  for (const char* f : {"width_8.csv", "width_16.csv", "hist_8.csv", "risk.svg",
                        "scaled_func_error.svg", "manifest.json"})
    CHECK(fs::exists(dir / "couple_out" / f));

  REQUIRE(run_cmd("report --dir " + (dir / "couple_out").string()) == 0);
  CHECK(fs::exists(dir / "couple_out" / "report.json"));
  const std::string rep = slurp(dir / "couple_out" / "report.json");
  CHECK(rep.find("scaled_func_error_final_ratio") != std::string::npos);
}

TEST_CASE("reduce subcommand writes the escape-time sweep") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "reduce.toml";
  write_file(cfg, "name = \"cli_reduce\"\n"
                  "output_dir = \"" + (dir / "reduce_out").string() + "\"\n"
                  "[reduced]\n"
                  "d_list = [8]\n"
                  "ensemble = 128\n");
  REQUIRE(run_cmd("reduce --config " + cfg.string() + " --d 8,16 --delta 0.4") == 0);
  CHECK(fs::exists(dir / "reduce_out" / "escape_times.csv"));
  CHECK(fs::exists(dir / "reduce_out" / "reduced_d8.csv"));
  CHECK(fs::exists(dir / "reduce_out" / "reduced_d16.csv"));
  const std::string table = slurp(dir / "reduce_out" / "escape_times.csv");
  CHECK(table.rfind("d,kstar,delta,T", 0) == 0);
}

TEST_CASE("diagnose subcommand writes hessian and stability tables") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "diag.toml";
  write_file(cfg, "name = \"cli_diag\"\n"
                  "output_dir = \"" + (dir / "diag_out").string() + "\"\n"
                  "[problem]\n"
                  "d = 5\n"
                  "[schedule]\n"
                  "eta = 0.01\n"
                  "steps = 8\n"
                  "width = 6\n");
  REQUIRE(run_cmd("diagnose --config " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "diag_out" / "local_hessian.csv"));
  CHECK(fs::exists(dir / "diag_out" / "stability.csv"));
  const std::string manifest = slurp(dir / "diag_out" / "manifest.json");
  CHECK(manifest.find("j_max") != std::string::npos);
}

TEST_CASE("potential subcommand writes both report formats") {
  const fs::path dir = scratch();
  const fs::path cfg = dir / "pot.toml";
  write_file(cfg, "name = \"cli_pot\"\n"
                  "output_dir = \"" + (dir / "pot_out").string() + "\"\n"
                  "[problem]\n"
                  "d = 5\n"
                  "[schedule]\n"
                  "eta = 0.01\n"
                  "steps = 10\n"
                  "width = 12\n");
  REQUIRE(run_cmd("potential --config " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "pot_out" / "potential_report.json"));
  CHECK(fs::exists(dir / "pot_out" / "potential_report.txt"));
  const std::string rep = slurp(dir / "pot_out" / "potential_report.json");
  CHECK(rep.find("\"l1_passes\": 100") != std::string::npos);
}

TEST_CASE("malformed configs exit with the config error code") {
  const fs::path dir = scratch();
  const fs::path missing = dir / "no_such.toml";
  CHECK(run_cmd("run --config " + missing.string()) == 2);

  const fs::path bad = dir / "bad.toml";
  write_file(bad, "[schedule]\neta = 5.0\n");
  CHECK(run_cmd("run --config " + bad.string()) == 2);

  const fs::path bad2 = dir / "bad2.toml";
  write_file(bad2, "[problem\nd = 4\n");
  CHECK(run_cmd("run --config " + bad2.string()) == 2);

  CHECK(run_cmd("report --dir " + (dir / "empty_dir").string()) == 2);
}
