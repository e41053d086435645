#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flood/container.hpp"
#include "flood/dataset.hpp"
#include "flood/errors.hpp"
#include "flood/pipeline.hpp"
#include "support.hpp"

using namespace flood;
using flood::pipeline::RunConfig;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FLOOD_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

/// train_log.csv without its wall-clock column.
std::string strip_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

/// Full small pipeline into `dir`; returns false on any nonzero exit.
bool small_pipeline(const fs::path& dir) {
  const fs::path log = dir / "log.txt";
  fs::create_directories(dir);
  const fs::path sim = dir / "sim", data = dir / "data", model = dir / "model", fc = dir / "fc", ev = dir / "ev",
                 au = dir / "au";
  return cli("--seed 4 --out " + q(sim) + " simulate --rows 10 --cols 10 --relief 0.3 --duration 300 --rain-in-hr 2",
             log) == 0 &&
         cli("--seed 4 --out " + q(data) + " build-dataset --snapshots " + q(sim / "snapshots.fld") + " --terrain " +
                 q(sim / "terrain.fld") + " --lookahead 4 --fraction 0.3 --strata 4",
             log) == 0 &&
         cli("--seed 4 --out " + q(model) + " train --dataset " + q(data / "dataset.fld") +
                 " --depth 2 --width 16 --epochs1 3 --epochs2 2 --batch-size 64 --state-noise-depth 0.001",
             log) == 0 &&
         cli("--seed 4 --out " + q(fc) + " forecast --checkpoint " + q(model / "checkpoint.fld") + " --terrain " +
                 q(sim / "terrain.fld") + " --horizon 300",
             log) == 0 &&
         cli("--seed 4 --out " + q(ev) + " evaluate --reference " + q(sim / "snapshots.fld") + " --forecast " +
                 q(fc / "forecast.fld") + " --cells heldout --dataset " + q(data / "dataset.fld"),
             log) == 0 &&
         cli("--out " + q(au) + " mass-audit --audit " + q(sim / "audit.csv") + " --compare " + q(sim / "audit.csv"),
             log) == 0;
}

}  // namespace

TEST_CASE("unknown configuration keys are rejected") {
  RunConfig c("simulate");
  CHECK_THROWS_AS(c.load_text("rows: 8\nno_such_key: 1\n"), FormatError);
  CHECK_THROWS(c.set("lookahead", "4"));
  CHECK_NOTHROW(RunConfig("build-dataset").set("lookahead", "4"));
  CHECK_THROWS(RunConfig("no-such-command"));

  test::TempDir tmp("cli_keys");
  write(tmp / "bad.cfg", "rows: 8\nbogus: 2\n");
  CHECK(cli("--config " + q(tmp / "bad.cfg") + " --out " + q(tmp / "o") + " simulate --duration 5",
            tmp / "log.txt") != 0);
  CHECK(slurp(tmp / "log.txt").find("bogus") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "o" / "snapshots.fld"));
}

TEST_CASE("flags override the config file which overrides defaults") {
  RunConfig c("simulate");
  CHECK(c.get_size("rows") == 64);
  c.load_text("# comment\nrows: 9\ncols: 7\n");
  CHECK(c.get_size("rows") == 9);
  c.set("rows", "5");
  CHECK(c.get_size("rows") == 5);
  CHECK(c.get_size("cols") == 7);

  test::TempDir tmp("cli_precedence");
  write(tmp / "run.cfg", "rows: 9\ncols: 7\nduration: 10\nseed: 3\n");
  REQUIRE(cli("--config " + q(tmp / "run.cfg") + " --out " + q(tmp.path()) + " simulate --rows 5", tmp / "log.txt") == 0);
  const io::Container s = io::read_file(tmp / "snapshots.fld");
  const SnapshotSeries series = snapshots_from_container(s);
  CHECK(series.rows == 5);
  CHECK(series.cols == 7);
  CHECK(series.frames.size() == 3);
  CHECK(s.manifest.get_int("seed") == 3);
}

TEST_CASE("inputs are validated before any work") {
  test::TempDir tmp("cli_paths");
  CHECK(cli("--out " + q(tmp / "o") + " build-dataset --snapshots " + q(tmp / "missing.fld") + " --terrain " +
                q(tmp / "missing2.fld"),
            tmp / "log.txt") != 0);
  CHECK_FALSE(fs::exists(tmp / "o"));
  CHECK(cli("--out " + q(tmp / "o") + " simulate --formulation xyz --duration 5", tmp / "log.txt") != 0);
  CHECK(cli("--out " + q(tmp / "o") + " evaluate --reference " + q(tmp / "a") + " --forecast " + q(tmp / "b"),
            tmp / "log.txt") != 0);
}

TEST_CASE("an hour of simulation yields 721 snapshots") {
  test::TempDir tmp("cli_721");
  REQUIRE(cli("--out " + q(tmp.path()) + " simulate --formulation de --rain-in-hr 1 --duration 3600 --rows 12 --cols 12",
              tmp / "log.txt") == 0);
  const SnapshotSeries s = snapshots_from_container(io::read_file(tmp / "snapshots.fld"));
  CHECK(s.frames.size() == 721);
  CHECK(s.frames.front().sim_time == 0.0);
  CHECK(s.frames.back().sim_time == 3600.0);
}

TEST_CASE("lake at rest through the command line") {
  test::TempDir tmp("cli_lake");
  std::string grid;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      const double z = 0.05 * ((r * 7 + c * 3) % 11) + (r == 0 || c == 0 || r == 9 || c == 9 ? 1.0 : 0.0);
      grid += std::to_string(z) + (c == 9 ? "\n" : " ");
    }
  }
  write(tmp / "bowl.txt", grid);
  REQUIRE(cli("--out " + q(tmp.path()) + " simulate --formulation fme --terrain-text " + q(tmp / "bowl.txt") +
                  " --rain-in-hr 0 --duration 60 --initial-surface 0.4",
              tmp / "log.txt") == 0);
  const SnapshotSeries s = snapshots_from_container(io::read_file(tmp / "snapshots.fld"));
  REQUIRE(s.frames.size() == 13);
  const auto& first = s.frames.front();
  const auto& last = s.frames.back();
  double wet = 0.0;
  for (std::size_t k = 0; k < first.depth.size(); ++k) {
    wet += first.depth[k];
    CHECK(last.depth[k] == first.depth[k]);
    CHECK(std::abs(last.vel_e[k]) <= 1e-8);
    CHECK(std::abs(last.vel_n[k]) <= 1e-8);
  }
  CHECK(wet > 1.0);
}

TEST_CASE("pipeline artifacts are byte-identical across runs") {
  test::TempDir tmp("cli_determinism");
  REQUIRE(small_pipeline(tmp / "a"));
  REQUIRE(small_pipeline(tmp / "b"));
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), tmp / "a");
    const std::string name = rel.filename().string();
    if (name == "timing.txt" || name == "log.txt") continue;
    const fs::path other = tmp / "b" / rel;
    REQUIRE(fs::exists(other));
    INFO(rel.string());
    if (name == "train_log.csv") {
      CHECK(strip_seconds(slurp(e.path())) == strip_seconds(slurp(other)));
    } else {
      CHECK(slurp(e.path()) == slurp(other));
    }
    ++compared;
  }
  CHECK(compared >= 15);
  const io::Manifest audit = pipeline::read_report(tmp / "a" / "au" / "audit_summary.txt");
  CHECK(audit.get_double("final_mass_ratio") == 1.0);
  CHECK(audit.get_double("max_imbalance_delta") == 0.0);
  CHECK(audit.get_double("closure_error") <= 1e-9);
}

TEST_CASE("containers round-trip byte for byte") {
  test::TempDir tmp("cli_container");
  REQUIRE(small_pipeline(tmp.path()));
  for (const char* f : {"sim/snapshots.fld", "sim/terrain.fld", "data/dataset.fld", "model/checkpoint.fld",
                        "fc/forecast.fld", "ev/score_grids.fld"}) {
    INFO(f);
    const std::vector<std::uint8_t> bytes = io::read_bytes(tmp / f);
    REQUIRE(bytes.size() > 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FLD1");
    const io::Container c = io::decode(bytes);
    CHECK(io::encode(c) == bytes);
    io::write_file(tmp / "copy.fld", c);
    CHECK(io::read_bytes(tmp / "copy.fld") == bytes);
  }
}

TEST_CASE("evaluating the reference against itself") {
  test::TempDir tmp("cli_self");
  REQUIRE(cli("--out " + q(tmp.path()) + " simulate --rows 8 --cols 8 --duration 120", tmp / "log.txt") == 0);
  REQUIRE(cli("--out " + q(tmp / "ev") + " evaluate --reference " + q(tmp / "snapshots.fld") + " --forecast " +
                  q(tmp / "snapshots.fld"),
              tmp / "log.txt") == 0);
  const io::Manifest m = pipeline::read_report(tmp / "ev" / "summary.txt");
  CHECK(m.get_double("rmse_median") == 0.0);
  CHECK(m.get_double("rmse_p99") == 0.0);
  CHECK(m.get_int("cells_scored") == 64);
  if (m.get_int("nnse_count") > 0) CHECK(m.get_double("nnse_median") == 1.0);
}

TEST_CASE("published architecture names select published sizes") {
  test::TempDir tmp("cli_bnn");
  const fs::path log = tmp / "log.txt";
  REQUIRE(cli("--out " + q(tmp / "sim") + " simulate --rows 6 --cols 6 --duration 30 --rain-in-hr 3", log) == 0);
  REQUIRE(cli("--out " + q(tmp / "data") + " build-dataset --snapshots " + q(tmp / "sim" / "snapshots.fld") +
                  " --terrain " + q(tmp / "sim" / "terrain.fld") + " --lookahead 2 --fraction 0.2 --strata 2",
              log) == 0);
  REQUIRE(cli("--out " + q(tmp / "model") + " train --arch bnn --dataset " + q(tmp / "data" / "dataset.fld") +
                  " --epochs1 1 --epochs2 0",
              log) == 0);
  const io::Manifest s = pipeline::read_report(tmp / "model" / "train_summary.txt");
  CHECK(s.get("arch") == "bnn");
  CHECK(s.get_int("depth") == 10);
  CHECK(s.get_int("width") == 1000);
  const io::Container ck = io::read_file(tmp / "model" / "checkpoint.fld");
  CHECK(ck.manifest.get_int("depth") == 10);
  CHECK(ck.manifest.get_int("width") == 1000);
}

TEST_CASE("the full momentum solver costs more than the diffusion wave") {
  test::TempDir tmp("cli_cost");
  const std::string common = " simulate --rain-in-hr 1 --duration 3600";
  REQUIRE(cli("--out " + q(tmp / "de") + common + " --formulation de", tmp / "log.txt") == 0);
  REQUIRE(cli("--out " + q(tmp / "fme") + common + " --formulation fme", tmp / "log.txt") == 0);
  const double de = pipeline::read_report(tmp / "de" / "timing.txt").get_double("seconds");
  const double fme = pipeline::read_report(tmp / "fme" / "timing.txt").get_double("seconds");
  CHECK(fme >= de);
}

TEST_CASE("benchmark reports the mean of repeated runs") {
  test::TempDir tmp("cli_bench");
  REQUIRE(small_pipeline(tmp / "p"));
  REQUIRE(cli("--seed 4 --out " + q(tmp / "b") + " benchmark --checkpoint " + q(tmp / "p" / "model" / "checkpoint.fld") +
                  " --rows 10 --cols 10 --relief 0.3 --rain-in-hr 2 --horizon 300 --lookaheads 2,4",
              tmp / "log.txt") == 0);
  const io::Manifest m = pipeline::read_report(tmp / "b" / "benchmark.txt");
  CHECK(m.get_int("runs") == 3);
  CHECK(m.get_double("speedup") ==
        doctest::Approx(m.get_double("solver_mean_seconds") / m.get_double("surrogate_mean_seconds")));
  CHECK(m.has("sweep_l2_seconds"));
  CHECK(m.has("sweep_l4_seconds"));
  const std::string csv = slurp(tmp / "b" / "benchmark.csv");
  CHECK(csv.rfind("label,lookahead,runs,mean_seconds,samples\n", 0) == 0);
  CHECK(csv.find("solver_de,0,3,") != std::string::npos);
}
