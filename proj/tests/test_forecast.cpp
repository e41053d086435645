#include <cmath>
#include <limits>
#include <map>

#include "doctest.h"
#include "flood/errors.hpp"
#include "flood/forecast.hpp"

using namespace flood;

namespace {

/// Repeats the input state for every lookahead step.
class IdentityMock : public Predictor {
 public:
  IdentityMock(std::size_t l, double dt) : l_(l), dt_(dt) {}
  std::size_t lookahead() const override { return l_; }
  double dt() const override { return dt_; }
  std::string id() const override { return "identity"; }
  void predict(std::span<const float> in, std::size_t batch, std::vector<float>& out) override {
    const std::size_t ni = input_length(l_), no = output_length(l_);
    out.assign(batch * no, 0.f);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t k = 0; k < l_; ++k) std::copy_n(in.data() + r * ni, 5, out.data() + r * no + k * 5);
    ++calls;
  }
  std::size_t calls = 0;

 private:
  std::size_t l_;
  double dt_;
};

/// Solver-exact oracle for rollouts starting at frame 0. Pass p must be fed
/// the solver state at frame p·l; it returns frames p·l+1 .. p·l+l.
class LookupMock : public Predictor {
 public:
  LookupMock(const SnapshotSeries& s, const TerrainGrid& t, std::size_t l) : series_(s), l_(l), dt_(s.spacing()) {
    const auto attrs = attribute_table(t);
    for (std::size_t c = 0; c < t.cell_count(); ++c) {
      const bool fresh = cells_.emplace(std::vector<float>(attrs.begin() + c * 49, attrs.begin() + (c + 1) * 49), c).second;
      REQUIRE(fresh);
    }
  }
  std::size_t lookahead() const override { return l_; }
  double dt() const override { return dt_; }
  std::string id() const override { return "lookup"; }
  void predict(std::span<const float> in, std::size_t batch, std::vector<float>& out) override {
    const std::size_t ni = input_length(l_), base = passes_++ * l_;
    out.clear();
    for (std::size_t r = 0; r < batch; ++r) {
      const float* row = in.data() + r * ni;
      const auto it = cells_.find(std::vector<float>(row + 5 + 2 * l_, row + ni));
      REQUIRE(it != cells_.end());
      REQUIRE(std::vector<float>(row, row + 5) == state(series_.frames[base], it->second));
      for (std::size_t k = 1; k <= l_; ++k) {
        const auto st = state(series_.frames[base + k], it->second);
        out.insert(out.end(), st.begin(), st.end());
      }
    }
  }
  void restart() { passes_ = 0; }

  static std::vector<float> state(const Snapshot& s, std::size_t c) {
    return {s.depth[c], s.vel_n[c], s.vel_s[c], s.vel_e[c], s.vel_w[c]};
  }

 private:
  const SnapshotSeries& series_;
  std::size_t l_;
  double dt_;
  std::size_t passes_ = 0;
  std::map<std::vector<float>, std::size_t> cells_;
};

/// Emits NaN on the given pass.
class NanMock : public IdentityMock {
 public:
  NanMock(std::size_t l, std::size_t bad) : IdentityMock(l, 5.0), bad_(bad) {}
  void predict(std::span<const float> in, std::size_t batch, std::vector<float>& out) override {
    const std::size_t pass = calls;
    IdentityMock::predict(in, batch, out);
    if (pass == bad_) out[3] = std::numeric_limits<float>::quiet_NaN();
  }

 private:
  std::size_t bad_;
};

TerrainGrid synthetic(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  SyntheticTerrainParams p;
  p.rows = rows;
  p.cols = cols;
  p.relief_amplitude = 0.5;
  p.seed = seed;
  return generate_synthetic_terrain(p);
}

SimulationResult small_run(const TerrainGrid& t, double duration) {
  SolverConfig c = SolverConfig::defaults(Formulation::DiffusionWave);
  c.rainfall_intensity = 2 * kInchPerHour;
  c.duration = duration;
  return run_simulation(t, c);
}

}  // namespace

TEST_CASE("pass counts") {
  CHECK(pass_count(3600.0, 12, 5.0) == 60);
  CHECK(pass_count(60.0, 12, 5.0) == 1);
  CHECK(pass_count(61.0, 12, 5.0) == 2);
  CHECK(pass_count(3600.0, 24, 5.0) == 30);
  CHECK(pass_count(3600.0, 5, 5.0) == 144);
  CHECK_THROWS(pass_count(0.0, 12, 5.0));
  CHECK_THROWS(pass_count(10.0, 0, 5.0));
}

TEST_CASE("an hour at l=12 emits 720 states over 60 passes") {
  const TerrainGrid t = synthetic(4, 4, 1);
  IdentityMock m(12, 5.0);
  const CellState s0 = {0.02f, 0.001f, -0.002f, 0.f, 0.003f};
  const ForecastSeries f = rollout(m, t, 5, s0, 100.0, RainSchedule::constant(0.0), 3600.0);
  CHECK(f.pass_count == 60);
  CHECK(m.calls == 60);
  REQUIRE(f.states.size() == 720);
  for (std::size_t k = 0; k < 720; ++k) {
    CHECK(f.times[k] == doctest::Approx(100.0 + 5.0 * (k + 1)));
    CHECK(f.states[k] == s0);
  }
  CHECK(f.clamp_count == 0);
  CHECK(f.cell_index == 5);
  CHECK(f.model_id == "identity");
}

TEST_CASE("horizons truncate the last pass") {
  const TerrainGrid t = synthetic(3, 3, 2);
  IdentityMock m(12, 5.0);
  const ForecastSeries one = rollout(m, t, 0, {}, 0.0, RainSchedule::constant(0.0), 60.0);
  CHECK(one.pass_count == 1);
  CHECK(one.states.size() == 12);
  const ForecastSeries part = rollout(m, t, 0, {}, 0.0, RainSchedule::constant(0.0), 70.0);
  CHECK(part.pass_count == 2);
  CHECK(part.states.size() == 14);
}

TEST_CASE("negative depths are clamped before emission and feedback") {
  const TerrainGrid t = synthetic(3, 3, 2);
  IdentityMock m(3, 5.0);
  const ForecastSeries f = rollout(m, t, 4, {-0.5f, 0.f, 0.f, 0.f, 0.f}, 0.0, RainSchedule::constant(0.0), 30.0);
  for (const auto& s : f.states) CHECK(s[0] == 0.f);
  CHECK(f.clamp_count == 0);  // the initial state is clamped on entry
}

TEST_CASE("oracle model composes into the solver series") {
  const TerrainGrid t = synthetic(6, 6, 3);
  const auto sim = small_run(t, 300.0);
  for (std::size_t l : {1u, 4u, 12u}) {
    CAPTURE(l);
    LookupMock oracle(sim.snapshots, t, l);
    const double horizon = 5.0 * static_cast<double>((60 / l) * l);
    for (std::size_t cell : {0u, 14u, 35u}) {
      oracle.restart();
      const auto s0 = LookupMock::state(sim.snapshots.frames[0], cell);
      const ForecastSeries f =
          rollout(oracle, t, cell, {s0[0], s0[1], s0[2], s0[3], s0[4]}, 0.0, RainSchedule::constant(2 * kInchPerHour), horizon);
      REQUIRE(f.states.size() == (60 / l) * l);
      for (std::size_t k = 0; k < f.states.size(); ++k) {
        const auto ref = LookupMock::state(sim.snapshots.frames[k + 1], cell);
        CHECK(std::vector<float>(f.states[k].begin(), f.states[k].end()) == ref);
      }
    }
    oracle.restart();
    const ForecastCube cube = batch_rollout(oracle, t, sim.snapshots.frames[0], RainSchedule::constant(2 * kInchPerHour), horizon);
    const SnapshotSeries emitted = cube.to_snapshots();
    REQUIRE(emitted.frames.size() == (60 / l) * l);
    for (std::size_t k = 0; k < emitted.frames.size(); ++k) {
      CHECK(emitted.frames[k].depth == sim.snapshots.frames[k + 1].depth);
      CHECK(emitted.frames[k].vel_e == sim.snapshots.frames[k + 1].vel_e);
      CHECK(emitted.frames[k].sim_time == doctest::Approx(sim.snapshots.frames[k + 1].sim_time));
    }
  }
}

TEST_CASE("batched rollout matches per-cell rollout exactly") {
  const TerrainGrid t1(RasterD(1, 1, 0.2), RasterD(1, 1, 0.04), 1.0);
  ModelSpec spec;
  spec.depth = 2;
  spec.width = 16;
  spec.lookahead = 3;
  const Surrogate s = Surrogate::create(spec, InputScaler::identity(spec.input_len()), 5.0, 9);
  Snapshot init;
  init.depth = Raster<float>(1, 1, 0.01f);
  init.vel_n = init.vel_s = init.vel_e = init.vel_w = Raster<float>(1, 1, 0.f);
  SurrogatePredictor pa(s), pb(s);
  const auto rain = RainSchedule::constant(kInchPerHour);
  const ForecastSeries single = rollout(pa, t1, 0, {0.01f, 0.f, 0.f, 0.f, 0.f}, 0.0, rain, 90.0);
  const ForecastCube cube = batch_rollout(pb, t1, init, rain, 90.0);
  REQUIRE(cube.times == single.times);
  for (std::size_t k = 0; k < single.states.size(); ++k) CHECK(cube.state(k, 0) == single.states[k]);
  CHECK(cube.pass_count == single.pass_count);

  const TerrainGrid t = synthetic(5, 4, 4);
  const auto sim = small_run(t, 30.0);
  SurrogatePredictor pc(s), pd(s);
  const ForecastCube all = batch_rollout(pc, t, sim.snapshots.frames.back(), rain, 45.0);
  for (std::size_t cell : {0u, 7u, 19u}) {
    const auto s0 = LookupMock::state(sim.snapshots.frames.back(), cell);
    const ForecastSeries f = rollout(pd, t, cell, {s0[0], s0[1], s0[2], s0[3], s0[4]}, sim.snapshots.frames.back().sim_time, rain, 45.0);
    for (std::size_t k = 0; k < f.states.size(); ++k) CHECK(all.state(k, cell) == f.states[k]);
  }
}

TEST_CASE("deterministic models give identical forecasts") {
  const TerrainGrid t = synthetic(4, 4, 5);
  ModelSpec spec;
  spec.depth = 1;
  spec.width = 8;
  spec.lookahead = 4;
  const Surrogate s = Surrogate::create(spec, InputScaler::identity(spec.input_len()), 5.0, 2);
  const auto sim = small_run(t, 20.0);
  SurrogatePredictor a(s), b(s);
  const auto rain = RainSchedule::constant(kInchPerHour);
  const ForecastCube x = batch_rollout(a, t, sim.snapshots.frames.back(), rain, 60.0);
  const ForecastCube y = batch_rollout(b, t, sim.snapshots.frames.back(), rain, 60.0);
  CHECK(x.states == y.states);
  CHECK(x.times == y.times);
  CHECK(x.pass_count == 3);
  CHECK(x.lookahead == 4);
}

TEST_CASE("non-finite model output is a rollout error carrying the pass") {
  const TerrainGrid t = synthetic(3, 3, 6);
  NanMock m(4, 2);
  try {
    (void)rollout(m, t, 1, {}, 0.0, RainSchedule::constant(0.0), 100.0);
    FAIL("expected RolloutError");
  } catch (const RolloutError& e) {
    CHECK(e.pass() == 2);
  }
  IdentityMock ok(4, 5.0);
  CHECK_THROWS_AS(rollout(ok, t, 9, {}, 0.0, RainSchedule::constant(0.0), 10.0), IndexError);
}

TEST_CASE("BNN ensembles have spread and reproducible means") {
  const TerrainGrid t = synthetic(3, 3, 7);
  ModelSpec spec;
  spec.kind = ModelKind::Bnn;
  spec.depth = 1;
  spec.width = 8;
  spec.lookahead = 2;
  spec.bnn_sigma_init = -2.0;
  const Surrogate s = Surrogate::create(spec, InputScaler::identity(spec.input_len()), 5.0, 3);
  const auto sim = small_run(t, 20.0);
  const auto rain = RainSchedule::constant(kInchPerHour);
  const EnsembleCube a = ensemble_rollout(s, t, sim.snapshots.frames.back(), rain, 20.0, 4, 11);
  const EnsembleCube b = ensemble_rollout(s, t, sim.snapshots.frames.back(), rain, 20.0, 4, 11);
  CHECK(a.members == 4);
  CHECK(a.mean.states == b.mean.states);
  CHECK(a.stddev.size() == a.mean.states.size());
  double spread = 0.0;
  for (float v : a.stddev) spread = std::max(spread, static_cast<double>(v));
  CHECK(spread > 0.0);
}

TEST_CASE("forecast cube converts to a snapshot series") {
  const TerrainGrid t = synthetic(3, 4, 8);
  IdentityMock m(2, 5.0);
  const auto sim = small_run(t, 20.0);
  const ForecastCube c = batch_rollout(m, t, sim.snapshots.frames.back(), RainSchedule::constant(0.0), 20.0);
  const SnapshotSeries s = c.to_snapshots();
  CHECK(s.rows == 3);
  CHECK(s.cols == 4);
  REQUIRE(s.frames.size() == 4);
  CHECK(s.frames[0].depth == sim.snapshots.frames.back().depth);
  CHECK(s.frames[3].sim_time == doctest::Approx(40.0));
  CHECK(c.describe().get_int("pass_count") == 2);
}
