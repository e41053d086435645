#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "flood/errors.hpp"
#include "flood/train.hpp"

using namespace flood;

namespace {

/// Small DE run on rough terrain, sampled into a dataset.
const Dataset& small_dataset() {
  static const Dataset d = [] {
    SyntheticTerrainParams tp;
    tp.rows = 12;
    tp.cols = 12;
    tp.relief_amplitude = 0.5;
    tp.seed = 3;
    const TerrainGrid t = generate_synthetic_terrain(tp);
    SolverConfig c = SolverConfig::defaults(Formulation::DiffusionWave);
    c.rainfall_intensity = 2 * kInchPerHour;
    c.duration = 300.0;
    const auto sim = run_simulation(t, c);
    DatasetParams p;
    p.lookahead = 4;
    p.fraction = 0.3;
    p.strata = 5;
    return build_dataset(sim.snapshots, t, RainSchedule::constant(c.rainfall_intensity), p);
  }();
  return d;
}

ModelSpec mlp(std::size_t depth, std::size_t width, std::size_t l = 4) {
  ModelSpec s;
  s.kind = ModelKind::Mlp;
  s.depth = depth;
  s.width = width;
  s.lookahead = l;
  return s;
}

TrainConfig quick(std::size_t e1 = 4, std::size_t e2 = 2) {
  TrainConfig c;
  c.batch_size = 64;
  c.epochs_phase1 = e1;
  c.epochs_phase2 = e2;
  c.seed = 7;
  return c;
}

RecordSet permuted(const RecordSet& r, std::uint64_t seed) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return r.subset(idx);
}

std::vector<std::uint64_t> hashes(const TrainLog& log) {
  std::vector<std::uint64_t> h;
  for (const auto& e : log.epochs) h.push_back(e.param_hash);
  return h;
}

}  // namespace

TEST_CASE("MLP overfits 100 records") {
  const Dataset& full = small_dataset();
  std::vector<std::size_t> pick;
  for (std::size_t i = 0; i < 100; ++i) pick.push_back(i * (full.train.size() / 100));
  Dataset d = full;
  d.train = full.train.subset(pick);
  d.validation = d.train;
  d.scaler = InputScaler::fit(d.train);
  TrainConfig c;
  c.batch_size = 100;
  c.epochs_phase1 = 5000;
  c.epochs_phase2 = 0;
  c.target_mode = TargetMode::Absolute;
  const TrainResult r = train_model(mlp(2, 64), d, c);
  double best = 1e300;
  for (const auto& e : r.log.epochs) best = std::min(best, e.loss);
  CHECK(best <= 1e-6);
  CHECK(evaluate_records(r.model, d.train).mse <= 1e-6);
  CHECK(r.log.epochs.size() == 5000);
}

TEST_CASE("same seed gives an identical training log") {
  const Dataset& d = small_dataset();
  const TrainResult a = train_model(mlp(2, 16), d, quick());
  const TrainResult b = train_model(mlp(2, 16), d, quick());
  REQUIRE(a.log.epochs.size() == 6);
  REQUIRE(b.log.epochs.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(a.log.epochs[e].epoch == e + 1);
    CHECK(a.log.epochs[e].phase == (e < 4 ? 1 : 2));
    CHECK(a.log.epochs[e].loss == b.log.epochs[e].loss);
    CHECK(a.log.epochs[e].val_rmse_depth == b.log.epochs[e].val_rmse_depth);
    CHECK(a.log.epochs[e].val_rmse_vel == b.log.epochs[e].val_rmse_vel);
    CHECK(a.log.epochs[e].param_hash == b.log.epochs[e].param_hash);
    CHECK(std::isfinite(a.log.epochs[e].loss));
  }
  CHECK(parameter_hash(a.model.params) == parameter_hash(b.model.params));
  const TrainResult c = train_model(mlp(2, 16), d, [] {
    TrainConfig q = quick();
    q.seed = 8;
    return q;
  }());
  CHECK(hashes(c.log) != hashes(a.log));
}

TEST_CASE("validation records never influence the parameter trajectory") {
  const Dataset& d = small_dataset();
  const TrainResult base = train_model(mlp(2, 16), d, quick());
  Dataset shuffled = d;
  shuffled.validation = permuted(d.validation, 11);
  const TrainResult p = train_model(mlp(2, 16), shuffled, quick());
  CHECK(hashes(p.log) == hashes(base.log));
  Dataset halved = d;
  std::vector<std::size_t> half(d.validation.size() / 2);
  std::iota(half.begin(), half.end(), std::size_t{0});
  halved.validation = d.validation.subset(half);
  const TrainResult h = train_model(mlp(2, 16), halved, quick(4, 0));
  const TrainResult b4 = train_model(mlp(2, 16), d, quick(4, 0));
  CHECK(hashes(h.log) == hashes(b4.log));
}

TEST_CASE("epoch losses do not depend on training record storage order") {
  const Dataset& d = small_dataset();
  const TrainResult base = train_model(mlp(2, 16), d, quick());
  Dataset shuffled = d;
  shuffled.train = permuted(d.train, 5);
  const TrainResult p = train_model(mlp(2, 16), shuffled, quick());
  REQUIRE(p.log.epochs.size() == base.log.epochs.size());
  for (std::size_t e = 0; e < p.log.epochs.size(); ++e) CHECK(p.log.epochs[e].loss == base.log.epochs[e].loss);
  CHECK(hashes(p.log) == hashes(base.log));
}

TEST_CASE("fine-tuning does not worsen the low-flow validation fit") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick(15, 8);
  const TrainResult r = train_model(mlp(2, 32), d, c);
  CHECK_FALSE(r.diverged);
  CHECK(r.phase1_lowflow.records > 0);
  CHECK(r.phase2_lowflow.rmse <= r.phase1_lowflow.rmse);
  CHECK(r.log.epochs.back().phase == 2);
}

TEST_CASE("every architecture trains without diverging") {
  const Dataset& d = small_dataset();
  for (ModelKind k : {ModelKind::Bnn, ModelKind::Lstm, ModelKind::PhyDnn}) {
    ModelSpec s = mlp(1, 8);
    s.kind = k;
    if (k == ModelKind::PhyDnn) s.branch_depth = 1;
    const TrainResult r = train_model(s, d, quick(2, 1));
    CHECK_FALSE(r.diverged);
    CHECK(r.log.epochs.size() == 3);
  }
}

TEST_CASE("divergence keeps the last good checkpoint") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick(3, 0);
  c.lr_phase1 = 1e30;
  c.lr_phase2 = 1e29;
  const TrainResult r = train_model(mlp(2, 16), d, c);
  CHECK(r.diverged);
  CHECK_FALSE(r.message.empty());
  for (std::size_t p = 0; p < r.model.params.size(); ++p)
    for (float v : r.model.params.values(p)) REQUIRE(std::isfinite(v));
}

TEST_CASE("training configuration validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr_phase2 = c.lr_phase1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_phase1 = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(c.epochs_phase1 == 40);
  CHECK(c.epochs_phase2 == 20);
  CHECK(TrainConfig{}.lr_phase1 == 1e-3);
  CHECK(TrainConfig{}.lr_phase2 == 5e-5);
  CHECK_THROWS_AS(train_model(mlp(1, 4, 5), small_dataset(), quick()), DimensionError);
}

TEST_CASE("batch sizes scale from the published values") {
  CHECK(table2_batch_size(ModelKind::Mlp) == 100000);
  CHECK(table2_batch_size(ModelKind::Bnn) == 100000);
  CHECK(table2_batch_size(ModelKind::Lstm) == 150000);
  CHECK(table2_batch_size(ModelKind::PhyDnn) == 50000);
  CHECK(scaled_batch_size(ModelKind::Mlp, 10000000) == 100000);
  CHECK(scaled_batch_size(ModelKind::Lstm, 1000000) == 15000);
  CHECK(scaled_batch_size(ModelKind::PhyDnn, 10) == 1);
}

TEST_CASE("increment targets invert exactly and checkpoints round-trip") {
  const Dataset& d = small_dataset();
  const Surrogate s = Surrogate::create(mlp(2, 16), d.scaler, d.dt, 3);
  const std::size_t n = 10;
  std::vector<float> in(d.train.inputs.begin(), d.train.inputs.begin() + n * d.train.input_len());
  std::vector<float> t(d.train.targets.begin(), d.train.targets.begin() + n * d.train.output_len());
  std::vector<float> net = t;
  s.to_network_targets(in, n, net);
  for (std::size_t k = 0; k < 5; ++k) CHECK(net[k] == t[k] - in[k]);
  s.to_states(in, n, net);
  for (std::size_t k = 0; k < t.size(); ++k) CHECK(net[k] == doctest::Approx(t[k]).epsilon(1e-6));

  const Surrogate back = surrogate_from_container(checkpoint_to_container(s));
  CHECK(back.spec == s.spec);
  CHECK(back.scaler == s.scaler);
  CHECK(back.dt == s.dt);
  CHECK(back.target_mode == s.target_mode);
  CHECK(parameter_hash(back.params) == parameter_hash(s.params));
  CHECK(back.predict(in, n, nullptr) == s.predict(in, n, nullptr));
  CHECK(parse_target_mode("increment") == TargetMode::Increment);
  CHECK(parse_target_mode("absolute") == TargetMode::Absolute);
}

TEST_CASE("training log CSV layout") {
  TrainLog log;
  log.epochs.push_back({1, 1, 0.5, 0.1, 0.2, 1.5, 0});
  const std::string csv = log.to_csv();
  CHECK(csv.rfind("epoch,phase,loss,val_rmse_depth,val_rmse_vel,seconds\n", 0) == 0);
  CHECK(csv.find("\n1,1,") != std::string::npos);
}
