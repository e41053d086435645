#include "flood/forecast.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "flood/errors.hpp"
#include "flood/models.hpp"

namespace flood {

SurrogatePredictor::SurrogatePredictor(const Surrogate& model, std::uint64_t seed, std::string id)
    : model_(model), rng_(seed), id_(id.empty() ? to_string(model.spec.kind) : std::move(id)) {}

void SurrogatePredictor::predict(std::span<const float> inputs, std::size_t batch, std::vector<float>& out) {
  scaled_.assign(inputs.begin(), inputs.end());
  model_.scaler.apply(scaled_);
  predict_into(model_.spec, model_.params, scaled_, batch, &rng_, &tape_, out, work_);
  model_.to_states(inputs, batch, out);
}

std::size_t pass_count(double horizon, std::size_t lookahead, double dt) {
  if (!(horizon > 0.0)) throw std::invalid_argument("forecast horizon must be positive");
  if (lookahead == 0 || !(dt > 0.0)) throw std::invalid_argument("lookahead and dt must be positive");
  const double span = static_cast<double>(lookahead) * dt;
  return static_cast<std::size_t>(std::ceil(horizon / span - 1e-9));
}

namespace {

struct RolloutOutput {
  std::vector<double> times;
  std::vector<float> states;  // frame × cells × 5
  std::size_t passes = 0;
  std::size_t clamps = 0;
  double seconds = 0.0;
};

RolloutOutput run_rollout(Predictor& model, const TerrainGrid& terrain, std::span<const std::size_t> cells,
                          std::span<const CellState> initial, double base_time, const RainSchedule& rain,
                          double horizon) {
  const std::size_t l = model.lookahead();
  const double dt = model.dt();
  const std::size_t passes = pass_count(horizon, l, dt);
  const std::size_t emit = std::min(passes * l, static_cast<std::size_t>(std::floor(horizon / dt + 1e-9)));
  const std::size_t n = cells.size();
  const std::size_t ni = input_length(l), no = output_length(l);

  const std::vector<float> attrs = attribute_table(terrain);
  std::vector<float> inputs(n * ni);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(attrs.data() + cells[r] * kAttributeWidth, kAttributeWidth, inputs.data() + r * ni + kStateWidth + 2 * l);

  std::vector<CellState> current(initial.begin(), initial.end());
  for (auto& s : current) s[0] = std::max(s[0], 0.0f);

  RolloutOutput out;
  out.passes = passes;
  out.times.reserve(emit);
  out.states.reserve(emit * n * kStateWidth);
  std::vector<float> forcing(2 * l), pred;

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t p = 0; p < passes; ++p) {
    const double t_pass = base_time + static_cast<double>(p * l) * dt;
    for (std::size_t k = 1; k <= l; ++k) {
      forcing[2 * (k - 1)] = static_cast<float>(rain_feature(rain, t_pass, k, dt));
      forcing[2 * (k - 1) + 1] = static_cast<float>(static_cast<double>(k) * dt);
    }
    for (std::size_t r = 0; r < n; ++r) {
      float* row = inputs.data() + r * ni;
      std::copy(current[r].begin(), current[r].end(), row);
      std::copy(forcing.begin(), forcing.end(), row + kStateWidth);
    }
    model.predict(inputs, n, pred);
    if (pred.size() != n * no)
      throw RolloutError("model returned " + std::to_string(pred.size()) + " values, expected " + std::to_string(n * no), p);
    const std::size_t emit_here = std::min(l, emit - std::min(emit, p * l));
    for (std::size_t r = 0; r < n; ++r) {
      float* row = pred.data() + r * no;
      for (std::size_t k = 0; k < l; ++k) {
        float* s = row + k * kStateWidth;
        for (std::size_t c = 0; c < kStateWidth; ++c)
          if (!std::isfinite(s[c])) throw RolloutError("non-finite model output", p);
        if (s[0] < 0.0f) {
          s[0] = 0.0f;
          if (k < emit_here) ++out.clamps;
        }
      }
    }
    const std::size_t frame0 = out.times.size();
    out.states.resize((frame0 + emit_here) * n * kStateWidth);
    for (std::size_t k = 0; k < emit_here; ++k) {
      out.times.push_back(base_time + static_cast<double>(p * l + k + 1) * dt);
      float* dst = out.states.data() + (frame0 + k) * n * kStateWidth;
      for (std::size_t r = 0; r < n; ++r)
        std::copy_n(pred.data() + r * no + k * kStateWidth, kStateWidth, dst + r * kStateWidth);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const float* last = pred.data() + r * no + (l - 1) * kStateWidth;
      std::copy_n(last, kStateWidth, current[r].begin());
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

ForecastSeries rollout(Predictor& model, const TerrainGrid& terrain, std::size_t cell, const CellState& initial,
                       double base_time, const RainSchedule& rain, double horizon) {
  if (cell >= terrain.cell_count()) throw IndexError("cell " + std::to_string(cell) + " out of range");
  const std::size_t cells[1] = {cell};
  const CellState init[1] = {initial};
  RolloutOutput r = run_rollout(model, terrain, cells, init, base_time, rain, horizon);
  ForecastSeries s;
  s.cell_index = cell;
  s.times = std::move(r.times);
  s.pass_count = r.passes;
  s.clamp_count = r.clamps;
  s.model_id = model.id();
  for (std::size_t f = 0; f < s.times.size(); ++f) {
    CellState st;
    std::copy_n(r.states.data() + f * kStateWidth, kStateWidth, st.begin());
    s.states.push_back(st);
  }
  return s;
}

CellState ForecastCube::state(std::size_t frame, std::size_t cell) const {
  if (frame >= times.size() || cell >= cell_count()) throw IndexError("forecast cube index out of range");
  CellState s;
  std::copy_n(states.data() + (frame * cell_count() + cell) * kStateWidth, kStateWidth, s.begin());
  return s;
}

SnapshotSeries ForecastCube::to_snapshots() const {
  SnapshotSeries out;
  out.rows = rows;
  out.cols = cols;
  const std::size_t n = cell_count();
  for (std::size_t f = 0; f < times.size(); ++f) {
    Snapshot s;
    s.sim_time = times[f];
    for (Raster<float>* r : {&s.depth, &s.vel_n, &s.vel_s, &s.vel_e, &s.vel_w}) *r = Raster<float>(rows, cols);
    const float* base = states.data() + f * n * kStateWidth;
    for (std::size_t c = 0; c < n; ++c) {
      s.depth[c] = base[c * kStateWidth + 0];
      s.vel_n[c] = base[c * kStateWidth + 1];
      s.vel_s[c] = base[c * kStateWidth + 2];
      s.vel_e[c] = base[c * kStateWidth + 3];
      s.vel_w[c] = base[c * kStateWidth + 4];
    }
    out.frames.push_back(std::move(s));
  }
  return out;
}

io::Manifest ForecastCube::describe() const {
  io::Manifest m;
  m.set("source", "forecast");
  m.set("model_id", model_id);
  m.set("lookahead", lookahead);
  m.set("pass_count", pass_count);
  m.set("clamp_count", clamp_count);
  m.set("base_time", base_time);
  return m;
}

ForecastCube batch_rollout(Predictor& model, const TerrainGrid& terrain, const Snapshot& initial,
                           const RainSchedule& rain, double horizon) {
  const std::size_t n = terrain.cell_count();
  if (initial.depth.rows() != terrain.rows() || initial.depth.cols() != terrain.cols())
    throw DimensionError("initial snapshot grid does not match terrain");
  std::vector<std::size_t> cells(n);
  std::vector<CellState> init(n);
  for (std::size_t c = 0; c < n; ++c) {
    cells[c] = c;
    init[c] = {initial.depth[c], initial.vel_n[c], initial.vel_s[c], initial.vel_e[c], initial.vel_w[c]};
  }
  RolloutOutput r = run_rollout(model, terrain, cells, init, initial.sim_time, rain, horizon);
  ForecastCube cube;
  cube.rows = terrain.rows();
  cube.cols = terrain.cols();
  cube.base_time = initial.sim_time;
  cube.times = std::move(r.times);
  cube.states = std::move(r.states);
  cube.pass_count = r.passes;
  cube.lookahead = model.lookahead();
  cube.clamp_count = r.clamps;
  cube.model_id = model.id();
  cube.seconds = r.seconds;
  return cube;
}

EnsembleCube ensemble_rollout(const Surrogate& model, const TerrainGrid& terrain, const Snapshot& initial,
                              const RainSchedule& rain, double horizon, std::size_t members, std::uint64_t seed) {
  if (members == 0) throw std::invalid_argument("ensemble needs at least one member");
  EnsembleCube out;
  out.members = members;
  std::vector<double> sum, sum_sq;
  for (std::size_t m = 0; m < members; ++m) {
    SurrogatePredictor pred(model, seed + m);
    ForecastCube cube = batch_rollout(pred, terrain, initial, rain, horizon);
    if (m == 0) {
      sum.assign(cube.states.size(), 0.0);
      sum_sq.assign(cube.states.size(), 0.0);
      out.mean = cube;
    }
    for (std::size_t i = 0; i < cube.states.size(); ++i) {
      sum[i] += cube.states[i];
      sum_sq[i] += static_cast<double>(cube.states[i]) * cube.states[i];
    }
    if (m > 0) {
      out.mean.clamp_count += cube.clamp_count;
      out.mean.seconds += cube.seconds;
    }
  }
  const double k = static_cast<double>(members);
  out.stddev.resize(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double mu = sum[i] / k;
    out.mean.states[i] = static_cast<float>(mu);
    out.stddev[i] = static_cast<float>(std::sqrt(std::max(0.0, sum_sq[i] / k - mu * mu)));
  }
  return out;
}

}  // namespace flood
