#include "flood/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "flood/errors.hpp"
#include "flood/random.hpp"

namespace flood {

std::string to_string(TargetMode m) { return m == TargetMode::Absolute ? "absolute" : "increment"; }

TargetMode parse_target_mode(const std::string& s) {
  if (s == "absolute") return TargetMode::Absolute;
  if (s == "increment") return TargetMode::Increment;
  throw std::invalid_argument("unknown target mode '" + s + "' (expected absolute|increment)");
}

Surrogate Surrogate::create(const ModelSpec& spec, InputScaler scaler, double dt, std::uint64_t seed,
                            TargetMode mode) {
  spec.validate();
  if (scaler.mean.size() != spec.input_len())
    throw DimensionError("scaler width " + std::to_string(scaler.mean.size()) + " does not match input length " +
                         std::to_string(spec.input_len()));
  Surrogate s;
  s.spec = spec;
  s.scaler = std::move(scaler);
  s.dt = dt;
  s.target_mode = mode;
  declare_parameters(spec, s.params);
  s.params.initialize(seed);
  return s;
}

std::vector<float> Surrogate::predict(std::span<const float> raw_inputs, std::size_t batch, std::mt19937_64* rng,
                                      nn::Tape<float>* scratch) const {
  std::vector<float> x(raw_inputs.begin(), raw_inputs.end());
  scaler.apply(x);
  std::vector<float> out = flood::predict(spec, params, x, batch, rng, scratch);
  to_states(raw_inputs, batch, out);
  return out;
}

namespace {

void shift_by_state(const ModelSpec& spec, std::span<const float> raw, std::size_t batch, std::span<float> out,
                    float sign) {
  const std::size_t ni = spec.input_len(), no = spec.output_len();
  if (raw.size() != batch * ni || out.size() != batch * no) throw DimensionError("state shift size mismatch");
  for (std::size_t r = 0; r < batch; ++r) {
    const float* state = raw.data() + r * ni;
    float* o = out.data() + r * no;
    for (std::size_t k = 0; k < spec.lookahead; ++k)
      for (std::size_t c = 0; c < kStateWidth; ++c) o[k * kStateWidth + c] += sign * state[c];
  }
}

}  // namespace

void Surrogate::to_states(std::span<const float> raw_inputs, std::size_t batch, std::span<float> out) const {
  if (target_mode == TargetMode::Increment) shift_by_state(spec, raw_inputs, batch, out, 1.0f);
}

void Surrogate::to_network_targets(std::span<const float> raw_inputs, std::size_t batch,
                                   std::span<float> targets) const {
  if (target_mode == TargetMode::Increment) shift_by_state(spec, raw_inputs, batch, targets, -1.0f);
}

io::Container checkpoint_to_container(const Surrogate& model, const io::Manifest& extra) {
  io::Container c;
  auto& m = c.manifest;
  m.set("kind", "checkpoint");
  model.spec.write(m);
  m.set("dt", model.dt);
  m.set("step", static_cast<std::int64_t>(model.params.step_count()));
  m.set("parameter_count", model.params.scalar_count());
  model.scaler.write(m);
  m.set("target_mode", to_string(model.target_mode));
  for (const auto& [k, v] : extra.entries())
    if (!m.has(k)) m.set(k, v);
  c.arrays = model.params.to_arrays();
  return c;
}

Surrogate surrogate_from_container(const io::Container& c) {
  const auto& m = c.manifest;
  if (m.get("kind") != "checkpoint") throw FormatError("container is not a checkpoint (kind=" + m.get("kind") + ")");
  Surrogate s;
  s.spec = ModelSpec::read(m);
  s.dt = m.get_double("dt");
  s.scaler = InputScaler::read(m);
  if (s.scaler.mean.size() != s.spec.input_len()) throw FormatError("checkpoint scaler width disagrees with the spec");
  s.target_mode = parse_target_mode(m.get("target_mode"));
  declare_parameters(s.spec, s.params);
  s.params.load_arrays(c);
  return s;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) fail("learning rates must be positive");
  if (!(lr_phase2 < lr_phase1)) fail("lr_phase2 must be below lr_phase1");
  if (epochs_phase1 == 0) fail("epochs_phase1 must be >= 1");
  if (!(state_noise_depth >= 0.0) || !(state_noise_velocity >= 0.0)) fail("state noise must be non-negative");
}

std::size_t table2_batch_size(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mlp:
    case ModelKind::Bnn: return 100000;
    case ModelKind::Lstm: return 150000;
    case ModelKind::PhyDnn: return 50000;
  }
  return 100000;
}

std::size_t scaled_batch_size(ModelKind kind, std::size_t train_records) {
  constexpr double kReferenceRecords = 1.0e7;
  const double scaled = static_cast<double>(table2_batch_size(kind)) * static_cast<double>(train_records) / kReferenceRecords;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,phase,loss,val_rmse_depth,val_rmse_vel,seconds\n";
  for (const auto& e : epochs)
    os << e.epoch << ',' << e.phase << ',' << io::format_double(e.loss) << ',' << io::format_double(e.val_rmse_depth)
       << ',' << io::format_double(e.val_rmse_vel) << ',' << io::format_double(e.seconds) << '\n';
  return os.str();
}

std::uint64_t parameter_hash(const nn::ParamStore& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (float v : params.values(p)) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  return h;
}

ValidationScore evaluate_records(const Surrogate& model, const RecordSet& records, std::uint64_t seed) {
  ValidationScore s;
  s.records = records.size();
  if (records.empty()) return s;
  constexpr std::size_t kChunk = 4096;
  const std::size_t ni = records.input_len(), no = records.output_len();
  std::mt19937_64 rng(seed);
  nn::Tape<float> tape;
  double sum_all = 0.0, sum_h = 0.0, sum_v = 0.0;
  for (std::size_t lo = 0; lo < records.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, records.size() - lo);
    const auto pred = model.predict(std::span(records.inputs).subspan(lo * ni, n * ni), n, &rng, &tape);
    const float* tg = records.targets.data() + lo * no;
    for (std::size_t i = 0; i < n * no; ++i) {
      const double d = static_cast<double>(pred[i]) - static_cast<double>(tg[i]);
      const double d2 = d * d;
      sum_all += d2;
      if (i % kStateWidth == 0) sum_h += d2;
      else sum_v += d2;
    }
  }
  const double count = static_cast<double>(records.size() * no);
  s.mse = sum_all / count;
  s.rmse = std::sqrt(s.mse);
  s.rmse_depth = std::sqrt(sum_h / (count / kStateWidth));
  s.rmse_vel = std::sqrt(sum_v / (count * (kStateWidth - 1) / kStateWidth));
  return s;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct PhaseOutcome {
  bool diverged = false;
  std::string message;
};

// Record order keyed by (cell, base_time) so the shuffle does not depend on storage order.
std::vector<std::size_t> canonical_order(const RecordSet& r) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (r.cells[a] != r.cells[b]) return r.cells[a] < r.cells[b];
    return r.base_times[a] < r.base_times[b];
  });
  return idx;
}

struct PhaseSettings {
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  int phase = 1;
  double noise_depth = 0.0, noise_velocity = 0.0;
};

PhaseOutcome run_phase(Surrogate& model, const RecordSet& train, const RecordSet& val, const PhaseSettings& ps,
                       TrainLog& log) {
  PhaseOutcome out;
  const std::size_t ni = train.input_len(), no = train.output_len();
  const double lr = ps.lr;
  const std::size_t epochs = ps.epochs, batch_size = ps.batch_size;
  const std::uint64_t seed = ps.seed;
  const int phase = ps.phase;
  const bool noisy = ps.noise_depth > 0.0 || ps.noise_velocity > 0.0;
  std::vector<float> scaled = train.inputs;
  std::vector<float> targets = train.targets;
  if (!noisy) {
    model.scaler.apply(scaled);
    model.to_network_targets(train.inputs, train.size(), targets);
  }
  std::mt19937_64 state_rng(mix(seed, 0x7374617465ull + static_cast<std::uint64_t>(phase)));
  const std::vector<std::size_t> base = canonical_order(train);

  model.params.reset_optimizer();
  std::mt19937_64 noise_rng(mix(seed, 0x6e6f697365ull + static_cast<std::uint64_t>(phase)));
  nn::Tape<float> tape;
  std::vector<float> xb, yb;
  auto bound = model.params.bind();

  double best = std::numeric_limits<double>::infinity();
  auto best_values = model.params.snapshot_values();
  const std::size_t epoch_offset = log.epochs.size();

  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = base;
    std::mt19937_64 shuffle_rng(mix(seed, (static_cast<std::uint64_t>(phase) << 32) + e));
    seeded_shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - lo);
      xb.resize(n * ni);
      yb.resize(n * no);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = order[lo + r];
        std::copy_n(scaled.data() + src * ni, ni, xb.data() + r * ni);
        std::copy_n(targets.data() + src * no, no, yb.data() + r * no);
      }
      if (noisy) {
        for (std::size_t r = 0; r < n; ++r) {
          float* state = xb.data() + r * ni;
          state[0] = std::max(0.0f, state[0] + static_cast<float>(ps.noise_depth * standard_normal(state_rng)));
          for (std::size_t c = 1; c < kStateWidth; ++c)
            state[c] += static_cast<float>(ps.noise_velocity * standard_normal(state_rng));
        }
        model.to_network_targets(xb, n, yb);
        model.scaler.apply(xb);
      }
      tape.reset();
      model.params.zero_grads();
      const nn::Var x = tape.leaf(n, ni, xb);
      const nn::Var y = tape.leaf(n, no, yb);
      const nn::Var pred = forward(tape, model.spec, bound, x, &noise_rng);
      const nn::Var loss = tape.mse(pred, y);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) {
        model.params.restore_values(best_values);
        out.diverged = true;
        out.message = "non-finite training loss in phase " + std::to_string(phase) + ", epoch " + std::to_string(e);
        return out;
      }
      tape.backward(loss);
      model.params.adam_step(lr);
      loss_sum += lv * static_cast<double>(n);
    }

    EpochLog entry;
    entry.epoch = epoch_offset + e;
    entry.phase = phase;
    entry.loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, order.size()));
    double score = entry.loss;
    if (!val.empty()) {
      const ValidationScore vs = evaluate_records(model, val, mix(seed, 0x76616cull));
      entry.val_rmse_depth = vs.rmse_depth;
      entry.val_rmse_vel = vs.rmse_vel;
      score = vs.mse;
    }
    if (!std::isfinite(score)) {
      model.params.restore_values(best_values);
      out.diverged = true;
      out.message = "non-finite validation score in phase " + std::to_string(phase) + ", epoch " + std::to_string(e);
      return out;
    }
    if (score < best) {
      best = score;
      best_values = model.params.snapshot_values();
    }
    entry.param_hash = parameter_hash(model.params);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(entry);
  }
  model.params.restore_values(best_values);
  return out;
}

}  // namespace

TrainResult train_model(const ModelSpec& spec, const Dataset& data, const TrainConfig& config) {
  config.validate();
  spec.validate();
  if (spec.lookahead != data.params.lookahead)
    throw DimensionError("model lookahead " + std::to_string(spec.lookahead) + " does not match dataset lookahead " +
                         std::to_string(data.params.lookahead));
  if (data.train.empty()) throw InsufficientDataError("dataset has no training records");

  TrainResult result;
  Surrogate model = Surrogate::create(spec, data.scaler, data.dt, config.seed, config.target_mode);
  const std::size_t batch = config.batch_size ? config.batch_size : scaled_batch_size(spec.kind, data.train.size());

  const RecordSet train_low = apply_trim(data.train, config.phase2_trim);
  const RecordSet val_low = apply_trim(data.validation, config.phase2_trim);
  const std::uint64_t eval_seed = mix(config.seed, 0x6c6f77ull);

  PhaseSettings s1{config.lr_phase1, config.epochs_phase1, batch, config.seed, 1,
                   config.state_noise_depth, config.state_noise_velocity};
  PhaseOutcome p1 = run_phase(model, data.train, data.validation, s1, result.log);
  result.phase1_model = model;
  result.phase1_lowflow = evaluate_records(model, val_low, eval_seed);
  if (p1.diverged) {
    result.model = model;
    result.diverged = true;
    result.message = p1.message;
    return result;
  }

  if (config.epochs_phase2 > 0 && !train_low.empty()) {
    const std::size_t batch2 = config.batch_size ? config.batch_size : scaled_batch_size(spec.kind, train_low.size());
    PhaseSettings s2{config.lr_phase2, config.epochs_phase2, batch2, config.seed, 2,
                     config.state_noise_depth, config.state_noise_velocity};
    PhaseOutcome p2 = run_phase(model, train_low, val_low, s2, result.log);
    if (p2.diverged) {
      result.diverged = true;
      result.message = p2.message;
    }
  }
  result.phase2_lowflow = evaluate_records(model, val_low, eval_seed);
  result.model = std::move(model);
  return result;
}

}  // namespace flood
