#include "flood/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "flood/errors.hpp"
#include "flood/models.hpp"
#include "flood/parallel.hpp"
#include "flood/random.hpp"

namespace flood {

RainSchedule::RainSchedule(std::vector<double> times, std::vector<double> intensity)
    : times_(std::move(times)), intensity_(std::move(intensity)) {
  if (times_.empty() || times_.size() != intensity_.size())
    throw DimensionError("rain schedule needs matching, non-empty time and intensity lists");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1])) throw std::invalid_argument("rain schedule times must increase strictly");
  for (double v : intensity_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("rain intensity must be finite and >= 0");
}

RainSchedule RainSchedule::constant(double intensity) { return RainSchedule({0.0}, {intensity}); }

double RainSchedule::at(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return intensity_.front();
  return intensity_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

void RainSchedule::write(io::Manifest& m) const {
  m.set("rain_times", io::format_list(times_));
  m.set("rain_intensity", io::format_list(intensity_));
}

RainSchedule RainSchedule::read(const io::Manifest& m) {
  return RainSchedule(io::parse_list(m.get("rain_times")), io::parse_list(m.get("rain_intensity")));
}

double rain_feature(const RainSchedule& rain, double base_time, std::size_t k, double dt) {
  const double mid = base_time + (static_cast<double>(k) - 0.5) * dt;
  return rain.at(mid) * 1000.0 * 3600.0;
}

namespace {

struct Moments {
  double mean = 0.0, stddev = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

double zscore(double x, const Moments& m) { return m.stddev > 0.0 ? (x - m.mean) / m.stddev : 0.0; }

}  // namespace

std::vector<float> attribute_table(const TerrainGrid& terrain) {
  const std::size_t rows = terrain.rows(), cols = terrain.cols(), n = rows * cols;
  const Moments mz = moments(terrain.elevation().values());
  const Moments mn = moments(terrain.manning_n().values());
  const Moments msx = moments(terrain.slope_x().values());
  const Moments msy = moments(terrain.slope_y().values());

  std::vector<float> out(n * kAttributeWidth);
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t c = lo; c < hi; ++c) {
      const std::size_t i = c / cols, j = c % cols;
      const Neighborhood nb = neighborhood(terrain, i, j);
      float* row = out.data() + c * kAttributeWidth;
      std::size_t k = 0;
      for (double v : nb.elevation) row[k++] = static_cast<float>(v);
      row[k++] = static_cast<float>(zscore(terrain.elevation()(i, j), mz));
      for (double v : nb.manning_n) row[k++] = static_cast<float>(v);
      row[k++] = static_cast<float>(zscore(terrain.manning_n()(i, j), mn));
      for (double v : nb.slope_x) row[k++] = static_cast<float>(v);
      for (double v : nb.slope_y) row[k++] = static_cast<float>(v);
      for (double v : nb.slope_xy) row[k++] = static_cast<float>(v);
      row[k++] = static_cast<float>(zscore(terrain.slope_x()(i, j), msx));
      row[k++] = static_cast<float>(zscore(terrain.slope_y()(i, j), msy));
    }
  }, 64);
  return out;
}

std::size_t RecordSet::input_len() const { return input_length(lookahead); }
std::size_t RecordSet::output_len() const { return output_length(lookahead); }

std::span<const float> RecordSet::input(std::size_t i) const {
  if (i >= size()) throw IndexError("record " + std::to_string(i) + " out of range");
  return {inputs.data() + i * input_len(), input_len()};
}

std::span<const float> RecordSet::target(std::size_t i) const {
  if (i >= size()) throw IndexError("record " + std::to_string(i) + " out of range");
  return {targets.data() + i * output_len(), output_len()};
}

SampleRecord RecordSet::record(std::size_t i) const {
  const auto in = input(i);
  const auto tg = target(i);
  return {{in.begin(), in.end()}, {tg.begin(), tg.end()}, cells[i], base_times[i]};
}

RecordSet RecordSet::subset(std::span<const std::size_t> indices) const {
  RecordSet out;
  out.lookahead = lookahead;
  out.dt = dt;
  const std::size_t ni = input_len(), no = output_len();
  out.inputs.reserve(indices.size() * ni);
  out.targets.reserve(indices.size() * no);
  for (std::size_t i : indices) {
    const auto in = input(i);
    const auto tg = target(i);
    out.inputs.insert(out.inputs.end(), in.begin(), in.end());
    out.targets.insert(out.targets.end(), tg.begin(), tg.end());
    out.cells.push_back(cells[i]);
    out.base_times.push_back(base_times[i]);
  }
  return out;
}

void RecordSet::append(const SampleRecord& r) {
  if (r.input.size() != input_len() || r.target.size() != output_len())
    throw DimensionError("record lengths " + std::to_string(r.input.size()) + "/" + std::to_string(r.target.size()) +
                         " do not match lookahead " + std::to_string(lookahead));
  inputs.insert(inputs.end(), r.input.begin(), r.input.end());
  targets.insert(targets.end(), r.target.begin(), r.target.end());
  cells.push_back(static_cast<std::uint32_t>(r.cell_index));
  base_times.push_back(r.base_time);
}

namespace {

void write_state(const Snapshot& s, std::size_t c, float* out) {
  out[0] = s.depth[c];
  out[1] = s.vel_n[c];
  out[2] = s.vel_s[c];
  out[3] = s.vel_e[c];
  out[4] = s.vel_w[c];
}

}  // namespace

RecordSet build_records(const SnapshotSeries& series, const TerrainGrid& terrain, const RainSchedule& rain,
                        std::size_t lookahead, std::span<const std::size_t> cells) {
  if (lookahead == 0) throw std::invalid_argument("lookahead must be >= 1");
  const std::size_t T = series.frames.size();
  if (T < lookahead + 1)
    throw InsufficientDataError("series has " + std::to_string(T) + " snapshots; lookahead " +
                                std::to_string(lookahead) + " needs at least " + std::to_string(lookahead + 1));
  if (series.rows != terrain.rows() || series.cols != terrain.cols())
    throw DimensionError("snapshot grid does not match terrain");
  const double dt = series.spacing();
  for (std::size_t f = 1; f < T; ++f) {
    const double gap = series.frames[f].sim_time - series.frames[f - 1].sim_time;
    if (std::abs(gap - dt) > 1e-9 * std::max(1.0, dt)) throw std::invalid_argument("snapshots are not equally spaced");
  }

  const std::size_t n_cells = terrain.cell_count();
  std::vector<std::size_t> all;
  if (cells.empty()) {
    all.resize(n_cells);
    std::iota(all.begin(), all.end(), std::size_t{0});
    cells = all;
  }
  for (std::size_t c : cells)
    if (c >= n_cells) throw IndexError("cell " + std::to_string(c) + " out of range");

  const std::vector<float> attrs = attribute_table(terrain);
  const std::size_t per_cell = T - lookahead;
  const std::size_t ni = input_length(lookahead), no = output_length(lookahead);

  RecordSet out;
  out.lookahead = lookahead;
  out.dt = dt;
  out.inputs.resize(cells.size() * per_cell * ni);
  out.targets.resize(cells.size() * per_cell * no);
  out.cells.resize(cells.size() * per_cell);
  out.base_times.resize(cells.size() * per_cell);

  // Forcing columns depend only on the base frame.
  std::vector<float> forcing(per_cell * 2 * lookahead);
  for (std::size_t b = 0; b < per_cell; ++b)
    for (std::size_t k = 1; k <= lookahead; ++k) {
      forcing[b * 2 * lookahead + 2 * (k - 1)] =
          static_cast<float>(rain_feature(rain, series.frames[b].sim_time, k, dt));
      forcing[b * 2 * lookahead + 2 * (k - 1) + 1] = static_cast<float>(static_cast<double>(k) * dt);
    }

  parallel_for(0, cells.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t ci = lo; ci < hi; ++ci) {
      const std::size_t c = cells[ci];
      for (std::size_t b = 0; b < per_cell; ++b) {
        const std::size_t r = ci * per_cell + b;
        float* in = out.inputs.data() + r * ni;
        write_state(series.frames[b], c, in);
        std::copy_n(forcing.data() + b * 2 * lookahead, 2 * lookahead, in + kStateWidth);
        std::copy_n(attrs.data() + c * kAttributeWidth, kAttributeWidth, in + kStateWidth + 2 * lookahead);
        float* tg = out.targets.data() + r * no;
        for (std::size_t k = 1; k <= lookahead; ++k) write_state(series.frames[b + k], c, tg + (k - 1) * kStateWidth);
        out.cells[r] = static_cast<std::uint32_t>(c);
        out.base_times[r] = series.frames[b].sim_time;
      }
    }
  });
  return out;
}

std::vector<double> peak_depths(const SnapshotSeries& series) {
  std::vector<double> peak(series.rows * series.cols, 0.0);
  for (const Snapshot& s : series.frames)
    for (std::size_t c = 0; c < peak.size(); ++c) peak[c] = std::max(peak[c], static_cast<double>(s.depth[c]));
  return peak;
}

std::vector<std::size_t> stratified_sample(std::span<const double> peak_depth, double fraction,
                                           std::size_t strata_count, std::uint64_t seed) {
  if (peak_depth.empty()) throw InsufficientDataError("stratified_sample: no cells");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("stratified_sample: fraction must be in (0, 1]");
  if (strata_count == 0) throw std::invalid_argument("stratified_sample: strata_count must be >= 1");

  const std::size_t n = peak_depth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return peak_depth[a] < peak_depth[b]; });

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  for (std::size_t s = 0; s < strata_count; ++s) {
    const std::size_t lo = s * n / strata_count, hi = (s + 1) * n / strata_count;
    if (hi == lo) continue;
    std::vector<std::size_t> stratum(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
    const double share = fraction * static_cast<double>(stratum.size());
    const std::size_t take =
        std::min(stratum.size(), std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(share + 0.5))));
    seeded_shuffle(stratum, rng);
    picked.insert(picked.end(), stratum.begin(), stratum.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

CellSplit split_train_validation(std::span<const std::size_t> cells, std::uint64_t seed) {
  if (cells.size() < 2) throw InsufficientDataError("split_train_validation needs at least 2 cells");
  std::vector<std::size_t> shuffled(cells.begin(), cells.end());
  std::mt19937_64 rng(seed);
  seeded_shuffle(shuffled, rng);
  const std::size_t n_train = (shuffled.size() + 1) / 2;
  CellSplit out;
  out.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

RecordSet trim_low_flow(const RecordSet& records) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto in = records.input(i);
    bool ok = in[0] < kLowFlowDepth;
    for (std::size_t k = 1; k < kStateWidth && ok; ++k) ok = std::abs(in[k]) < kLowFlowVelocity;
    if (ok) keep.push_back(i);
  }
  return records.subset(keep);
}

RecordSet trim_steady_state(const RecordSet& records, double cutoff) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records.base_times[i] >= cutoff) keep.push_back(i);
  return records.subset(keep);
}

std::string to_string(TrimMode m) {
  switch (m) {
    case TrimMode::Full: return "full";
    case TrimMode::SteadyState: return "steady_state";
    case TrimMode::LowFlow: return "low_flow";
  }
  return "?";
}

TrimMode parse_trim_mode(const std::string& s) {
  if (s == "full") return TrimMode::Full;
  if (s == "steady_state" || s == "steady-state") return TrimMode::SteadyState;
  if (s == "low_flow" || s == "low-flow") return TrimMode::LowFlow;
  throw std::invalid_argument("unknown trim mode '" + s + "' (expected full|steady_state|low_flow)");
}

RecordSet apply_trim(const RecordSet& records, TrimMode mode) {
  switch (mode) {
    case TrimMode::Full: return records;
    case TrimMode::SteadyState: return trim_steady_state(records);
    case TrimMode::LowFlow: return trim_low_flow(records);
  }
  return records;
}

InputScaler InputScaler::fit(const RecordSet& records) {
  const std::size_t n = records.input_len();
  if (records.empty()) throw InsufficientDataError("cannot fit input scaler on zero records");
  InputScaler s;
  s.mean.assign(n, 0.0);
  s.stddev.assign(n, 0.0);
  const double count = static_cast<double>(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto in = records.input(i);
    for (std::size_t k = 0; k < n; ++k) s.mean[k] += in[k];
  }
  for (double& m : s.mean) m /= count;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto in = records.input(i);
    for (std::size_t k = 0; k < n; ++k) {
      const double d = in[k] - s.mean[k];
      s.stddev[k] += d * d;
    }
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / count);
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

InputScaler InputScaler::identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

void InputScaler::apply(std::span<float> rows) const {
  const std::size_t n = mean.size();
  if (n == 0 || rows.size() % n != 0) throw DimensionError("scaler width does not divide the input block");
  for (std::size_t r = 0; r < rows.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) rows[r + j] = static_cast<float>((rows[r + j] - mean[j]) / stddev[j]);
}

void InputScaler::invert(std::span<float> rows) const {
  const std::size_t n = mean.size();
  if (n == 0 || rows.size() % n != 0) throw DimensionError("scaler width does not divide the input block");
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<float>(rows[i] * stddev[i % n] + mean[i % n]);
}

void InputScaler::write(io::Manifest& m) const {
  m.set("normalization_mean", io::format_list(mean));
  m.set("normalization_std", io::format_list(stddev));
}

InputScaler InputScaler::read(const io::Manifest& m) {
  InputScaler s{io::parse_list(m.get("normalization_mean")), io::parse_list(m.get("normalization_std"))};
  if (s.mean.size() != s.stddev.size()) throw FormatError("normalization mean/std lengths differ");
  for (double v : s.stddev)
    if (!(v > 0.0)) throw FormatError("normalization std must be positive");
  return s;
}

Dataset build_dataset(const SnapshotSeries& series, const TerrainGrid& terrain, const RainSchedule& rain,
                      const DatasetParams& params) {
  Dataset d;
  d.params = params;
  d.dt = series.spacing();
  d.rain = rain;
  const std::vector<double> peaks = peak_depths(series);
  const std::vector<std::size_t> sampled = stratified_sample(peaks, params.fraction, params.strata, params.seed);
  const CellSplit split = split_train_validation(sampled, params.seed + 1);
  d.train_cells = split.train;
  d.validation_cells = split.validation;
  d.train = apply_trim(build_records(series, terrain, rain, params.lookahead, d.train_cells), params.trim);
  d.validation = apply_trim(build_records(series, terrain, rain, params.lookahead, d.validation_cells), params.trim);
  d.scaler = InputScaler::fit(d.train);
  return d;
}

namespace {

std::vector<double> to_doubles(std::span<const std::size_t> v) { return {v.begin(), v.end()}; }

std::vector<std::size_t> to_indices(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  for (double x : v) {
    if (!(x >= 0.0) || x != std::floor(x)) throw FormatError("cell id is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

void put_records(io::Container& c, const std::string& prefix, const RecordSet& r) {
  const std::uint64_t n = r.size();
  c.arrays.push_back(io::Array::from_f32(prefix + "/input", {n, r.input_len()}, r.inputs));
  c.arrays.push_back(io::Array::from_f32(prefix + "/target", {n, r.output_len()}, r.targets));
  c.arrays.push_back(io::Array::from_f64(prefix + "/cell", {n}, {r.cells.begin(), r.cells.end()}));
  c.arrays.push_back(io::Array::from_f64(prefix + "/base_time", {n}, r.base_times));
}

RecordSet get_records(const io::Container& c, const std::string& prefix, std::size_t lookahead, double dt,
                      std::size_t expected) {
  RecordSet r;
  r.lookahead = lookahead;
  r.dt = dt;
  const io::Array& in = c.at(prefix + "/input");
  const io::Array& tg = c.at(prefix + "/target");
  const io::Array& cell = c.at(prefix + "/cell");
  const io::Array& bt = c.at(prefix + "/base_time");
  if (in.dtype != io::DType::F32 || tg.dtype != io::DType::F32) throw FormatError(prefix + " records must be f32");
  if (in.shape.size() != 2 || in.shape[0] != expected || in.shape[1] != r.input_len() || tg.shape.size() != 2 ||
      tg.shape[0] != expected || tg.shape[1] != r.output_len() || cell.element_count() != expected ||
      bt.element_count() != expected)
    throw FormatError(prefix + " record arrays do not match the manifest");
  r.inputs = in.f32;
  r.targets = tg.f32;
  for (double x : cell.as_double()) r.cells.push_back(static_cast<std::uint32_t>(x));
  r.base_times = bt.as_double();
  return r;
}

}  // namespace

io::Container dataset_to_container(const Dataset& d) {
  io::Container c;
  auto& m = c.manifest;
  m.set("kind", "dataset");
  m.set("lookahead", d.params.lookahead);
  m.set("dt", d.dt);
  m.set("input_len", input_length(d.params.lookahead));
  m.set("output_len", output_length(d.params.lookahead));
  m.set("fraction", d.params.fraction);
  m.set("strata", d.params.strata);
  m.set("seed", static_cast<std::int64_t>(d.params.seed));
  m.set("trim_mode", to_string(d.params.trim));
  m.set("train_records", d.train.size());
  m.set("validation_records", d.validation.size());
  m.set("train_cells", io::format_list(to_doubles(d.train_cells)));
  m.set("validation_cells", io::format_list(to_doubles(d.validation_cells)));
  d.rain.write(m);
  d.scaler.write(m);
  for (const auto& [k, v] : d.provenance.entries()) m.set("source." + k, v);
  put_records(c, "train", d.train);
  put_records(c, "validation", d.validation);
  return c;
}

Dataset dataset_from_container(const io::Container& c) {
  const auto& m = c.manifest;
  if (m.get("kind") != "dataset") throw FormatError("container is not a dataset (kind=" + m.get("kind") + ")");
  Dataset d;
  d.params.lookahead = static_cast<std::size_t>(m.get_int("lookahead"));
  d.params.fraction = m.get_double("fraction");
  d.params.strata = static_cast<std::size_t>(m.get_int("strata"));
  d.params.seed = static_cast<std::uint64_t>(m.get_int("seed"));
  d.params.trim = parse_trim_mode(m.get("trim_mode"));
  d.dt = m.get_double("dt");
  if (static_cast<std::size_t>(m.get_int("input_len")) != input_length(d.params.lookahead) ||
      static_cast<std::size_t>(m.get_int("output_len")) != output_length(d.params.lookahead))
    throw FormatError("dataset input/output lengths disagree with lookahead");
  d.train_cells = to_indices(io::parse_list(m.get("train_cells")));
  d.validation_cells = to_indices(io::parse_list(m.get("validation_cells")));
  d.rain = RainSchedule::read(m);
  d.scaler = InputScaler::read(m);
  if (d.scaler.mean.size() != input_length(d.params.lookahead)) throw FormatError("normalization stats have the wrong width");
  for (const auto& [k, v] : m.entries())
    if (k.rfind("source.", 0) == 0) d.provenance.set(k.substr(7), v);
  d.train = get_records(c, "train", d.params.lookahead, d.dt, static_cast<std::size_t>(m.get_int("train_records")));
  d.validation =
      get_records(c, "validation", d.params.lookahead, d.dt, static_cast<std::size_t>(m.get_int("validation_records")));
  return d;
}

}  // namespace flood
