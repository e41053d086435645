#include "flood/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include "flood/dataset.hpp"
#include "flood/errors.hpp"
#include "flood/forecast.hpp"
#include "flood/hydro.hpp"
#include "flood/metrics.hpp"
#include "flood/models.hpp"
#include "flood/parallel.hpp"
#include "flood/terrain.hpp"
#include "flood/train.hpp"

namespace flood::pipeline {

namespace fs = std::filesystem;

namespace {

std::vector<ConfigKey> terrain_keys() {
  return {
      {"terrain", "", "terrain container (synthetic terrain when empty)"},
      {"terrain_text", "", "plain-text elevation grid (alternative to terrain)"},
      {"manning", "0.03", "uniform Manning n for terrain_text"},
      {"rows", "64", "synthetic terrain rows"},
      {"cols", "64", "synthetic terrain columns"},
      {"cell_size", "1", "cell size in meters"},
      {"relief", "1", "synthetic relief amplitude in meters"},
      {"roughness_classes", "3", "number of Manning classes"},
      {"terrain_seed", "", "synthetic terrain seed (defaults to seed)"},
  };
}

std::vector<ConfigKey> solver_keys() {
  return {
      {"formulation", "de", "de | fme"},
      {"rain_in_hr", "1", "uniform rainfall in inches per hour"},
      {"boundary", "closed", "closed | outfall"},
      {"output_interval", "5", "snapshot spacing in seconds"},
      {"courant", "", "Courant target (formulation default when empty)"},
      {"max_dt", "", "largest sub-step in seconds"},
      {"min_dt", "", "smallest sub-step in seconds"},
      {"wet_threshold", "", "wet/dry depth threshold in meters"},
  };
}

void append(std::vector<ConfigKey>& to, const std::vector<ConfigKey>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path require_file(const RunConfig& cfg, const std::string& key) {
  if (!cfg.is_set(key)) throw std::invalid_argument("missing required setting '" + key + "'");
  fs::path p = cfg.get_path(key);
  if (!fs::is_regular_file(p)) throw std::invalid_argument(key + ": no such file: " + p.string());
  return p;
}

std::optional<fs::path> optional_file(const RunConfig& cfg, const std::string& key) {
  if (!cfg.is_set(key)) return std::nullopt;
  fs::path p = cfg.get_path(key);
  if (!fs::is_regular_file(p)) throw std::invalid_argument(key + ": no such file: " + p.string());
  return p;
}

fs::path prepare_out(const RunConfig& cfg) {
  fs::path out = cfg.out_dir();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw std::invalid_argument("cannot create output directory " + out.string());
  return out;
}

void validate_terrain_inputs(const RunConfig& cfg) {
  optional_file(cfg, "terrain");
  optional_file(cfg, "terrain_text");
  if (cfg.is_set("terrain") && cfg.is_set("terrain_text"))
    throw std::invalid_argument("set only one of terrain and terrain_text");
}

TerrainGrid resolve_terrain(const RunConfig& cfg) {
  if (cfg.is_set("terrain")) return load_terrain(cfg.get_path("terrain"));
  if (cfg.is_set("terrain_text")) {
    RasterD z = load_text_grid(cfg.get_path("terrain_text"));
    RasterD n(z.rows(), z.cols(), cfg.get_double("manning"));
    return TerrainGrid(std::move(z), std::move(n), cfg.get_double("cell_size"));
  }
  SyntheticTerrainParams p;
  p.rows = cfg.get_size("rows");
  p.cols = cfg.get_size("cols");
  p.cell_size = cfg.get_double("cell_size");
  p.relief_amplitude = cfg.get_double("relief");
  p.roughness_classes = cfg.get_size("roughness_classes");
  p.seed = cfg.is_set("terrain_seed") ? static_cast<std::uint64_t>(cfg.get_int("terrain_seed")) : cfg.seed();
  return generate_synthetic_terrain(p);
}

SolverConfig resolve_solver(const RunConfig& cfg, double duration) {
  SolverConfig sc = SolverConfig::defaults(parse_formulation(cfg.get("formulation")));
  sc.rainfall_intensity = cfg.get_double("rain_in_hr") * kInchPerHour;
  sc.duration = duration;
  sc.output_interval = cfg.get_double("output_interval");
  const std::string& b = cfg.get("boundary");
  if (b == "closed") sc.boundary = BoundaryMode::Closed;
  else if (b == "outfall") sc.boundary = BoundaryMode::FreeOutfall;
  else throw std::invalid_argument("boundary must be closed or outfall, got '" + b + "'");
  if (cfg.is_set("courant")) sc.courant_target = cfg.get_double("courant");
  if (cfg.is_set("max_dt")) sc.max_dt = cfg.get_double("max_dt");
  if (cfg.is_set("min_dt")) sc.min_dt = cfg.get_double("min_dt");
  if (cfg.is_set("wet_threshold")) sc.wet_threshold = cfg.get_double("wet_threshold");
  sc.validate();
  return sc;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string csv_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += io::format_double(v[i]);
  }
  return out;
}

Snapshot dry_snapshot(std::size_t rows, std::size_t cols, double t) {
  Snapshot s = Snapshot::from_state(SimState::dry(rows, cols));
  s.sim_time = t;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"simulate", "build-dataset", "train",    "forecast",
                                              "evaluate", "mass-audit",    "benchmark"};
  return names;
}

std::vector<ConfigKey> command_schema(const std::string& command) {
  std::vector<ConfigKey> k{
      {"seed", "1", "master seed"},
      {"threads", "0", "worker threads (0 = available cores)"},
      {"out", ".", "output directory"},
  };
  if (command == "simulate") {
    append(k, terrain_keys());
    append(k, solver_keys());
    append(k, {{"duration", "3600", "simulated seconds"},
               {"initial_surface", "", "start from a flat water surface at this elevation instead of dry"}});
  } else if (command == "build-dataset") {
    append(k, {{"snapshots", "", "snapshot container from simulate"},
               {"terrain", "", "terrain container"},
               {"lookahead", "12", "lookahead steps per record"},
               {"fraction", "0.1", "fraction of cells sampled"},
               {"strata", "10", "peak-depth strata"},
               {"trim", "full", "full | steady_state | low_flow"},
               {"rain_in_hr", "", "rainfall override (inches per hour)"}});
  } else if (command == "train") {
    append(k, {{"dataset", "", "dataset container"},
               {"arch", "mlp", "mlp | bnn | lstm | phydnn"},
               {"depth", "", "hidden layers (published value when empty)"},
               {"width", "", "hidden units (published value when empty)"},
               {"branch_depth", "", "PhyDNN branch layers (published value when empty)"},
               {"bnn_sigma_init", "", "initial BNN log-scale"},
               {"epochs1", "40", "phase-1 epochs"},
               {"epochs2", "20", "phase-2 epochs"},
               {"lr1", "0.001", "phase-1 learning rate"},
               {"lr2", "0.00005", "phase-2 learning rate"},
               {"batch_size", "0", "mini-batch size (0 = scaled published size)"},
               {"phase2_trim", "low_flow", "record subset for phase 2"},
               {"target_mode", "increment", "increment | absolute network targets"},
               {"state_noise_depth", "0", "training-time input depth perturbation (m)"},
               {"state_noise_velocity", "0", "training-time input velocity perturbation (m/s)"}});
  } else if (command == "forecast") {
    append(k, {{"checkpoint", "", "trained checkpoint"},
               {"terrain", "", "terrain container"},
               {"initial", "", "snapshot container holding the initial state (dry when empty)"},
               {"initial_frame", "0", "frame index within initial"},
               {"horizon", "3600", "forecast horizon in seconds"},
               {"rain_in_hr", "", "rainfall override (inches per hour)"},
               {"ensemble", "0", "BNN ensemble members (0 = single rollout)"}});
  } else if (command == "evaluate") {
    append(k, {{"reference", "", "reference snapshot container"},
               {"forecast", "", "forecast container"},
               {"cells", "all", "all | heldout | validation"},
               {"dataset", "", "dataset container (for heldout/validation)"},
               {"channel", "depth", "depth | vn | vs | ve | vw"}});
  } else if (command == "mass-audit") {
    append(k, {{"audit", "", "mass audit CSV"}, {"compare", "", "second audit CSV to compare against"}});
  } else if (command == "benchmark") {
    append(k, terrain_keys());
    append(k, solver_keys());
    append(k, {{"checkpoint", "", "trained checkpoint"},
               {"horizon", "3600", "simulated / forecast seconds"},
               {"runs", "3", "timed repetitions"},
               {"lookaheads", "", "comma list of lookaheads for the rollout sweep"}});
  } else {
    throw std::invalid_argument("unknown command '" + command + "'");
  }
  return k;
}

RunConfig::RunConfig(std::string command) : command_(std::move(command)), schema_(command_schema(command_)) {
  for (const auto& k : schema_) values_.push_back(k.default_value);
}

std::size_t RunConfig::index_of(const std::string& key) const {
  for (std::size_t i = 0; i < schema_.size(); ++i)
    if (schema_[i].name == key) return i;
  throw FormatError("unknown key '" + key + "' for command " + command_);
}

void RunConfig::load_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) + ": expected 'key: value'");
    set(trim(t.substr(0, colon)), trim(t.substr(colon + 1)));
  }
}

void RunConfig::load_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw std::invalid_argument("config: no such file: " + path.string());
  load_text(read_text(path));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  std::string k = key;
  std::replace(k.begin(), k.end(), '-', '_');
  values_[index_of(k)] = value;
}

bool RunConfig::is_set(const std::string& key) const { return !values_[index_of(key)].empty(); }
const std::string& RunConfig::get(const std::string& key) const { return values_[index_of(key)]; }

double RunConfig::get_double(const std::string& key) const {
  try {
    return io::parse_double(get(key));
  } catch (const std::exception&) {
    throw FormatError("setting '" + key + "' is not a number: '" + get(key) + "'");
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw FormatError("setting '" + key + "' is not an integer: '" + v + "'");
  return out;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const std::int64_t v = get_int(key);
  if (v < 0) throw FormatError("setting '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no" || v.empty()) return false;
  throw FormatError("setting '" + key + "' is not a boolean: '" + v + "'");
}

fs::path RunConfig::get_path(const std::string& key) const { return fs::path(get(key)); }

std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

io::Manifest RunConfig::to_manifest() const {
  io::Manifest m;
  for (std::size_t i = 0; i < schema_.size(); ++i)
    if (schema_[i].name != "out" && schema_[i].name != "threads") m.set(schema_[i].name, values_[i]);
  return m;
}

io::Manifest read_report(const fs::path& path) { return io::Manifest::parse(read_text(path)); }

// ---------------------------------------------------------------- commands

int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  validate_terrain_inputs(cfg);
  const fs::path out = prepare_out(cfg);
  const TerrainGrid terrain = resolve_terrain(cfg);
  const SolverConfig sc = resolve_solver(cfg, cfg.get_double("duration"));

  SimState initial = SimState::dry(terrain.rows(), terrain.cols());
  if (cfg.is_set("initial_surface")) {
    const double level = cfg.get_double("initial_surface");
    for (std::size_t c = 0; c < terrain.cell_count(); ++c)
      initial.depth[c] = std::max(0.0, level - terrain.elevation()[c]);
  }

  const auto t0 = std::chrono::steady_clock::now();
  SimulationResult r;
  try {
    r = run_simulation(terrain, sc, std::move(initial));
  } catch (const NumericalFailure& e) {
    log << "simulate: solver failure: " << e.what() << '\n';
    return 2;
  } catch (const StagnationError& e) {
    log << "simulate: solver stalled: " << e.what() << '\n';
    return 2;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::Manifest extra;
  extra.set("formulation", to_string(sc.formulation));
  extra.set("rain_in_hr", cfg.get_double("rain_in_hr"));
  extra.set("rainfall_intensity", sc.rainfall_intensity);
  extra.set("duration", sc.duration);
  extra.set("output_interval", sc.output_interval);
  extra.set("substeps", r.substeps);
  extra.set("seed", static_cast<std::int64_t>(cfg.seed()));
  io::write_file(out / "snapshots.fld", snapshots_to_container(r.snapshots, extra));
  write_text(out / "audit.csv", audit_to_csv(r.audit));
  save_terrain(out / "terrain.fld", terrain);

  io::Manifest timing;
  timing.set("seconds", seconds);
  timing.set("substeps", r.substeps);
  write_text(out / "timing.txt", timing.to_text());

  log << "simulate: " << to_string(sc.formulation) << ", " << r.snapshots.frames.size() << " snapshots, "
      << r.substeps << " sub-steps, " << io::format_double(seconds) << " s, mass closure error "
      << io::format_double(mass_closure_error(r.audit)) << '\n';
  return 0;
}

int cmd_build_dataset(const RunConfig& cfg, std::ostream& log) {
  const fs::path snap_path = require_file(cfg, "snapshots");
  const fs::path terrain_path = require_file(cfg, "terrain");
  const fs::path out = prepare_out(cfg);

  const io::Container sc = io::read_file(snap_path);
  const SnapshotSeries series = snapshots_from_container(sc);
  const TerrainGrid terrain = load_terrain(terrain_path);

  double rain_ms = 0.0;
  if (cfg.is_set("rain_in_hr")) rain_ms = cfg.get_double("rain_in_hr") * kInchPerHour;
  else if (sc.manifest.has("rainfall_intensity")) rain_ms = sc.manifest.get_double("rainfall_intensity");
  else throw std::invalid_argument("snapshots carry no rainfall; set rain_in_hr");

  DatasetParams p;
  p.lookahead = cfg.get_size("lookahead");
  p.fraction = cfg.get_double("fraction");
  p.strata = cfg.get_size("strata");
  p.seed = cfg.seed();
  p.trim = parse_trim_mode(cfg.get("trim"));

  Dataset d = build_dataset(series, terrain, RainSchedule::constant(rain_ms), p);
  d.provenance.set("source.snapshots", snap_path.filename().string());
  for (const char* key : {"formulation", "rain_in_hr", "duration", "seed"})
    if (auto v = sc.manifest.find(key)) d.provenance.set(std::string("source.") + key, *v);
  io::write_file(out / "dataset.fld", dataset_to_container(d));

  log << "build-dataset: " << d.train_cells.size() << " train cells / " << d.validation_cells.size()
      << " validation cells, " << d.train.size() << " / " << d.validation.size() << " records, trim "
      << to_string(p.trim) << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const fs::path data_path = require_file(cfg, "dataset");
  const fs::path out = prepare_out(cfg);
  const Dataset data = dataset_from_container(io::read_file(data_path));

  ModelSpec spec = ModelSpec::table2(parse_model_kind(cfg.get("arch")), data.params.lookahead);
  if (cfg.is_set("depth")) spec.depth = cfg.get_size("depth");
  if (cfg.is_set("width")) spec.width = cfg.get_size("width");
  if (cfg.is_set("branch_depth")) spec.branch_depth = cfg.get_size("branch_depth");
  if (cfg.is_set("bnn_sigma_init")) spec.bnn_sigma_init = cfg.get_double("bnn_sigma_init");
  spec.validate();

  TrainConfig tc;
  tc.batch_size = cfg.get_size("batch_size");
  tc.epochs_phase1 = cfg.get_size("epochs1");
  tc.epochs_phase2 = cfg.get_size("epochs2");
  tc.lr_phase1 = cfg.get_double("lr1");
  tc.lr_phase2 = cfg.get_double("lr2");
  tc.seed = cfg.seed();
  tc.phase2_trim = parse_trim_mode(cfg.get("phase2_trim"));
  tc.target_mode = parse_target_mode(cfg.get("target_mode"));
  tc.state_noise_depth = cfg.get_double("state_noise_depth");
  tc.state_noise_velocity = cfg.get_double("state_noise_velocity");
  tc.validate();

  log << "train: " << to_string(spec.kind) << " d=" << spec.depth << " H=" << spec.width
      << " params=" << parameter_count(spec) << " on " << data.train.size() << " records\n";
  const TrainResult r = train_model(spec, data, tc);

  io::Manifest extra;
  data.rain.write(extra);
  extra.set("trim_mode", to_string(data.params.trim));
  io::Manifest phase2_extra = extra;
  phase2_extra.set("phase", 2);
  io::Manifest phase1_extra = extra;
  phase1_extra.set("phase", 1);
  io::write_file(out / "checkpoint.fld", checkpoint_to_container(r.model, phase2_extra));
  io::write_file(out / "phase1.fld", checkpoint_to_container(r.phase1_model, phase1_extra));
  write_text(out / "train_log.csv", r.log.to_csv());

  const std::size_t batch = tc.batch_size ? tc.batch_size : scaled_batch_size(spec.kind, data.train.size());
  io::Manifest s;
  spec.write(s);
  s.set("parameter_count", parameter_count(spec));
  s.set("batch_size", batch);
  s.set("train_records", data.train.size());
  s.set("validation_records", data.validation.size());
  s.set("epochs", r.log.epochs.size());
  s.set("phase1_lowflow_rmse", r.phase1_lowflow.rmse);
  s.set("phase1_lowflow_rmse_depth", r.phase1_lowflow.rmse_depth);
  s.set("phase2_lowflow_rmse", r.phase2_lowflow.rmse);
  s.set("phase2_lowflow_rmse_depth", r.phase2_lowflow.rmse_depth);
  s.set("lowflow_records", r.phase2_lowflow.records);
  s.set("diverged", r.diverged ? "true" : "false");
  if (!r.message.empty()) s.set("message", r.message);
  write_text(out / "train_summary.txt", s.to_text());

  log << "train: phase-1 low-flow rmse " << io::format_double(r.phase1_lowflow.rmse) << ", phase-2 "
      << io::format_double(r.phase2_lowflow.rmse) << '\n';
  if (r.diverged) {
    log << "train: diverged: " << r.message << '\n';
    return 3;
  }
  return 0;
}

int cmd_forecast(const RunConfig& cfg, std::ostream& log) {
  const fs::path ckpt_path = require_file(cfg, "checkpoint");
  const fs::path terrain_path = require_file(cfg, "terrain");
  const auto init_path = optional_file(cfg, "initial");
  const fs::path out = prepare_out(cfg);

  const io::Container ckpt = io::read_file(ckpt_path);
  const Surrogate model = surrogate_from_container(ckpt);
  const TerrainGrid terrain = load_terrain(terrain_path);

  Snapshot initial = dry_snapshot(terrain.rows(), terrain.cols(), 0.0);
  if (init_path) {
    const SnapshotSeries s = snapshots_from_container(io::read_file(*init_path));
    const std::size_t f = cfg.get_size("initial_frame");
    if (f >= s.frames.size()) throw IndexError("initial_frame " + std::to_string(f) + " out of range");
    initial = s.frames[f];
  }
  RainSchedule rain;
  if (cfg.is_set("rain_in_hr")) rain = RainSchedule::constant(cfg.get_double("rain_in_hr") * kInchPerHour);
  else if (ckpt.manifest.has("rain_times")) rain = RainSchedule::read(ckpt.manifest);
  else throw std::invalid_argument("checkpoint carries no rainfall; set rain_in_hr");

  const double horizon = cfg.get_double("horizon");
  const std::size_t members = cfg.get_size("ensemble");
  ForecastCube cube;
  try {
    if (members > 0) {
      EnsembleCube e = ensemble_rollout(model, terrain, initial, rain, horizon, members, cfg.seed());
      cube = std::move(e.mean);
      ForecastCube spread = cube;
      spread.states.assign(e.stddev.begin(), e.stddev.end());
      io::Manifest m = spread.describe();
      m.set("statistic", "stddev");
      m.set("members", members);
      io::write_file(out / "forecast_std.fld", snapshots_to_container(spread.to_snapshots(), m));
    } else {
      SurrogatePredictor pred(model, cfg.seed());
      cube = batch_rollout(pred, terrain, initial, rain, horizon);
    }
  } catch (const RolloutError& e) {
    log << "forecast: " << e.what() << '\n';
    return 2;
  }
  io::Manifest m = cube.describe();
  if (members > 0) {
    m.set("statistic", "mean");
    m.set("members", members);
  }
  rain.write(m);
  io::write_file(out / "forecast.fld", snapshots_to_container(cube.to_snapshots(), m));
  io::Manifest timing;
  timing.set("seconds", cube.seconds);
  write_text(out / "timing.txt", timing.to_text());

  log << "forecast: " << cube.times.size() << " frames in " << cube.pass_count << " passes, " << cube.clamp_count
      << " depth clamps, " << io::format_double(cube.seconds) << " s\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const fs::path ref_path = require_file(cfg, "reference");
  const fs::path fc_path = require_file(cfg, "forecast");
  const auto data_path = optional_file(cfg, "dataset");
  const std::string cell_mode = cfg.get("cells");
  if (cell_mode != "all" && cell_mode != "heldout" && cell_mode != "validation")
    throw std::invalid_argument("cells must be all, heldout or validation");
  if (cell_mode != "all" && !data_path) throw std::invalid_argument("cells=" + cell_mode + " needs dataset");
  const std::string& ch = cfg.get("channel");
  StateChannel channel;
  if (ch == "depth") channel = StateChannel::Depth;
  else if (ch == "vn") channel = StateChannel::VelN;
  else if (ch == "vs") channel = StateChannel::VelS;
  else if (ch == "ve") channel = StateChannel::VelE;
  else if (ch == "vw") channel = StateChannel::VelW;
  else throw std::invalid_argument("unknown channel '" + ch + "'");
  const fs::path out = prepare_out(cfg);

  const SnapshotSeries reference = snapshots_from_container(io::read_file(ref_path));
  SnapshotSeries forecast = snapshots_from_container(io::read_file(fc_path));
  std::vector<double> times;
  for (const auto& f : forecast.frames) times.push_back(f.sim_time);
  const SnapshotSeries aligned = align_frames(reference, times);

  std::vector<std::size_t> cells;
  if (data_path) {
    const Dataset d = dataset_from_container(io::read_file(*data_path));
    if (cell_mode == "validation") {
      cells = d.validation_cells;
    } else if (cell_mode == "heldout") {
      std::vector<char> trained(reference.rows * reference.cols, 0);
      for (std::size_t c : d.train_cells) {
        if (c >= trained.size()) throw IndexError("dataset cell outside the reference grid");
        trained[c] = 1;
      }
      for (std::size_t c = 0; c < trained.size(); ++c)
        if (!trained[c]) cells.push_back(c);
    }
  }
  if (cell_mode == "all") {
    cells.resize(reference.rows * reference.cols);
    for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
  }

  const DomainScores scores = score_domain(aligned, forecast, channel, cells);
  std::vector<double> wet_means;
  for (const auto& s : scores.cells)
    if (s.mean_true > kDryTolerance) wet_means.push_back(s.mean_true);
  const PercentileSummary wet = summarize(std::move(wet_means));

  write_text(out / "scores.csv", scores_to_csv(scores.cells));
  io::write_file(out / "score_grids.fld", score_grids(scores, reference.rows, reference.cols));
  auto write_cdf = [&](const std::string& name, auto pick) {
    std::vector<double> v;
    for (const auto& s : scores.cells)
      if (auto x = pick(s)) v.push_back(*x);
    std::string text = "value,fraction\n";
    for (const auto& [x, q] : cdf_table(std::move(v)))
      text += io::format_double(x) + ',' + io::format_double(q) + '\n';
    write_text(out / ("cdf_" + name + ".csv"), text);
  };
  write_cdf("rmse", [](const CellScore& s) { return std::optional<double>(s.rmse); });
  write_cdf("nnse", [](const CellScore& s) { return s.nnse_defined ? std::optional<double>(s.nnse) : std::nullopt; });
  write_cdf("cv", [](const CellScore& s) { return s.cv_defined ? std::optional<double>(s.cv) : std::nullopt; });

  io::Manifest m;
  m.set("channel", ch);
  m.set("cell_set", cell_mode);
  m.set("cells_scored", scores.cells.size());
  m.set("frames", forecast.frames.size());
  auto put = [&](const std::string& name, const PercentileSummary& s) {
    m.set(name + "_count", s.count);
    m.set(name + "_median", s.median);
    m.set(name + "_p90", s.p90);
    m.set(name + "_p99", s.p99);
  };
  put("rmse", scores.rmse);
  put("nnse", scores.nnse);
  put("cv", scores.cv);
  m.set("wet_cells", wet.count);
  m.set("median_wet_depth", wet.median);
  write_text(out / "summary.txt", m.to_text());

  log << summary_report(scores);
  log << "median wet-cell mean: " << io::format_double(wet.median) << " over " << wet.count << " cells\n";
  return 0;
}

int cmd_mass_audit(const RunConfig& cfg, std::ostream& log) {
  const fs::path a_path = require_file(cfg, "audit");
  const auto b_path = optional_file(cfg, "compare");
  const fs::path out = prepare_out(cfg);

  const std::vector<MassAuditRow> a = audit_from_csv(read_text(a_path));
  if (a.empty()) throw InsufficientDataError("audit has no rows");
  double worst_ratio = 0.0;
  for (const auto& r : a) worst_ratio = std::max(worst_ratio, std::abs(r.imbalance_ratio - 1.0));

  io::Manifest m;
  m.set("rows", a.size());
  m.set("final_time", a.back().sim_time);
  m.set("final_mass", a.back().domain_mass);
  m.set("rain_cumulative", a.back().rain_input_cumulative);
  m.set("outflow_cumulative", a.back().boundary_outflow_cumulative);
  m.set("closure_error", mass_closure_error(a));
  m.set("max_imbalance_deviation", worst_ratio);
  m.set("mass_gain_percent",
        a.back().rain_input_cumulative > 0.0
            ? 100.0 * (a.back().domain_mass - a.front().domain_mass) /
                  (a.back().rain_input_cumulative - a.front().rain_input_cumulative)
            : 0.0);
  log << "mass-audit: closure error " << io::format_double(mass_closure_error(a)) << ", max |imbalance-1| "
      << io::format_double(worst_ratio) << '\n';

  if (b_path) {
    const std::vector<MassAuditRow> b = audit_from_csv(read_text(*b_path));
    const auto rows = compare_mass_audits(a, b);
    write_text(out / "audit_comparison.csv", audit_comparison_to_csv(rows));
    double worst_delta = 0.0;
    for (const auto& r : rows) worst_delta = std::max(worst_delta, std::abs(r.imbalance_delta));
    m.set("compare_closure_error", mass_closure_error(b));
    m.set("final_mass_ratio", rows.back().mass_ratio);
    m.set("max_imbalance_delta", worst_delta);
    log << "mass-audit: comparison closure error " << io::format_double(mass_closure_error(b))
        << ", final mass ratio " << io::format_double(rows.back().mass_ratio) << '\n';
  }
  write_text(out / "audit_summary.txt", m.to_text());
  return 0;
}

int cmd_benchmark(const RunConfig& cfg, std::ostream& log) {
  validate_terrain_inputs(cfg);
  const fs::path ckpt_path = require_file(cfg, "checkpoint");
  const std::size_t runs = cfg.get_size("runs");
  if (runs < 1) throw std::invalid_argument("runs must be at least 1");
  std::vector<std::size_t> sweep;
  if (cfg.is_set("lookaheads"))
    for (double v : io::parse_list(cfg.get("lookaheads"))) {
      if (!(v >= 1.0) || v != std::floor(v)) throw std::invalid_argument("lookaheads must be positive integers");
      sweep.push_back(static_cast<std::size_t>(v));
    }
  const fs::path out = prepare_out(cfg);

  const TerrainGrid terrain = resolve_terrain(cfg);
  const double horizon = cfg.get_double("horizon");
  const SolverConfig sc = resolve_solver(cfg, horizon);
  const RainSchedule rain = RainSchedule::constant(sc.rainfall_intensity);
  const Surrogate model = surrogate_from_container(io::read_file(ckpt_path));
  const Snapshot initial = dry_snapshot(terrain.rows(), terrain.cols(), 0.0);

  std::vector<double> solver_s, surrogate_s;
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const SimulationResult r = run_simulation(terrain, sc);
    solver_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    log << "benchmark: solver run " << i + 1 << ": " << io::format_double(solver_s.back()) << " s (" << r.substeps
        << " sub-steps)\n";
  }
  for (std::size_t i = 0; i < runs; ++i) {
    SurrogatePredictor pred(model, cfg.seed());
    surrogate_s.push_back(batch_rollout(pred, terrain, initial, rain, horizon).seconds);
    log << "benchmark: surrogate run " << i + 1 << ": " << io::format_double(surrogate_s.back()) << " s\n";
  }
  const double solver_mean = mean_of(solver_s), surrogate_mean = mean_of(surrogate_s);

  std::ostringstream csv;
  csv << "label,lookahead,runs,mean_seconds,samples\n";
  csv << "solver_" << to_string(sc.formulation) << ",0," << runs << ',' << io::format_double(solver_mean) << ','
      << csv_list(solver_s) << '\n';
  csv << "surrogate_" << to_string(model.spec.kind) << ',' << model.spec.lookahead << ',' << runs << ','
      << io::format_double(surrogate_mean) << ',' << csv_list(surrogate_s) << '\n';

  // Sweep models share the checkpoint's architecture with fresh, zeroed
  // parameters: identical arithmetic per pass, bounded outputs.
  io::Manifest report;
  for (std::size_t l : sweep) {
    ModelSpec spec = model.spec;
    spec.lookahead = l;
    Surrogate s = Surrogate::create(spec, InputScaler::identity(spec.input_len()), model.dt, cfg.seed(),
                                    model.target_mode);
    for (std::size_t id = 0; id < s.params.size(); ++id) {
      const bool sigma = s.params.info(id).name.find("sigma") != std::string::npos;
      std::fill(s.params.values(id).begin(), s.params.values(id).end(), sigma ? -40.0f : 0.0f);
    }
    std::vector<double> t;
    for (std::size_t i = 0; i < runs; ++i) {
      SurrogatePredictor pred(s, cfg.seed());
      t.push_back(batch_rollout(pred, terrain, initial, rain, horizon).seconds);
    }
    csv << "sweep_" << to_string(spec.kind) << ',' << l << ',' << runs << ',' << io::format_double(mean_of(t)) << ','
        << csv_list(t) << '\n';
    report.set("sweep_l" + std::to_string(l) + "_seconds", mean_of(t));
    log << "benchmark: lookahead " << l << ": " << io::format_double(mean_of(t)) << " s\n";
  }
  write_text(out / "benchmark.csv", csv.str());

  io::Manifest m;
  m.set("runs", runs);
  m.set("horizon", horizon);
  m.set("formulation", to_string(sc.formulation));
  m.set("arch", to_string(model.spec.kind));
  m.set("solver_mean_seconds", solver_mean);
  m.set("surrogate_mean_seconds", surrogate_mean);
  m.set("speedup", solver_mean / surrogate_mean);
  for (const auto& [k, v] : report.entries()) m.set(k, v);
  write_text(out / "benchmark.txt", m.to_text());
  log << "benchmark: solver " << io::format_double(solver_mean) << " s, surrogate "
      << io::format_double(surrogate_mean) << " s, speedup " << io::format_double(solver_mean / surrogate_mean)
      << "x\n";
  return 0;
}

int run_command(const RunConfig& cfg, std::ostream& log) {
  const std::size_t threads = cfg.get_size("threads");
  set_thread_count(threads ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency()));
  const std::string& c = cfg.command();
  if (c == "simulate") return cmd_simulate(cfg, log);
  if (c == "build-dataset") return cmd_build_dataset(cfg, log);
  if (c == "train") return cmd_train(cfg, log);
  if (c == "forecast") return cmd_forecast(cfg, log);
  if (c == "evaluate") return cmd_evaluate(cfg, log);
  if (c == "mass-audit") return cmd_mass_audit(cfg, log);
  if (c == "benchmark") return cmd_benchmark(cfg, log);
  throw std::invalid_argument("unknown command '" + c + "'");
}

}  // namespace flood::pipeline
