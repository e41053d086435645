#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "flood/container.hpp"
#include "flood/raster.hpp"
#include "flood/terrain.hpp"

namespace flood {

enum class Formulation { DiffusionWave, FullMomentum };
enum class BoundaryMode { Closed, FreeOutfall };

std::string to_string(Formulation f);
Formulation parse_formulation(const std::string& s);

/// 1 in/hr expressed in m/s.
inline constexpr double kInchPerHour = 0.0254 / 3600.0;

struct SolverConfig {
  Formulation formulation = Formulation::DiffusionWave;
  double gravity = 9.80665;
  double wet_threshold = 1e-6;
  double courant_target = 0.5;
  double max_dt = 5.0;
  double min_dt = 1e-3;
  double output_interval = 5.0;
  double rainfall_intensity = 0.0;  ///< m/s, uniform over the domain
  double duration = 3600.0;
  BoundaryMode boundary = BoundaryMode::Closed;
  /// Slope floor inside the diffusivity used for the diffusion-wave time step.
  double diffusive_slope_floor = 1e-3;
  /// Energy slope assumed across free-outfall edges.
  double outfall_slope = 1e-3;
  double velocity_guard = 20.0;
  std::size_t max_substeps_per_interval = 1'000'000;

  /// Defaults tuned per formulation. The diffusion-wave flux limiter keeps
  /// the scheme monotone at any step, so its floor can sit much higher.
  static SolverConfig defaults(Formulation f);

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

/// Per-cell depth plus signed face velocities (positive = outflow through
/// that face). The cell-centred unit discharges carry full-momentum state and
/// stay zero under the diffusion wave.
struct SimState {
  RasterD depth;
  RasterD vel_n, vel_s, vel_e, vel_w;
  RasterD discharge_x, discharge_y;
  double sim_time = 0.0;
  double rain_volume = 0.0;     ///< cumulative m³ added by rain
  double outflow_volume = 0.0;  ///< cumulative m³ lost through open edges

  static SimState dry(std::size_t rows, std::size_t cols);
  std::size_t rows() const noexcept { return depth.rows(); }
  std::size_t cols() const noexcept { return depth.cols(); }
};

double domain_mass(const SimState& s, const TerrainGrid& terrain);

SimState step_diffusion(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config, double dt);
SimState step_full_momentum(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config, double dt);
SimState step(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config, double dt);

/// Stability bound before clamping to [min_dt, max_dt]; +inf for an all-dry state.
double stable_dt_bound(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config);
double compute_stable_dt(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config);

/// Snapshot at storage precision, as persisted.
struct Snapshot {
  double sim_time = 0.0;
  Raster<float> depth, vel_n, vel_s, vel_e, vel_w;

  static Snapshot from_state(const SimState& s);
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

struct SnapshotSeries {
  std::size_t rows = 0, cols = 0;
  std::vector<Snapshot> frames;

  double spacing() const;  ///< seconds between consecutive frames
  friend bool operator==(const SnapshotSeries&, const SnapshotSeries&) = default;
};

struct MassAuditRow {
  double sim_time = 0.0;
  double domain_mass = 0.0;
  double rain_input_cumulative = 0.0;
  double boundary_outflow_cumulative = 0.0;
  double imbalance_ratio = 1.0;
};

struct SimulationResult {
  SnapshotSeries snapshots;
  std::vector<MassAuditRow> audit;
  std::size_t substeps = 0;
  SimState final_state;
};

/// Runs from an all-dry start, one snapshot per output interval plus t=0.
SimulationResult run_simulation(const TerrainGrid& terrain, const SolverConfig& config);
SimulationResult run_simulation(const TerrainGrid& terrain, const SolverConfig& config, SimState initial);

io::Container snapshots_to_container(const SnapshotSeries& series, const io::Manifest& extra = {});
SnapshotSeries snapshots_from_container(const io::Container& c);

std::string audit_to_csv(const std::vector<MassAuditRow>& rows);
std::vector<MassAuditRow> audit_from_csv(const std::string& text);

}  // namespace flood
