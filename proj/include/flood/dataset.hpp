#pragma once

// Training records built from snapshot series.
//
// Input row (length 5 + 2l + 49):
//   [h, v_n, v_s, v_e, v_w]                      state at base_time
//   l × [rain mm/h, offset s]                    forcing per lookahead step
//   9 elevation, 1 normalized elevation,
//   9 Manning n, 1 normalized Manning n,
//   9 slope_x, 9 slope_y, 9 slope_xy,
//   normalized slope_x, normalized slope_y       static attributes
// Target row (length 5l): states at base_time + kΔt, k = 1..l.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flood/container.hpp"
#include "flood/hydro.hpp"
#include "flood/terrain.hpp"

namespace flood {

/// Piecewise-constant rain intensity (m/s); value i holds on [times[i], times[i+1]).
class RainSchedule {
 public:
  RainSchedule() = default;
  RainSchedule(std::vector<double> times, std::vector<double> intensity);
  static RainSchedule constant(double intensity);

  double at(double t) const;
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& intensity() const { return intensity_; }

  void write(io::Manifest& m) const;
  static RainSchedule read(const io::Manifest& m);

  friend bool operator==(const RainSchedule&, const RainSchedule&) = default;

 private:
  std::vector<double> times_{0.0};
  std::vector<double> intensity_{0.0};
};

/// Rain feature for lookahead k: intensity at the middle of step k, in mm/h.
double rain_feature(const RainSchedule& rain, double base_time, std::size_t k, double dt);

/// cells × 49 static attribute rows, normalized with domain-wide statistics.
std::vector<float> attribute_table(const TerrainGrid& terrain);

struct SampleRecord {
  std::vector<float> input;
  std::vector<float> target;
  std::size_t cell_index = 0;
  double base_time = 0.0;
};

/// Records stored contiguously, row-major.
struct RecordSet {
  std::size_t lookahead = 0;
  double dt = 0.0;
  std::vector<float> inputs;
  std::vector<float> targets;
  std::vector<std::uint32_t> cells;
  std::vector<double> base_times;

  std::size_t input_len() const;
  std::size_t output_len() const;
  std::size_t size() const { return cells.size(); }
  bool empty() const { return cells.empty(); }

  std::span<const float> input(std::size_t i) const;
  std::span<const float> target(std::size_t i) const;
  SampleRecord record(std::size_t i) const;

  RecordSet subset(std::span<const std::size_t> indices) const;
  void append(const SampleRecord& r);

  friend bool operator==(const RecordSet&, const RecordSet&) = default;
};

/// One record per (cell, base snapshot) with base index ≤ T−1−l. `cells`
/// restricts the output to those cells (all cells when empty); order is
/// cell-major in the given cell order, then base time ascending.
RecordSet build_records(const SnapshotSeries& series, const TerrainGrid& terrain, const RainSchedule& rain,
                        std::size_t lookahead, std::span<const std::size_t> cells = {});

/// Peak depth per cell over the whole series.
std::vector<double> peak_depths(const SnapshotSeries& series);

/// Equal-count quantile bins of peak depth; round-half-up share per stratum,
/// at least one per non-empty stratum. Returns ascending cell ids.
std::vector<std::size_t> stratified_sample(std::span<const double> peak_depth, double fraction,
                                           std::size_t strata_count, std::uint64_t seed);

struct CellSplit {
  std::vector<std::size_t> train, validation;
};

/// Seeded shuffle; train gets ceil(n/2). Both halves returned ascending.
CellSplit split_train_validation(std::span<const std::size_t> cells, std::uint64_t seed);

inline constexpr double kLowFlowDepth = 0.050;
inline constexpr double kLowFlowVelocity = 0.050;
inline constexpr double kSteadyStateCutoff = 600.0;

RecordSet trim_low_flow(const RecordSet& records);
RecordSet trim_steady_state(const RecordSet& records, double cutoff = kSteadyStateCutoff);

enum class TrimMode { Full, SteadyState, LowFlow };
std::string to_string(TrimMode m);
TrimMode parse_trim_mode(const std::string& s);
RecordSet apply_trim(const RecordSet& records, TrimMode mode);

/// Per-feature z-score over training inputs; zero spread maps to unit scale.
struct InputScaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  static InputScaler fit(const RecordSet& records);
  static InputScaler identity(std::size_t n);
  void apply(std::span<float> rows) const;
  void invert(std::span<float> rows) const;

  void write(io::Manifest& m) const;
  static InputScaler read(const io::Manifest& m);

  friend bool operator==(const InputScaler&, const InputScaler&) = default;
};

struct DatasetParams {
  std::size_t lookahead = 12;
  double fraction = 0.1;
  std::size_t strata = 10;
  std::uint64_t seed = 1;
  TrimMode trim = TrimMode::Full;

  friend bool operator==(const DatasetParams&, const DatasetParams&) = default;
};

struct Dataset {
  DatasetParams params;
  double dt = 5.0;
  std::vector<std::size_t> train_cells, validation_cells;
  InputScaler scaler;
  RainSchedule rain;
  RecordSet train, validation;
  io::Manifest provenance;  ///< source run identifiers, copied through

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Sample, split, build records, trim, and fit the scaler on training records.
Dataset build_dataset(const SnapshotSeries& series, const TerrainGrid& terrain, const RainSchedule& rain,
                      const DatasetParams& params);

io::Container dataset_to_container(const Dataset& d);
Dataset dataset_from_container(const io::Container& c);

}  // namespace flood
