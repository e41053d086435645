#pragma once

// Autoregressive rollout. Pass p feeds the last emitted state of pass p−1
// (depth clamped at zero) back in with the static attributes and the rain
// forcing at the matching absolute times.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flood/dataset.hpp"
#include "flood/hydro.hpp"
#include "flood/terrain.hpp"
#include "flood/train.hpp"

namespace flood {

using CellState = std::array<float, 5>;

/// Anything that maps raw record inputs to l predicted states.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t lookahead() const = 0;
  virtual double dt() const = 0;
  virtual std::string id() const = 0;
  /// `inputs` holds `batch` raw rows; `out` is resized to batch × 5l.
  virtual void predict(std::span<const float> inputs, std::size_t batch, std::vector<float>& out) = 0;
};

class SurrogatePredictor : public Predictor {
 public:
  /// `seed` drives BNN perturbations; deterministic architectures ignore it.
  explicit SurrogatePredictor(const Surrogate& model, std::uint64_t seed = 0, std::string id = {});

  std::size_t lookahead() const override { return model_.spec.lookahead; }
  double dt() const override { return model_.dt; }
  std::string id() const override { return id_; }
  void predict(std::span<const float> inputs, std::size_t batch, std::vector<float>& out) override;

 private:
  const Surrogate& model_;
  std::mt19937_64 rng_;
  std::string id_;
  nn::Tape<float> tape_;
  std::vector<float> scaled_, work_;
};

/// ceil(horizon / (l·Δt))
std::size_t pass_count(double horizon, std::size_t lookahead, double dt);

struct ForecastSeries {
  std::size_t cell_index = 0;
  std::vector<double> times;
  std::vector<CellState> states;
  std::size_t pass_count = 0;
  std::size_t clamp_count = 0;  ///< negative depths clamped before emission
  std::string model_id;
};

ForecastSeries rollout(Predictor& model, const TerrainGrid& terrain, std::size_t cell, const CellState& initial,
                       double base_time, const RainSchedule& rain, double horizon);

/// Whole-domain forecast; states are frame-major (frame × cell × 5).
struct ForecastCube {
  std::size_t rows = 0, cols = 0;
  double base_time = 0.0;
  std::vector<double> times;
  std::vector<float> states;
  std::size_t pass_count = 0;
  std::size_t lookahead = 0;
  std::size_t clamp_count = 0;
  std::string model_id;
  double seconds = 0.0;  ///< wall-clock of the pass loop

  std::size_t cell_count() const { return rows * cols; }
  CellState state(std::size_t frame, std::size_t cell) const;
  /// Emitted frames only (no initial frame).
  SnapshotSeries to_snapshots() const;
  io::Manifest describe() const;
};

/// One batched forward pass over every cell per rollout step.
ForecastCube batch_rollout(Predictor& model, const TerrainGrid& terrain, const Snapshot& initial,
                           const RainSchedule& rain, double horizon);

struct EnsembleCube {
  ForecastCube mean;
  std::vector<float> stddev;  ///< same layout as mean.states
  std::size_t members = 0;
};

/// Repeats batch_rollout with `members` independently seeded predictors.
EnsembleCube ensemble_rollout(const Surrogate& model, const TerrainGrid& terrain, const Snapshot& initial,
                              const RainSchedule& rain, double horizon, std::size_t members, std::uint64_t seed);

}  // namespace flood
