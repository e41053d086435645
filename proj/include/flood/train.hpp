#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flood/container.hpp"
#include "flood/dataset.hpp"
#include "flood/models.hpp"
#include "flood/tensor.hpp"

namespace flood {

/// What the network output stands for. With Increment the current state is
/// added to every lookahead block, so the network learns changes.
enum class TargetMode { Absolute, Increment };
std::string to_string(TargetMode m);
TargetMode parse_target_mode(const std::string& s);

/// A trained network together with everything needed to feed it raw records.
struct Surrogate {
  ModelSpec spec;
  nn::ParamStore params;
  InputScaler scaler;
  double dt = 5.0;
  TargetMode target_mode = TargetMode::Increment;

  /// Fresh, seeded parameters for `spec`.
  static Surrogate create(const ModelSpec& spec, InputScaler scaler, double dt, std::uint64_t seed,
                          TargetMode mode = TargetMode::Increment);

  /// Scales raw input rows and runs inference; returns batch × output_len.
  std::vector<float> predict(std::span<const float> raw_inputs, std::size_t batch, std::mt19937_64* rng,
                             nn::Tape<float>* scratch = nullptr) const;

  /// Maps network outputs to states in place (no-op for Absolute).
  void to_states(std::span<const float> raw_inputs, std::size_t batch, std::span<float> out) const;
  /// Maps target states to network targets in place (inverse of to_states).
  void to_network_targets(std::span<const float> raw_inputs, std::size_t batch, std::span<float> targets) const;
};

/// Checkpoint: manifest with spec, dt, step count and scaler, plus "param/<name>" arrays.
io::Container checkpoint_to_container(const Surrogate& model, const io::Manifest& extra = {});
Surrogate surrogate_from_container(const io::Container& c);

struct TrainConfig {
  std::size_t batch_size = 0;  ///< 0 selects the scaled published size
  std::size_t epochs_phase1 = 40;
  std::size_t epochs_phase2 = 20;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 5e-5;
  std::uint64_t seed = 1;
  TrimMode phase2_trim = TrimMode::LowFlow;
  TargetMode target_mode = TargetMode::Increment;
  /// Gaussian perturbation of the input state during training (m, m/s); 0 disables.
  double state_noise_depth = 0.0;
  double state_noise_velocity = 0.0;

  void validate() const;
};

/// Published batch size for an architecture.
std::size_t table2_batch_size(ModelKind kind);
/// Published batch size scaled by training-set size against a 10⁷-record reference.
std::size_t scaled_batch_size(ModelKind kind, std::size_t train_records);

struct EpochLog {
  std::size_t epoch = 0;  ///< 1-based, continuous across phases
  int phase = 1;
  double loss = 0.0;      ///< mean training MSE over the epoch
  double val_rmse_depth = 0.0;
  double val_rmse_vel = 0.0;
  double seconds = 0.0;
  std::uint64_t param_hash = 0;  ///< FNV-1a over parameter bits after the epoch
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  /// `epoch,phase,loss,val_rmse_depth,val_rmse_vel,seconds`
  std::string to_csv() const;
};

struct ValidationScore {
  double mse = 0.0;
  double rmse = 0.0;  ///< over every output value
  double rmse_depth = 0.0;
  double rmse_vel = 0.0;
  std::size_t records = 0;
};

/// Scores `model` on every record; BNN draws come from `seed`.
ValidationScore evaluate_records(const Surrogate& model, const RecordSet& records, std::uint64_t seed = 0);

struct TrainResult {
  Surrogate model;         ///< best phase-2 checkpoint (phase 1 when phase 2 is skipped)
  Surrogate phase1_model;  ///< best phase-1 checkpoint
  TrainLog log;
  ValidationScore phase1_lowflow;  ///< phase-1 best, scored on low-flow validation records
  ValidationScore phase2_lowflow;  ///< phase-2 best, same records
  bool diverged = false;           ///< non-finite loss; `model` holds the last good checkpoint
  std::string message;
};

/// Phase 1 on the dataset's training records at lr_phase1; phase 2 restarts
/// Adam from the phase-1 optimum on trimmed records at lr_phase2. Each phase
/// keeps its best-validation parameters.
TrainResult train_model(const ModelSpec& spec, const Dataset& data, const TrainConfig& config);

std::uint64_t parameter_hash(const nn::ParamStore& params);

}  // namespace flood
