#pragma once

// Surrogate architectures. Each maps a batch of input rows of length
// 5 + 2l + 49 to output rows of length 5l laid out as l blocks
// [h, v_n, v_s, v_e, v_w].

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flood/container.hpp"
#include "flood/tensor.hpp"

namespace flood {

enum class ModelKind { Mlp, Bnn, Lstm, PhyDnn };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

inline constexpr std::size_t kStateWidth = 5;
inline constexpr std::size_t kAttributeWidth = 49;

inline constexpr std::size_t input_length(std::size_t lookahead) { return kStateWidth + 2 * lookahead + kAttributeWidth; }
inline constexpr std::size_t output_length(std::size_t lookahead) { return kStateWidth * lookahead; }

struct ModelSpec {
  ModelKind kind = ModelKind::Mlp;
  std::size_t depth = 10;         ///< hidden layers (d)
  std::size_t width = 1000;       ///< hidden units (H)
  std::size_t branch_depth = 0;   ///< PhyDNN branch layers (d_s)
  std::size_t lookahead = 12;     ///< l
  double bnn_sigma_init = -6.0;   ///< initial log-scale of BNN perturbations

  std::size_t input_len() const { return input_length(lookahead); }
  std::size_t output_len() const { return output_length(lookahead); }

  /// Published training configuration for each architecture.
  static ModelSpec table2(ModelKind kind, std::size_t lookahead = 12);

  /// Throws std::invalid_argument on an unbuildable spec.
  void validate() const;

  void write(io::Manifest& m) const;
  static ModelSpec read(const io::Manifest& m);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Closed-form scalar parameter count.
std::size_t parameter_count(const ModelSpec& spec);

/// Declares the parameter arrays for `spec` in a fixed order. Values are left
/// for ParamStore::initialize.
void declare_parameters(const ModelSpec& spec, nn::ParamStore& store);

template <typename T>
nn::Var forward_mlp(nn::Tape<T>& tape, const ModelSpec& spec, const nn::ParamSet<T>& params, nn::Var input);
/// Draws one set of perturbations per call, shared by every row of the batch.
template <typename T>
nn::Var forward_bnn(nn::Tape<T>& tape, const ModelSpec& spec, const nn::ParamSet<T>& params, nn::Var input,
                    std::mt19937_64& rng);
template <typename T>
nn::Var forward_lstm(nn::Tape<T>& tape, const ModelSpec& spec, const nn::ParamSet<T>& params, nn::Var input);
template <typename T>
nn::Var forward_phydnn(nn::Tape<T>& tape, const ModelSpec& spec, const nn::ParamSet<T>& params, nn::Var input);

/// Dispatch on spec.kind. `rng` is required for the BNN and ignored otherwise.
template <typename T>
nn::Var forward(nn::Tape<T>& tape, const ModelSpec& spec, const nn::ParamSet<T>& params, nn::Var input,
                std::mt19937_64* rng);

/// Inference on `batch` rows of row-major input; returns batch × output_len.
std::vector<float> predict(const ModelSpec& spec, const nn::ParamStore& params, std::span<const float> inputs,
                           std::size_t batch, std::mt19937_64* rng, nn::Tape<float>* scratch = nullptr);

/// predict() into `out`, with `work` as a reusable hidden-layer buffer.
void predict_into(const ModelSpec& spec, const nn::ParamStore& params, std::span<const float> inputs,
                  std::size_t batch, std::mt19937_64* rng, nn::Tape<float>* scratch, std::vector<float>& out,
                  std::vector<float>& work);

}  // namespace flood
