#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "icnet/autodiff.hpp"
#include "icnet/volume.hpp"

namespace icnet::net {

struct FcnConfig {
  /// Filter channels at full resolution; level d uses n * 2^d.
  std::size_t n = 8;
  /// Number of stride-2 down-sampling steps.
  std::size_t depth = 2;
  /// Largest displacement magnitude the tanh head can emit, in voxels.
  double tau = 7.0;
  /// Start the 3-channel output layer at zero so a fresh network predicts the identity.
  bool zero_head = true;

  void validate() const;
  /// Throws ShapeError unless every extent of `shape` is divisible by 2^depth.
  void check_input(const GridShape& shape) const;
};

enum class LayerKind { conv, down, deconv, head };

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::conv;
  ad::Tensor weight;  // {out, in, k, k, k}
  ad::Tensor bias;    // {out}

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Parameters of the flow predictor. Both registration directions share them.
struct FcnParams {
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  friend bool operator==(const FcnParams&, const FcnParams&) = default;
};

/// Layer names, kinds and shapes implied by a configuration, in evaluation order.
std::vector<Layer> architecture(const FcnConfig& config);

/// Kernels uniform in +-sqrt(6 / fan_in), biases zero. Deterministic per seed.
FcnParams init_params(const FcnConfig& config, std::uint64_t seed);

/// Parameters bound to a tape.
struct BoundParams {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

/// Binds parameters as gradient-tracked variables (or constants when `trainable` is false).
BoundParams bind(ad::Tape& tape, const FcnParams& params, bool trainable = true);

/// Gradients of the last backward sweep, in FcnParams layout.
FcnParams gradients(const ad::Tape& tape, const BoundParams& bound, const FcnParams& like);

/// Flow that warps `a` toward `b`. Inputs are single-channel spatial tensors.
ad::Var fcn_forward(const BoundParams& params, const FcnConfig& config, ad::Var a, ad::Var b);

/// (F_ab, F_ba) from the same parameters.
std::pair<ad::Var, ad::Var> fcn_bidirectional(const BoundParams& params, const FcnConfig& config, ad::Var a,
                                              ad::Var b);

/// Inference helpers without gradient tracking.
Flow predict(const FcnParams& params, const FcnConfig& config, const Volume& a, const Volume& b);
std::pair<Flow, Flow> predict_bidirectional(const FcnParams& params, const FcnConfig& config, const Volume& a,
                                            const Volume& b);

/// Checkpoint directory: `manifest.txt` plus one ICVOL (f64) file per tensor.
void save_checkpoint(const std::filesystem::path& dir, const FcnParams& params, const FcnConfig& config);
std::pair<FcnParams, FcnConfig> load_checkpoint(const std::filesystem::path& dir);

inline constexpr const char* kCheckpointMagic = "ICNET-CHECKPOINT 1";

}  // namespace icnet::net
