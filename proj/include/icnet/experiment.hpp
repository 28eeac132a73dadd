#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icnet/dataset.hpp"
#include "icnet/trainer.hpp"

namespace icnet::experiment {

/// Held-out evaluation of a trained model on one pair with known ground truth.
struct PairOutcome {
  std::string pair;
  loss::LossReport report;
  /// sim of the identity flows (what an untrained, zero-output model scores).
  double identity_sim = 0.0;
  std::size_t folds_ab = 0;
  std::size_t folds_ba = 0;
  /// Mean distance between A's landmarks mapped through F_ba and B's landmarks.
  double landmark_error = 0.0;
  /// Mean distance between A's and B's landmarks before registration.
  double landmark_initial = 0.0;
  /// Mean Dice of A's labels warped onto B against B's labels.
  double dice = 0.0;
};

PairOutcome evaluate_heldout(const net::FcnParams& params, const train::TrainConfig& config, const data::NamedPair& pair);

struct VariantResult {
  std::string name;
  train::TrainConfig config;
  train::TrainResult trained;
  std::vector<PairOutcome> outcomes;
};

struct AblationOptions {
  train::TrainConfig config;
  /// The last `heldout` pairs are held out; the rest supply training volumes.
  std::size_t heldout = 5;
};

/// Trains the full objective, the objective without inverse consistency
/// (beta = 0) and without anti-folding (gamma = 0) on the same volumes, and
/// evaluates each on the held-out pairs. `on_variant` is told each name before
/// that variant starts.
std::vector<VariantResult> run_ablation(const std::vector<data::NamedPair>& pairs, const AblationOptions& options,
                                        const std::function<void(const std::string&)>& on_variant = {});

/// variant,pair,alpha,beta,gamma,sim,smo,inv,ant,total,folding_count,folds_ab,folds_ba,identity_sim,
/// landmark_error,landmark_initial,dice
void write_ablation_table(const std::filesystem::path& path, std::span<const VariantResult> variants);

}  // namespace icnet::experiment
