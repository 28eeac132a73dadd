#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icnet/losses.hpp"
#include "icnet/network.hpp"

namespace icnet::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates, laid out like the parameters they track.
struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;

  static AdamState like(const net::FcnParams& params);
};

/// One bias-corrected Adam update of every weight and bias tensor, in place.
void adam_step(net::FcnParams& params, const net::FcnParams& grads, AdamState& state, double learning_rate,
               const AdamHyper& hyper = {});

struct TrainConfig {
  loss::LossWeights weights{};
  loss::Reduction reduction = loss::Reduction::sum;
  double learning_rate = 5e-4;
  std::size_t iterations = 2000;
  double validation_fraction = 0.1;
  /// Validation losses are recorded every this many iterations.
  std::size_t validation_interval = 50;
  /// Cap on the number of fixed validation pairs.
  std::size_t validation_pairs = 10;
  std::uint64_t seed = 1;
  net::FcnConfig fcn{};
  double refine_learning_rate = 1e-5;
  std::size_t refine_iterations = 100;
  AdamHyper adam{};

  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
/// Inverse of parse_train_config, every key spelled out.
std::string format_train_config(const TrainConfig& config);

struct CurveRow {
  std::size_t iteration = 0;
  bool validation = false;
  loss::LossReport report;
};

std::string curve_csv_header();
std::string curve_csv_row(const CurveRow& row);
void write_curve_csv(const std::filesystem::path& path, std::span<const CurveRow> rows);

/// Training/validation partition of dataset indices, fixed per seed.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::pair<std::size_t, std::size_t>> validation_pairs;
};

Split make_split(std::size_t dataset_size, const TrainConfig& config);

struct TrainResult {
  net::FcnParams params;
  std::vector<CurveRow> curve;
  Split split;
};

using RowCallback = std::function<void(const CurveRow&)>;

/// Loss report and parameter gradients for one pair.
struct PairGradient {
  loss::LossReport report;
  net::FcnParams grads;
};

PairGradient pair_gradient(const net::FcnParams& params, const TrainConfig& config, const Volume& a, const Volume& b);

/// Forward-only loss report for one pair.
loss::LossReport evaluate_pair(const net::FcnParams& params, const TrainConfig& config, const Volume& a,
                               const Volume& b);

/// Adam over random unordered training pairs, one pair per step. Starts from
/// `initial` when given, otherwise from init_params(config.fcn, config.seed).
TrainResult train(std::span<const Volume> dataset, const TrainConfig& config,
                  const std::optional<net::FcnParams>& initial = std::nullopt, const RowCallback& on_row = {});

/// Adapts a copy of `params` to one pair with fresh Adam state.
net::FcnParams refine(const net::FcnParams& params, const TrainConfig& config, const Volume& a, const Volume& b);

/// One grid-search candidate and its validation score.
struct GridPoint {
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t folds = 0;
  double score = 0.0;  // mean validation Dice if labels were given, else -mean validation sim
};

/// Decade grid 1e-5 ... 1e5.
std::vector<double> decade_grid();

/// Trains one model per (alpha, beta) and scores it on the validation pairs.
/// Candidates are ranked by fold count, then by descending score.
std::vector<GridPoint> grid_search(std::span<const Volume> dataset, std::span<const LabelMap> labels,
                                   const TrainConfig& config, std::span<const double> alphas,
                                   std::span<const double> betas);

}  // namespace icnet::train
