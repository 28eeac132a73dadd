#include "icnet/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "icnet/eval.hpp"
#include "icnet/sampler.hpp"

namespace icnet::experiment {
namespace {

double mean_distance(const LandmarkSet& p, const LandmarkSet& q) { return eval::landmark_error(p, q).mean; }

}  // namespace

PairOutcome evaluate_heldout(const net::FcnParams& params, const train::TrainConfig& config, const data::NamedPair& np) {
  const auto& p = np.pair;
  const auto [f_ab, f_ba] = net::predict_bidirectional(params, config.fcn, p.a, p.b);
  PairOutcome out;
  out.pair = np.name;
  out.report = loss::evaluate(p.a, p.b, f_ab, f_ba, config.weights, config.reduction);
  const Flow zero(p.a.shape(), 3, 0.0);
  out.identity_sim = loss::evaluate(p.a, p.b, zero, zero, config.weights, config.reduction).sim;
  out.folds_ab = loss::folding_count(f_ab);
  out.folds_ba = loss::folding_count(f_ba);

  // F_ba samples B at x + F_ba(x) for x on A's grid, so it carries A's points onto B.
  const eval::AtlasLandmarks mapping{f_ba, p.landmarks_a};
  const LandmarkSet mapped = eval::propagate_landmarks(std::span(&mapping, 1));
  out.landmark_error = mean_distance(mapped, p.landmarks_b);
  out.landmark_initial = mean_distance(p.landmarks_a, p.landmarks_b);

  const LabelMap warped = sampler::warp_nearest(p.labels_a, f_ab);
  double dice = 0.0;
  const auto labels = eval::foreground_labels(p.labels_b);
  for (auto label : labels) dice += eval::overlap_metrics(warped, p.labels_b, label).dsc;
  out.dice = labels.empty() ? 0.0 : dice / static_cast<double>(labels.size());
  return out;
}

std::vector<VariantResult> run_ablation(const std::vector<data::NamedPair>& pairs, const AblationOptions& options,
                                        const std::function<void(const std::string&)>& on_variant) {
  if (options.heldout < 1 || pairs.size() < options.heldout + 1) {
    throw DataError("ablation needs at least " + std::to_string(options.heldout + 1) + " pairs, got " +
                    std::to_string(pairs.size()));
  }
  const std::vector<data::NamedPair> train_pairs(pairs.begin(), pairs.end() - static_cast<std::ptrdiff_t>(options.heldout));
  const std::vector<Volume> volumes = data::pair_volumes(train_pairs);

  std::vector<VariantResult> results;
  const loss::LossWeights full = options.config.weights;
  const std::pair<std::string, loss::LossWeights> variants[] = {
      {"full", full},
      {"no_inverse", loss::LossWeights::without_inverse_consistency(full)},
      {"no_antifold", loss::LossWeights::without_anti_folding(full)},
  };
  for (const auto& [name, weights] : variants) {
    if (on_variant) on_variant(name);
    VariantResult r;
    r.name = name;
    r.config = options.config;
    r.config.weights = weights;
    r.trained = train::train(volumes, r.config);
    for (std::size_t k = pairs.size() - options.heldout; k < pairs.size(); ++k) {
      r.outcomes.push_back(evaluate_heldout(r.trained.params, r.config, pairs[k]));
    }
    results.push_back(std::move(r));
  }
  return results;
}

void write_ablation_table(const std::filesystem::path& path, std::span<const VariantResult> variants) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "variant,pair,alpha,beta,gamma,sim,smo,inv,ant,total,folding_count,folds_ab,folds_ba,identity_sim,"
         "landmark_error,landmark_initial,dice\n";
  for (const auto& v : variants) {
    for (const auto& o : v.outcomes) {
      const auto& r = o.report;
      out << v.name << ',' << o.pair << ',' << v.config.weights.alpha << ',' << v.config.weights.beta << ','
          << v.config.weights.gamma << ',' << r.sim << ',' << r.smo << ',' << r.inv << ',' << r.ant << ',' << r.total
          << ',' << r.folding_count << ',' << o.folds_ab << ',' << o.folds_ba << ',' << o.identity_sim << ','
          << o.landmark_error << ',' << o.landmark_initial << ',' << o.dice << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace icnet::experiment
