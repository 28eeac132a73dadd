#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "icnet/autodiff.hpp"
#include "icnet/volume.hpp"

namespace icnet::loss {

/// Sum over voxels, or the same sums divided by the voxel count.
enum class Reduction { sum, mean };

struct LossWeights {
  double alpha = 1.0;   // smoothness
  double beta = 0.1;    // inverse consistency
  double gamma = 1e5;   // anti-folding

  void validate() const;

  /// No inverse-consistency term.
  static LossWeights without_inverse_consistency(LossWeights w) { w.beta = 0.0; return w; }
  /// No anti-folding term.
  static LossWeights without_anti_folding(LossWeights w) { w.gamma = 0.0; return w; }
};

struct LossReport {
  double sim = 0.0;
  double smo = 0.0;
  double inv = 0.0;
  double ant = 0.0;
  double total = 0.0;
  std::size_t folding_count = 0;
};

/// Tape nodes of every term; `total` is the training objective.
struct LossTerms {
  ad::Var sim, smo, inv, ant, total;
};

/// ||B - warp(A, F_ab)||^2 + ||A - warp(B, F_ba)||^2.
ad::Var loss_sim(ad::Var a, ad::Var b, ad::Var f_ab, ad::Var f_ba);

/// Squared forward differences of every component along every axis, both flows.
ad::Var loss_smo(ad::Var f_ab, ad::Var f_ba);

/// ||F_ab - inv(F_ba)||^2 + ||F_ba - inv(F_ab)||^2 with inv(F) = warp(-F, F).
ad::Var loss_inv(ad::Var f_ab, ad::Var f_ba);

/// Sum of d(g + 1) * g^2 over voxels and axes i, where g is the forward
/// difference of component i along axis i and d(q) = |q| for q <= 0, else 0.
ad::Var loss_ant(ad::Var f_ab, ad::Var f_ba);

LossTerms loss_total(ad::Var a, ad::Var b, ad::Var f_ab, ad::Var f_ba, const LossWeights& weights,
                     Reduction reduction = Reduction::sum);

/// Reads the scalar values of `terms` and counts folds in both flows.
LossReport make_report(const LossTerms& terms, const Flow& f_ab, const Flow& f_ba);

/// Evaluates every term for fixed volumes and flows.
LossReport evaluate(const Volume& a, const Volume& b, const Flow& f_ab, const Flow& f_ba, const LossWeights& weights,
                    Reduction reduction = Reduction::sum);

/// Number of (voxel, axis) pairs whose diagonal forward difference g has g + 1 <= 0.
std::size_t folding_count(const Flow& flow);
std::array<std::size_t, 3> folding_count_per_axis(const Flow& flow);

/// "iteration,sim,smo,inv,ant,total,folding_count"
std::string report_csv_header();
std::string report_csv_row(std::size_t iteration, const LossReport& report);

}  // namespace icnet::loss
