#include "icnet/losses.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace icnet::loss {
namespace {

void require_flow_var(const char* op, ad::Var f) {
  const auto& d = f.dims();
  if (d.size() != 4 || d[0] != 3) throw ShapeError(std::string(op) + ": flow must be {3, dx, dy, dz}, got " +
                                                   f.value().shape_string());
}

void require_pair(const char* op, ad::Var f_ab, ad::Var f_ba) {
  require_flow_var(op, f_ab);
  require_flow_var(op, f_ba);
  if (f_ab.dims() != f_ba.dims()) throw ShapeError(std::string(op) + ": flows have different shapes");
}

ad::Var flow_smoothness(ad::Var f) {
  ad::Var total = ad::sum(ad::square(ad::forward_difference(f, 0)));
  for (int axis = 1; axis < 3; ++axis) total = ad::add(total, ad::sum(ad::square(ad::forward_difference(f, axis))));
  return total;
}

ad::Var inverse_residual(ad::Var f, ad::Var other) {
  // estimated inverse of `other`, compared against `f`
  const ad::Var inv = ad::warp(ad::scale(other, -1.0), other);
  return ad::sum(ad::square(ad::sub(f, inv)));
}

ad::Var fold_penalty(ad::Var f) {
  const auto& d = f.dims();
  const std::size_t plane = d[1] * d[2] * d[3];
  ad::Var total;
  for (int axis = 0; axis < 3; ++axis) {
    const ad::Var g = ad::forward_difference(f, axis);
    const ad::Var gate = ad::relu(ad::scale(ad::add_scalar(g, 1.0), -1.0));  // |g + 1| where g + 1 <= 0
    const ad::Var term = ad::mul(gate, ad::square(g));
    ad::Tensor select(d, 0.0);
    std::fill(select.data.begin() + static_cast<std::ptrdiff_t>(axis * plane),
              select.data.begin() + static_cast<std::ptrdiff_t>((axis + 1) * plane), 1.0);
    const ad::Var part = ad::masked_weighted_sum(term, select);
    total = axis == 0 ? part : ad::add(total, part);
  }
  return total;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma}) {
    if (!std::isfinite(w) || w < 0.0) throw DataError("loss weights must be finite and non-negative");
  }
}

ad::Var loss_sim(ad::Var a, ad::Var b, ad::Var f_ab, ad::Var f_ba) {
  require_pair("loss_sim", f_ab, f_ba);
  if (a.dims() != b.dims() || a.dims().size() != 4 || a.dims()[0] != 1) {
    throw ShapeError("loss_sim: images must be single-channel and equal in shape");
  }
  const ad::Var warped_a = ad::warp(a, f_ab);
  const ad::Var warped_b = ad::warp(b, f_ba);
  return ad::add(ad::sum(ad::square(ad::sub(b, warped_a))), ad::sum(ad::square(ad::sub(a, warped_b))));
}

ad::Var loss_smo(ad::Var f_ab, ad::Var f_ba) {
  require_pair("loss_smo", f_ab, f_ba);
  return ad::add(flow_smoothness(f_ab), flow_smoothness(f_ba));
}

ad::Var loss_inv(ad::Var f_ab, ad::Var f_ba) {
  require_pair("loss_inv", f_ab, f_ba);
  return ad::add(inverse_residual(f_ab, f_ba), inverse_residual(f_ba, f_ab));
}

ad::Var loss_ant(ad::Var f_ab, ad::Var f_ba) {
  require_pair("loss_ant", f_ab, f_ba);
  return ad::add(fold_penalty(f_ab), fold_penalty(f_ba));
}

LossTerms loss_total(ad::Var a, ad::Var b, ad::Var f_ab, ad::Var f_ba, const LossWeights& weights,
                     Reduction reduction) {
  weights.validate();
  LossTerms t{loss_sim(a, b, f_ab, f_ba), loss_smo(f_ab, f_ba), loss_inv(f_ab, f_ba), loss_ant(f_ab, f_ba), {}};
  if (reduction == Reduction::mean) {
    const auto& d = a.dims();
    const double inv_n = 1.0 / static_cast<double>(d[1] * d[2] * d[3]);
    t.sim = ad::scale(t.sim, inv_n);
    t.smo = ad::scale(t.smo, inv_n);
    t.inv = ad::scale(t.inv, inv_n);
    t.ant = ad::scale(t.ant, inv_n);
  }
  t.total = ad::add(ad::add(t.sim, ad::scale(t.smo, weights.alpha)),
                    ad::add(ad::scale(t.inv, weights.beta), ad::scale(t.ant, weights.gamma)));
  return t;
}

LossReport make_report(const LossTerms& terms, const Flow& f_ab, const Flow& f_ba) {
  return LossReport{terms.sim.item(), terms.smo.item(), terms.inv.item(), terms.ant.item(), terms.total.item(),
                    folding_count(f_ab) + folding_count(f_ba)};
}

LossReport evaluate(const Volume& a, const Volume& b, const Flow& f_ab, const Flow& f_ba, const LossWeights& weights,
                    Reduction reduction) {
  ad::Tape tape;
  const LossTerms terms = loss_total(tape.constant(ad::Tensor::from_volume(a)), tape.constant(ad::Tensor::from_volume(b)),
                                     tape.constant(ad::Tensor::from_volume(f_ab)),
                                     tape.constant(ad::Tensor::from_volume(f_ba)), weights, reduction);
  return make_report(terms, f_ab, f_ba);
}

std::array<std::size_t, 3> folding_count_per_axis(const Flow& flow) {
  require_flow(flow, "folding_count");
  const GridShape& s = flow.shape();
  std::array<std::size_t, 3> counts{};
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        if (x + 1 < s.dx && flow.at(0, x + 1, y, z) - flow.at(0, x, y, z) + 1.0 <= 0.0) ++counts[0];
        if (y + 1 < s.dy && flow.at(1, x, y + 1, z) - flow.at(1, x, y, z) + 1.0 <= 0.0) ++counts[1];
        if (z + 1 < s.dz && flow.at(2, x, y, z + 1) - flow.at(2, x, y, z) + 1.0 <= 0.0) ++counts[2];
      }
    }
  }
  return counts;
}

std::size_t folding_count(const Flow& flow) {
  const auto c = folding_count_per_axis(flow);
  return c[0] + c[1] + c[2];
}

std::string report_csv_header() { return "iteration,sim,smo,inv,ant,total,folding_count"; }

std::string report_csv_row(std::size_t iteration, const LossReport& r) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << iteration << ',' << r.sim << ',' << r.smo
      << ',' << r.inv << ',' << r.ant << ',' << r.total << ',' << r.folding_count;
  return out.str();
}

}  // namespace icnet::loss
