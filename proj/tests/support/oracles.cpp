#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace oracle {

using icnet::ad::Tape;
using icnet::ad::Tensor;
using icnet::ad::Var;

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& leaves) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : leaves) vars.push_back(tape.constant(t));
  return fn(tape, vars).item();
}

std::vector<Tensor> analytic_gradient(const ScalarFn& fn, const std::vector<Tensor>& leaves) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : leaves) vars.push_back(tape.variable(t));
  const Var out = fn(tape, vars);
  tape.backward(out);
  std::vector<Tensor> grads;
  for (const Var& v : vars) grads.push_back(tape.grad(v));
  return grads;
}

double directional(const ScalarFn& fn, const std::vector<Tensor>& leaves, const std::vector<Tensor>& dir, double h) {
  std::vector<Tensor> plus = leaves, minus = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      plus[l].data[i] += h * dir[l].data[i];
      minus[l].data[i] -= h * dir[l].data[i];
    }
  }
  return (evaluate(fn, plus) - evaluate(fn, minus)) / (2.0 * h);
}

}  // namespace

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale;
}

GradientCheck check_gradient(const ScalarFn& fn, const std::vector<Tensor>& leaves, std::uint64_t seed, int directions,
                             double step) {
  const auto grads = analytic_gradient(fn, leaves);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  GradientCheck result{0.0, std::numeric_limits<double>::infinity()};
  for (int d = 0; d < directions; ++d) {
    std::vector<Tensor> dir = leaves;
    double analytic = 0.0;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      for (std::size_t i = 0; i < leaves[l].size(); ++i) {
        dir[l].data[i] = normal(rng);
        analytic += grads[l].data[i] * dir[l].data[i];
      }
    }
    const double numeric = directional(fn, leaves, dir, step);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric));
    result.smallest_directional = std::min(result.smallest_directional, std::abs(analytic));
  }
  return result;
}

GradientCheck check_gradient_coordinates(const ScalarFn& fn, const std::vector<Tensor>& leaves, double step) {
  const auto grads = analytic_gradient(fn, leaves);
  GradientCheck result{0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      std::vector<Tensor> dir;
      for (const auto& t : leaves) dir.emplace_back(t.dims, 0.0);
      dir[l].data[i] = 1.0;
      const double numeric = directional(fn, leaves, dir, step);
      const double analytic = grads[l].data[i];
      // coordinates with a vanishing derivative are compared absolutely
      const double err = std::max(std::abs(analytic), std::abs(numeric)) < 1e-8 ? std::abs(analytic - numeric)
                                                                                 : relative_error(analytic, numeric);
      result.max_relative_error = std::max(result.max_relative_error, err);
      result.smallest_directional = std::min(result.smallest_directional, std::abs(analytic));
    }
  }
  return result;
}

Tensor random_tensor(const std::vector<std::size_t>& dims, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(dims, 0.0);
  for (double& v : t.data) v = u(rng);
  return t;
}

Volume random_volume(const GridShape& shape, std::size_t channels, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(shape, channels, 0.0);
  for (double& x : v.data()) x = u(rng);
  return v;
}

LabelMap random_labels(const GridShape& shape, int num_labels, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, num_labels - 1);
  LabelMap m(shape);
  for (auto& l : m.labels()) l = static_cast<LabelMap::Label>(u(rng));
  return m;
}

Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const long C = static_cast<long>(x.dims[0]), X = static_cast<long>(x.dims[1]), Y = static_cast<long>(x.dims[2]),
             Z = static_cast<long>(x.dims[3]);
  const long O = static_cast<long>(w.dims[0]);
  const long OX = (X - 1) / stride + 1, OY = (Y - 1) / stride + 1, OZ = (Z - 1) / stride + 1;
  Tensor out({static_cast<std::size_t>(O), static_cast<std::size_t>(OX), static_cast<std::size_t>(OY),
              static_cast<std::size_t>(OZ)},
             0.0);
  auto xin = [&](long c, long i, long j, long k) { return x.data[static_cast<std::size_t>(((c * Z + k) * Y + j) * X + i)]; };
  for (long o = 0; o < O; ++o) {
    for (long k = 0; k < OZ; ++k) {
      for (long j = 0; j < OY; ++j) {
        for (long i = 0; i < OX; ++i) {
          double s = b.data[static_cast<std::size_t>(o)];
          for (long c = 0; c < C; ++c) {
            for (long dz = 0; dz < 3; ++dz) {
              for (long dy = 0; dy < 3; ++dy) {
                for (long dx = 0; dx < 3; ++dx) {
                  const long xi = i * stride + dx - 1, yi = j * stride + dy - 1, zi = k * stride + dz - 1;
                  if (xi < 0 || yi < 0 || zi < 0 || xi >= X || yi >= Y || zi >= Z) continue;
                  s += w.data[static_cast<std::size_t>((((o * C + c) * 3 + dz) * 3 + dy) * 3 + dx)] * xin(c, xi, yi, zi);
                }
              }
            }
          }
          out.data[static_cast<std::size_t>(((o * OZ + k) * OY + j) * OX + i)] = s;
        }
      }
    }
  }
  return out;
}

Tensor naive_deconv3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t C = x.dims[0], X = x.dims[1], Y = x.dims[2], Z = x.dims[3];
  const std::size_t O = w.dims[0];
  Tensor out({O, 2 * X, 2 * Y, 2 * Z}, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t k = 0; k < 2 * Z; ++k) {
      for (std::size_t j = 0; j < 2 * Y; ++j) {
        for (std::size_t i = 0; i < 2 * X; ++i) {
          double s = b.data[o];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t widx = (((o * C + c) * 2 + k % 2) * 2 + j % 2) * 2 + i % 2;
            s += w.data[widx] * x.data[((c * Z + k / 2) * Y + j / 2) * X + i / 2];
          }
          out.data[((o * 2 * Z + k) * 2 * Y + j) * 2 * X + i] = s;
        }
      }
    }
  }
  return out;
}

double clamped_voxel(const Volume& vol, std::size_t channel, long qx, long qy, long qz) {
  const auto clamp = [](long q, std::size_t n) { return static_cast<std::size_t>(std::clamp(q, 0L, static_cast<long>(n) - 1)); };
  const GridShape& s = vol.shape();
  return vol.at(channel, clamp(qx, s.dx), clamp(qy, s.dy), clamp(qz, s.dz));
}

std::size_t brute_folding_count(const Volume& flow) {
  const GridShape& s = flow.shape();
  std::size_t count = 0;
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        if (x + 1 < s.dx && flow.at(0, x + 1, y, z) - flow.at(0, x, y, z) + 1.0 <= 0.0) ++count;
        if (y + 1 < s.dy && flow.at(1, x, y + 1, z) - flow.at(1, x, y, z) + 1.0 <= 0.0) ++count;
        if (z + 1 < s.dz && flow.at(2, x, y, z + 1) - flow.at(2, x, y, z) + 1.0 <= 0.0) ++count;
      }
    }
  }
  return count;
}

double brute_fold_penalty(const Volume& flow) {
  const GridShape& s = flow.shape();
  double total = 0.0;
  auto term = [](double g) { return g + 1.0 <= 0.0 ? -(g + 1.0) * g * g : 0.0; };
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        if (x + 1 < s.dx) total += term(flow.at(0, x + 1, y, z) - flow.at(0, x, y, z));
        if (y + 1 < s.dy) total += term(flow.at(1, x, y + 1, z) - flow.at(1, x, y, z));
        if (z + 1 < s.dz) total += term(flow.at(2, x, y, z + 1) - flow.at(2, x, y, z));
      }
    }
  }
  return total;
}

Confusion brute_confusion(const LabelMap& pred, const LabelMap& truth, LabelMap::Label label) {
  Confusion c;
  const GridShape& s = truth.shape();
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        const bool p = pred.at(x, y, z) == label, t = truth.at(x, y, z) == label;
        if (p && t) ++c.tp;
        if (p && !t) ++c.fp;
        if (!p && t) ++c.fn;
      }
    }
  }
  return c;
}

std::vector<Point3> brute_surface(const LabelMap& labels, LabelMap::Label label) {
  const GridShape& s = labels.shape();
  const long X = static_cast<long>(s.dx), Y = static_cast<long>(s.dy), Z = static_cast<long>(s.dz);
  const long nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<Point3> out;
  for (long z = 0; z < Z; ++z) {
    for (long y = 0; y < Y; ++y) {
      for (long x = 0; x < X; ++x) {
        if (labels.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) != label) {
          continue;
        }
        bool boundary = false;
        for (const auto& d : nb) {
          const long a = x + d[0], b = y + d[1], c = z + d[2];
          if (a < 0 || b < 0 || c < 0 || a >= X || b >= Y || c >= Z ||
              labels.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b), static_cast<std::size_t>(c)) != label) {
            boundary = true;
          }
        }
        if (boundary) out.push_back({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
      }
    }
  }
  return out;
}

BruteSurface brute_surface_distances(const LabelMap& pred, const LabelMap& truth, LabelMap::Label label) {
  const auto sp = brute_surface(pred, label);
  const auto st = brute_surface(truth, label);
  auto directed = [](const std::vector<Point3>& from, const std::vector<Point3>& to, double& mean, double& mx) {
    double sum = 0.0;
    mx = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        best = std::min(best, std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                        (p[2] - q[2]) * (p[2] - q[2])));
      }
      sum += best;
      mx = std::max(mx, best);
    }
    mean = sum / static_cast<double>(from.size());
  };
  double m1, x1, m2, x2;
  directed(sp, st, m1, x1);
  directed(st, sp, m2, x2);
  return {(m1 + m2) / 2.0, std::max(x1, x2)};
}

LabelMap brute_majority(const std::vector<LabelMap>& maps) {
  LabelMap out(maps.front().shape());
  for (std::size_t i = 0; i < out.voxels(); ++i) {
    std::map<LabelMap::Label, int> counts;
    for (const auto& m : maps) ++counts[m.labels()[i]];
    LabelMap::Label best = 0;
    int best_count = -1;
    for (const auto& [label, count] : counts) {  // ascending labels
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    out.labels()[i] = best;
  }
  return out;
}

}  // namespace oracle
