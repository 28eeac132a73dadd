#include "icnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "icnet/sampler.hpp"

namespace icnet::synth {
namespace {

double gaussian(const Point3& p, const Point3& c, double sigma) {
  const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
  return std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma));
}

// Most negative forward difference over every component and axis.
double min_forward_difference(const Flow& f) {
  const GridShape& s = f.shape();
  double lo = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t z = 0; z < s.dz; ++z) {
      for (std::size_t y = 0; y < s.dy; ++y) {
        for (std::size_t x = 0; x < s.dx; ++x) {
          const double v = f.at(c, x, y, z);
          if (x + 1 < s.dx) lo = std::min(lo, f.at(c, x + 1, y, z) - v);
          if (y + 1 < s.dy) lo = std::min(lo, f.at(c, x, y + 1, z) - v);
          if (z + 1 < s.dz) lo = std::min(lo, f.at(c, x, y, z + 1) - v);
        }
      }
    }
  }
  return lo;
}

double max_abs(const Volume& v) {
  double m = 0.0;
  for (double x : v.data()) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void WidthRange::validate() const {
  if (!(min > 0.0) || !(max >= min) || !std::isfinite(max)) {
    throw DataError("blob widths must satisfy 0 < min <= max, got " + std::to_string(min) + " and " +
                    std::to_string(max));
  }
}

std::vector<Blob> random_blobs(std::uint64_t seed, const GridShape& shape, std::size_t count, WidthRange widths) {
  shape.validate();
  widths.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sigma(widths.min, widths.max);
  std::uniform_real_distribution<double> amplitude(0.6, 1.4);
  std::vector<Blob> blobs;
  for (std::size_t k = 0; k < count; ++k) {
    Blob b;
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t extent = shape.extent(axis);
      const std::size_t margin = std::min<std::size_t>(extent / 4, (extent - 1) / 2);
      std::uniform_int_distribution<std::size_t> pos(margin, extent - 1 - margin);
      b.center[axis] = static_cast<double>(pos(rng));
    }
    b.sigma = sigma(rng);
    b.amplitude = amplitude(rng);
    blobs.push_back(b);
  }
  return blobs;
}

std::vector<Blob> jitter_blobs(const std::vector<Blob>& blobs, std::uint64_t seed, double amount,
                               const GridShape& shape) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-amount, amount);
  std::uniform_real_distribution<double> factor(0.85, 1.15);
  std::vector<Blob> out = blobs;
  for (auto& b : out) {
    for (int axis = 0; axis < 3; ++axis) {
      const double top = static_cast<double>(shape.extent(axis) - 1);
      b.center[axis] = std::clamp(b.center[axis] + shift(rng), 0.0, top);
    }
    b.sigma *= factor(rng);
    b.amplitude *= factor(rng);
  }
  return out;
}

BlobVolume render_blobs(const GridShape& shape, const std::vector<Blob>& blobs) {
  shape.validate();
  Volume raw(shape, 1, 0.0);
  LabelMap labels(shape);
  std::vector<double> dominant(shape.voxels(), 0.0);
  for (std::size_t z = 0; z < shape.dz; ++z) {
    for (std::size_t y = 0; y < shape.dy; ++y) {
      for (std::size_t x = 0; x < shape.dx; ++x) {
        const Point3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        const std::size_t i = labels.index(x, y, z);
        double total = 0.0;
        for (std::size_t k = 0; k < blobs.size(); ++k) {
          const double v = blobs[k].amplitude * gaussian(p, blobs[k].center, blobs[k].sigma);
          total += v;
          if (v > dominant[i]) {
            dominant[i] = v;
            labels.labels()[i] = static_cast<LabelMap::Label>(k + 1);
          }
        }
        raw.data()[i] = total;
      }
    }
  }
  const double peak = *std::max_element(raw.data().begin(), raw.data().end());
  for (std::size_t i = 0; i < dominant.size(); ++i) {
    if (dominant[i] < 0.1 * peak) labels.labels()[i] = 0;
  }
  LandmarkSet landmarks;
  for (const auto& b : blobs) landmarks.push_back(b.center);
  return {zscore_normalize(raw), std::move(labels), std::move(landmarks)};
}

BlobVolume make_blob_volume(std::uint64_t seed, const GridShape& shape, std::size_t num_blobs, WidthRange widths) {
  return render_blobs(shape, random_blobs(seed, shape, num_blobs, widths));
}

Flow make_smooth_flow(std::uint64_t seed, const GridShape& shape, double max_disp) {
  shape.validate();
  const double min_extent = static_cast<double>(shape.min_extent());
  if (!(max_disp >= 0.0) || !(max_disp < 0.4 * min_extent)) {
    throw DataError("make_smooth_flow: max_disp must lie in [0, 0.4 * min extent)");
  }
  Flow flow(shape, 3, 0.0);
  if (max_disp == 0.0) return flow;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> width(0.2 * min_extent, 0.35 * min_extent);
  constexpr int kBumps = 4;
  struct Bump {
    Point3 center;
    Point3 direction;
    double sigma;
  };
  std::vector<Bump> bumps;
  for (int k = 0; k < kBumps; ++k) {
    Bump b{};
    for (int axis = 0; axis < 3; ++axis) {
      std::uniform_real_distribution<double> pos(0.0, static_cast<double>(shape.extent(axis) - 1));
      b.center[axis] = pos(rng);
      b.direction[axis] = unit(rng);
    }
    b.sigma = width(rng);
    bumps.push_back(b);
  }
  for (std::size_t z = 0; z < shape.dz; ++z) {
    for (std::size_t y = 0; y < shape.dy; ++y) {
      for (std::size_t x = 0; x < shape.dx; ++x) {
        const Point3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        for (const auto& b : bumps) {
          const double w = gaussian(p, b.center, b.sigma);
          for (std::size_t c = 0; c < 3; ++c) flow.at(c, x, y, z) += w * b.direction[c];
        }
      }
    }
  }

  const double peak = max_abs(flow);
  if (!(peak > 0.0) || !std::isfinite(peak)) throw NumericError("make_smooth_flow: degenerate random field");
  // peak * (max_disp / peak) can round above max_disp
  double factor = (max_disp / peak) * (1.0 - 1e-12);
  const double steepest = -min_forward_difference(flow);
  if (steepest > 0.0) factor = std::min(factor, 0.45 / steepest);
  for (double& v : flow.data()) v *= factor;

  if (max_abs(flow) > max_disp || !(min_forward_difference(flow) > -0.5)) {
    throw NumericError("make_smooth_flow: could not satisfy displacement and fold-free bounds");
  }
  return flow;
}

LandmarkSet invert_points(const Flow& flow, const LandmarkSet& points, double tolerance,
                          std::size_t max_iterations) {
  require_flow(flow, "invert_points");
  LandmarkSet out;
  for (const auto& target : points) {
    Point3 y = target;
    bool converged = false;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      const auto d = sampler::trilinear_sample(flow, y);
      const Point3 next{target[0] - d[0], target[1] - d[1], target[2] - d[2]};
      const double step = std::max({std::abs(next[0] - y[0]), std::abs(next[1] - y[1]), std::abs(next[2] - y[2])});
      y = next;
      if (step < tolerance * 1e-3) {
        converged = true;
        break;
      }
    }
    const Point3 back = sampler::map_point(flow, y);
    const double residual =
        std::max({std::abs(back[0] - target[0]), std::abs(back[1] - target[1]), std::abs(back[2] - target[2])});
    if (!converged || residual > tolerance) {
      throw NumericError("invert_points: fixed-point iteration did not converge (displacement too large?)");
    }
    for (int axis = 0; axis < 3; ++axis) {
      const double top = static_cast<double>(flow.shape().extent(axis) - 1);
      if (y[axis] < 0.0 || y[axis] > top) throw NumericError("invert_points: preimage leaves the grid");
    }
    out.push_back(y);
  }
  return out;
}

SyntheticPair make_pair(std::uint64_t seed, const GridShape& shape, double max_disp, const PairOptions& options) {
  std::vector<Blob> blobs;
  if (options.template_seed) {
    blobs = jitter_blobs(random_blobs(*options.template_seed, shape, options.num_blobs, options.widths),
                         derive_seed(seed, 1), options.jitter, shape);
  } else {
    blobs = random_blobs(derive_seed(seed, 1), shape, options.num_blobs, options.widths);
  }
  BlobVolume a = render_blobs(shape, blobs);
  Flow truth = make_smooth_flow(derive_seed(seed, 2), shape, max_disp);
  SyntheticPair pair;
  pair.b = sampler::warp(a.image, truth);
  pair.labels_b = sampler::warp_nearest(a.labels, truth);
  pair.landmarks_b = invert_points(truth, a.landmarks);
  pair.a = std::move(a.image);
  pair.labels_a = std::move(a.labels);
  pair.landmarks_a = std::move(a.landmarks);
  pair.truth = std::move(truth);
  return pair;
}

}  // namespace icnet::synth
