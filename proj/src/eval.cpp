#include "icnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "icnet/sampler.hpp"

namespace icnet::eval {
namespace {

// Smallest squared distance from `p` to any point of `targets`.
double nearest_squared(const Point3& p, const std::vector<Point3>& targets) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : targets) {
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    best = std::min(best, dx * dx + dy * dy + dz * dz);
  }
  return best;
}

struct Directed {
  double mean = 0.0;
  double max = 0.0;
};

Directed directed_distance(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  Directed d;
  double sum = 0.0;
  for (const auto& p : from) {
    const double dist = std::sqrt(nearest_squared(p, to));
    sum += dist;
    d.max = std::max(d.max, dist);
  }
  d.mean = sum / static_cast<double>(from.size());
  return d;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return out.str();
}

}  // namespace

Overlap overlap_metrics(const LabelMap& pred, const LabelMap& truth, Label label) {
  require_same_shape(pred.shape(), truth.shape(), "overlap_metrics");
  std::size_t tp = 0, fp = 0, fn = 0;
  const auto& p = pred.labels();
  const auto& t = truth.labels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool in_pred = p[i] == label;
    const bool in_truth = t[i] == label;
    tp += in_pred && in_truth;
    fp += in_pred && !in_truth;
    fn += !in_pred && in_truth;
  }
  if (tp + fn == 0) throw DataError("overlap_metrics: label " + std::to_string(label) + " is absent from truth");
  Overlap o;
  o.dsc = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  o.sen = static_cast<double>(tp) / static_cast<double>(tp + fn);
  o.ppv = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  return o;
}

std::vector<Point3> surface_voxels(const LabelMap& labels, Label label) {
  const GridShape& s = labels.shape();
  const auto inside = [&](std::ptrdiff_t x, std::ptrdiff_t y, std::ptrdiff_t z) {
    if (x < 0 || y < 0 || z < 0) return false;
    if (x >= static_cast<std::ptrdiff_t>(s.dx) || y >= static_cast<std::ptrdiff_t>(s.dy) ||
        z >= static_cast<std::ptrdiff_t>(s.dz)) {
      return false;
    }
    return labels.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) == label;
  };
  std::vector<Point3> surface;
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        if (labels.at(x, y, z) != label) continue;
        const auto ix = static_cast<std::ptrdiff_t>(x), iy = static_cast<std::ptrdiff_t>(y),
                   iz = static_cast<std::ptrdiff_t>(z);
        const bool interior = inside(ix - 1, iy, iz) && inside(ix + 1, iy, iz) && inside(ix, iy - 1, iz) &&
                              inside(ix, iy + 1, iz) && inside(ix, iy, iz - 1) && inside(ix, iy, iz + 1);
        if (!interior) surface.push_back({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
      }
    }
  }
  return surface;
}

SurfaceDistance surface_distances(const LabelMap& pred, const LabelMap& truth, Label label) {
  require_same_shape(pred.shape(), truth.shape(), "surface_distances");
  const auto sp = surface_voxels(pred, label);
  const auto st = surface_voxels(truth, label);
  if (sp.empty() || st.empty()) {
    throw DataError("surface_distances: label " + std::to_string(label) + " mask is empty on one side");
  }
  const Directed a = directed_distance(sp, st);
  const Directed b = directed_distance(st, sp);
  return {(a.mean + b.mean) / 2.0, std::max(a.max, b.max)};
}

LandmarkErrors landmark_error(const LandmarkSet& predicted, const LandmarkSet& truth) {
  if (predicted.size() != truth.size()) {
    throw DataError("landmark_error: " + std::to_string(predicted.size()) + " predicted vs " +
                    std::to_string(truth.size()) + " reference landmarks");
  }
  LandmarkErrors e;
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double dx = predicted[i][0] - truth[i][0];
    const double dy = predicted[i][1] - truth[i][1];
    const double dz = predicted[i][2] - truth[i][2];
    e.per_landmark.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
    sum += e.per_landmark.back();
  }
  e.mean = truth.empty() ? 0.0 : sum / static_cast<double>(truth.size());
  return e;
}

LabelMap multi_atlas_segment(std::span<const LabelMap> warped) {
  if (warped.empty()) throw DataError("multi_atlas_segment: no label maps");
  for (const auto& m : warped) require_same_shape(warped.front().shape(), m.shape(), "multi_atlas_segment");
  LabelMap out(warped.front().shape());
  std::vector<Label> votes(warped.size());
  for (std::size_t i = 0; i < out.voxels(); ++i) {
    for (std::size_t k = 0; k < warped.size(); ++k) votes[k] = warped[k].labels()[i];
    std::sort(votes.begin(), votes.end());
    // Runs are visited in ascending label order, so a strict '>' keeps the smallest on ties.
    Label best = votes.front();
    std::size_t best_count = 0;
    for (std::size_t k = 0; k < votes.size();) {
      std::size_t e = k;
      while (e < votes.size() && votes[e] == votes[k]) ++e;
      if (e - k > best_count) {
        best_count = e - k;
        best = votes[k];
      }
      k = e;
    }
    out.labels()[i] = best;
  }
  return out;
}

LandmarkSet propagate_landmarks(std::span<const AtlasLandmarks> atlases) {
  if (atlases.empty()) throw DataError("propagate_landmarks: no atlases");
  const std::size_t count = atlases.front().landmarks.size();
  LandmarkSet mean(count, Point3{0.0, 0.0, 0.0});
  for (const auto& atlas : atlases) {
    if (atlas.landmarks.size() != count) throw DataError("propagate_landmarks: atlases disagree on landmark count");
    for (std::size_t i = 0; i < count; ++i) {
      const Point3 mapped = sampler::map_point(atlas.test_to_atlas, atlas.landmarks[i]);
      for (int a = 0; a < 3; ++a) mean[i][a] += mapped[a];
    }
  }
  for (auto& p : mean) {
    for (double& v : p) v /= static_cast<double>(atlases.size());
  }
  return mean;
}

std::vector<Label> foreground_labels(const LabelMap& labels) {
  std::set<Label> present(labels.labels().begin(), labels.labels().end());
  present.erase(0);
  return {present.begin(), present.end()};
}

std::vector<MetricRow> label_metrics(const std::string& image, const LabelMap& pred, const LabelMap& truth) {
  std::vector<MetricRow> rows;
  for (Label label : foreground_labels(truth)) {
    const std::string subject = "label" + std::to_string(label);
    const Overlap o = overlap_metrics(pred, truth, label);
    rows.push_back({image, subject, "DSC", o.dsc});
    rows.push_back({image, subject, "SEN", o.sen});
    rows.push_back({image, subject, "PPV", o.ppv});
    if (!surface_voxels(pred, label).empty()) {
      const SurfaceDistance d = surface_distances(pred, truth, label);
      rows.push_back({image, subject, "ASD", d.asd});
      rows.push_back({image, subject, "HD", d.hd});
    }
  }
  return rows;
}

std::vector<MetricRow> landmark_metrics(const std::string& image, const LandmarkSet& pred, const LandmarkSet& truth) {
  const LandmarkErrors e = landmark_error(pred, truth);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < e.per_landmark.size(); ++i) {
    rows.push_back({image, "landmark" + std::to_string(i), "error", e.per_landmark[i]});
  }
  rows.push_back({image, "landmarks", "mean_error", e.mean});
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image,subject,metric,value\n";
  for (const auto& r : rows) out << r.image << ',' << r.subject << ',' << r.metric << ',' << format_double(r.value) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace icnet::eval
