#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icnet/volume.hpp"

namespace icnet::eval {

using Label = LabelMap::Label;

struct Overlap {
  double dsc = 0.0;
  double sen = 0.0;
  double ppv = 0.0;
};

/// Dice, sensitivity and positive predictive value of one label. PPV is 0
/// when nothing is predicted. Throws DataError if `label` is absent from truth.
Overlap overlap_metrics(const LabelMap& pred, const LabelMap& truth, Label label);

struct SurfaceDistance {
  double asd = 0.0;  // average symmetric surface distance
  double hd = 0.0;   // Hausdorff distance
};

/// Voxels of `label` with at least one 6-neighbour outside the mask (grid
/// borders count as outside).
std::vector<Point3> surface_voxels(const LabelMap& labels, Label label);

/// Distances between the surfaces of one label in voxel units, by exhaustive
/// nearest-neighbour search. Throws DataError if either mask is empty.
SurfaceDistance surface_distances(const LabelMap& pred, const LabelMap& truth, Label label);

struct LandmarkErrors {
  std::vector<double> per_landmark;
  double mean = 0.0;
};

LandmarkErrors landmark_error(const LandmarkSet& predicted, const LandmarkSet& truth);

/// Per-voxel modal label; ties go to the smallest label value.
LabelMap multi_atlas_segment(std::span<const LabelMap> warped);

/// One atlas's landmarks together with the flow that warps the test image
/// toward that atlas (sampled on the atlas grid).
struct AtlasLandmarks {
  Flow test_to_atlas;
  LandmarkSet landmarks;
};

/// Maps each atlas landmark x to x + flow(x) and averages across atlases.
LandmarkSet propagate_landmarks(std::span<const AtlasLandmarks> atlases);

/// Sorted non-zero labels present in `labels`.
std::vector<Label> foreground_labels(const LabelMap& labels);

/// One row of a metrics table.
struct MetricRow {
  std::string image;
  std::string subject;  // label or landmark identifier
  std::string metric;
  double value = 0.0;
};

/// Overlap and surface metrics for every foreground label of `truth`.
std::vector<MetricRow> label_metrics(const std::string& image, const LabelMap& pred, const LabelMap& truth);
std::vector<MetricRow> landmark_metrics(const std::string& image, const LandmarkSet& pred, const LandmarkSet& truth);

/// "image,subject,metric,value" followed by one line per row.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace icnet::eval
