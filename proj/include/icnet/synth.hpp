#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icnet/volume.hpp"

namespace icnet::synth {

/// Isotropic Gaussian bump.
struct Blob {
  Point3 center{};
  double sigma = 1.0;
  double amplitude = 1.0;
};

/// Range of blob widths (Gaussian sigma), in voxels.
struct WidthRange {
  double min = 1.0;
  double max = 1.7;

  /// Throws DataError unless 0 < min <= max and both are finite.
  void validate() const;
};

/// `count` blobs with integer centres away from the border.
std::vector<Blob> random_blobs(std::uint64_t seed, const GridShape& shape, std::size_t count, WidthRange widths = {});

/// Moves every centre by up to `amount` voxels per axis and perturbs widths
/// and amplitudes by up to 15%. Centres stay inside the grid.
std::vector<Blob> jitter_blobs(const std::vector<Blob>& blobs, std::uint64_t seed, double amount,
                               const GridShape& shape);

struct BlobVolume {
  Volume image;
  LabelMap labels;
  LandmarkSet landmarks;
};

/// Sum of the blobs, z-score normalized. Label k + 1 marks voxels where blob k
/// dominates, background (0) where every blob is below 0.1 of the summed peak.
/// Landmarks are the blob centres.
BlobVolume render_blobs(const GridShape& shape, const std::vector<Blob>& blobs);

BlobVolume make_blob_volume(std::uint64_t seed, const GridShape& shape, std::size_t num_blobs, WidthRange widths = {});

/// Smooth random displacement field with max-norm at most `max_disp` and every
/// forward difference above -0.5, so it never folds. Requires
/// 0 <= max_disp < 0.4 * min extent.
Flow make_smooth_flow(std::uint64_t seed, const GridShape& shape, double max_disp);

/// Solves y + flow(y) = x for every x by fixed-point iteration, to within `tolerance`.
/// Throws NumericError if an iteration does not converge.
LandmarkSet invert_points(const Flow& flow, const LandmarkSet& points, double tolerance = 1e-3,
                          std::size_t max_iterations = 200);

struct PairOptions {
  std::size_t num_blobs = 18;
  WidthRange widths{};
  /// When set, A is a jittered copy of one shared blob template, so that
  /// volumes of different pairs are anatomically related.
  std::optional<std::uint64_t> template_seed;
  double jitter = 2.0;
};

/// A, the ground-truth flow G, and B = warp(A, G), with labels and landmarks
/// carried along. B's landmarks y satisfy y + G(y) = A's landmark.
struct SyntheticPair {
  Volume a;
  Volume b;
  Flow truth;
  LabelMap labels_a;
  LabelMap labels_b;
  LandmarkSet landmarks_a;
  LandmarkSet landmarks_b;
};

SyntheticPair make_pair(std::uint64_t seed, const GridShape& shape, double max_disp, const PairOptions& options = {});

/// Deterministic 64-bit mixing of a seed with a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace icnet::synth
