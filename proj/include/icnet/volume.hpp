#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "icnet/error.hpp"

namespace icnet {

/// Voxel counts along x, y and z. Every axis holds at least two samples.
struct GridShape {
  std::size_t dx = 2;
  std::size_t dy = 2;
  std::size_t dz = 2;

  std::size_t voxels() const { return dx * dy * dz; }
  std::size_t extent(int axis) const { return axis == 0 ? dx : (axis == 1 ? dy : dz); }
  std::size_t min_extent() const;

  /// Throws DimensionError unless every axis has at least two samples.
  void validate() const;

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

using Point3 = std::array<double, 3>;

/// Dense multi-channel grid. Layout is channel-major, then z, y, x with x fastest.
class Volume {
 public:
  Volume() = default;
  Volume(GridShape shape, std::size_t channels, double fill = 0.0);
  Volume(GridShape shape, std::size_t channels, std::vector<double> data);

  const GridShape& shape() const { return shape_; }
  std::size_t channels() const { return channels_; }
  std::size_t voxels() const { return shape_.voxels(); }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const {
    return ((c * shape_.dz + z) * shape_.dy + y) * shape_.dx + x;
  }
  double& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) { return data_[index(c, x, y, z)]; }
  double at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const { return data_[index(c, x, y, z)]; }

  std::span<double> channel(std::size_t c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const double> channel(std::size_t c) const { return {data_.data() + c * voxels(), voxels()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  GridShape shape_{};
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// A three-channel Volume; channel i is the displacement along axis i in voxels.
using Flow = Volume;

/// Throws ShapeError unless `flow` has exactly three channels.
void require_flow(const Volume& flow, const char* what);

/// Throws ShapeError unless both grids match.
void require_same_shape(const GridShape& a, const GridShape& b, const char* what);

/// One label per voxel, 0 is background.
class LabelMap {
 public:
  using Label = std::uint16_t;

  LabelMap() = default;
  explicit LabelMap(GridShape shape, Label fill = 0);
  LabelMap(GridShape shape, std::vector<Label> labels);

  const GridShape& shape() const { return shape_; }
  std::size_t voxels() const { return shape_.voxels(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * shape_.dy + y) * shape_.dx + x;
  }
  Label& at(std::size_t x, std::size_t y, std::size_t z) { return labels_[index(x, y, z)]; }
  Label at(std::size_t x, std::size_t y, std::size_t z) const { return labels_[index(x, y, z)]; }

  std::vector<Label>& labels() { return labels_; }
  const std::vector<Label>& labels() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  GridShape shape_{};
  std::vector<Label> labels_;
};

/// Points in continuous voxel coordinates.
using LandmarkSet = std::vector<Point3>;

/// Shifts and scales a single-channel volume to zero mean and unit population
/// standard deviation. A constant input maps to all zeros.
Volume zscore_normalize(const Volume& vol);

double mean(std::span<const double> values);
double population_stddev(std::span<const double> values);

}  // namespace icnet
