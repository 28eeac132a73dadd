#include "icnet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace icnet {

std::size_t GridShape::min_extent() const { return std::min({dx, dy, dz}); }

void GridShape::validate() const {
  if (dx < 2 || dy < 2 || dz < 2) {
    throw DimensionError("grid needs at least 2 voxels per axis, got " + std::to_string(dx) + "x" +
                         std::to_string(dy) + "x" + std::to_string(dz));
  }
}

Volume::Volume(GridShape shape, std::size_t channels, double fill)
    : shape_(shape), channels_(channels) {
  shape_.validate();
  if (channels == 0) throw DimensionError("volume needs at least one channel");
  data_.assign(channels * shape.voxels(), fill);
}

Volume::Volume(GridShape shape, std::size_t channels, std::vector<double> data)
    : shape_(shape), channels_(channels), data_(std::move(data)) {
  shape_.validate();
  if (channels == 0) throw DimensionError("volume needs at least one channel");
  if (data_.size() != channels * shape.voxels()) {
    throw ShapeError("volume data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(channels) + " channels of " + std::to_string(shape.voxels()) +
                     " voxels");
  }
}

void require_flow(const Volume& flow, const char* what) {
  if (flow.channels() != 3) {
    throw ShapeError(std::string(what) + ": flow must have 3 channels, got " +
                     std::to_string(flow.channels()));
  }
}

void require_same_shape(const GridShape& a, const GridShape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": grid " + std::to_string(a.dx) + "x" + std::to_string(a.dy) +
                     "x" + std::to_string(a.dz) + " does not match " + std::to_string(b.dx) + "x" +
                     std::to_string(b.dy) + "x" + std::to_string(b.dz));
  }
}

LabelMap::LabelMap(GridShape shape, Label fill) : shape_(shape) {
  shape_.validate();
  labels_.assign(shape.voxels(), fill);
}

LabelMap::LabelMap(GridShape shape, std::vector<Label> labels) : shape_(shape), labels_(std::move(labels)) {
  shape_.validate();
  if (labels_.size() != shape.voxels()) throw ShapeError("label map length does not match its grid");
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double population_stddev(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mu = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - mu) * (v - mu);
  return std::sqrt(acc / static_cast<double>(values.size()));
}

Volume zscore_normalize(const Volume& vol) {
  if (vol.channels() != 1) {
    throw ShapeError("zscore_normalize expects a single-channel volume, got " +
                     std::to_string(vol.channels()) + " channels");
  }
  const auto values = vol.channel(0);
  const double mu = mean(values);
  const double sigma = population_stddev(values);
  Volume out(vol.shape(), 1, 0.0);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi || sigma == 0.0) return out;
  if (!std::isfinite(sigma)) throw NumericError("zscore_normalize: non-finite input");
  auto dst = out.channel(0);
  for (std::size_t i = 0; i < values.size(); ++i) dst[i] = (values[i] - mu) / sigma;
  return out;
}

}  // namespace icnet
