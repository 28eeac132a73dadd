#pragma once

#include <span>
#include <vector>

#include "icnet/volume.hpp"

namespace icnet::sampler {

/// Interpolates every channel of `vol` at a continuous voxel coordinate.
/// Coordinates outside [0, extent - 1] are clamped to the border first.
std::vector<double> trilinear_sample(const Volume& vol, const Point3& point);

/// Backward warping: out(p) = vol(p + flow(p)), sampled trilinearly.
Volume warp(const Volume& vol, const Flow& flow);

/// Backward warping of labels with nearest-voxel lookup. Exact half-voxel ties
/// go to the lower coordinate.
LabelMap warp_nearest(const LabelMap& labels, const Flow& flow);

/// Approximate inverse of `flow` by resampling its negation under itself:
/// out(p) = -flow(p + flow(p)).
Flow estimate_inverse(const Flow& flow);

/// point + flow(point).
Point3 map_point(const Flow& flow, const Point3& point);

namespace kernels {

// Raw kernels shared with the differentiable warp. `image` holds `channels`
// planes over `shape`; `flow` holds three planes over the same shape.

void warp_forward(std::span<const double> image, std::size_t channels, const GridShape& shape,
                  std::span<const double> flow, std::span<double> out);

/// Accumulates adjoints of warp_forward. Either destination may be empty to skip it.
void warp_backward(std::span<const double> image, std::size_t channels, const GridShape& shape,
                   std::span<const double> flow, std::span<const double> out_adjoint,
                   std::span<double> image_adjoint, std::span<double> flow_adjoint);

}  // namespace kernels

}  // namespace icnet::sampler
