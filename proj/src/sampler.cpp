#include "icnet/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace icnet::sampler {
namespace {

// Interpolation footprint along one axis.
struct AxisStencil {
  std::size_t lo;
  std::size_t hi;
  double t;      // weight of `hi`
  double slope;  // d(clamped coordinate)/d(raw coordinate)
};

AxisStencil axis_stencil(double coord, std::size_t extent) {
  const double top = static_cast<double>(extent - 1);
  // NaN passes through clamp; keep indices valid and let the NaN reach the caller's value
  if (std::isnan(coord)) return {0, 0, coord, coord};
  const double c = std::clamp(coord, 0.0, top);
  const auto lo = static_cast<std::size_t>(std::floor(c));
  const std::size_t hi = std::min(lo + 1, extent - 1);
  const double slope = (coord >= 0.0 && coord <= top) ? 1.0 : 0.0;
  return {lo, hi, c - static_cast<double>(lo), slope};
}

struct Stencil {
  AxisStencil x, y, z;
  // Plane offsets of the eight corners, ordered (x, y, z) bit-wise: c[xb | yb<<1 | zb<<2].
  std::size_t corner[8];
};

Stencil make_stencil(const GridShape& s, double px, double py, double pz) {
  Stencil st{axis_stencil(px, s.dx), axis_stencil(py, s.dy), axis_stencil(pz, s.dz), {}};
  const std::size_t xs[2] = {st.x.lo, st.x.hi};
  const std::size_t ys[2] = {st.y.lo, st.y.hi};
  const std::size_t zs[2] = {st.z.lo, st.z.hi};
  for (int k = 0; k < 8; ++k) {
    st.corner[k] = (zs[(k >> 2) & 1] * s.dy + ys[(k >> 1) & 1]) * s.dx + xs[k & 1];
  }
  return st;
}

// Nested lerps so equal corner values reproduce that value exactly.
double interpolate(const double* plane, const Stencil& st) {
  const double* c = plane;
  const auto v = [&](int k) { return c[st.corner[k]]; };
  const double x00 = v(0) + st.x.t * (v(1) - v(0));
  const double x10 = v(2) + st.x.t * (v(3) - v(2));
  const double x01 = v(4) + st.x.t * (v(5) - v(4));
  const double x11 = v(6) + st.x.t * (v(7) - v(6));
  const double y0 = x00 + st.y.t * (x10 - x00);
  const double y1 = x01 + st.y.t * (x11 - x01);
  return y0 + st.z.t * (y1 - y0);
}

void corner_weights(const Stencil& st, double w[8]) {
  const double wx[2] = {1.0 - st.x.t, st.x.t};
  const double wy[2] = {1.0 - st.y.t, st.y.t};
  const double wz[2] = {1.0 - st.z.t, st.z.t};
  for (int k = 0; k < 8; ++k) w[k] = wx[k & 1] * wy[(k >> 1) & 1] * wz[(k >> 2) & 1];
}

// Partial derivatives of the interpolated value with respect to the clamped coordinate.
void interpolate_gradient(const double* plane, const Stencil& st, double g[3]) {
  const auto v = [&](int k) { return plane[st.corner[k]]; };
  const double tx = st.x.t, ty = st.y.t, tz = st.z.t;
  const double dx00 = v(1) - v(0), dx10 = v(3) - v(2), dx01 = v(5) - v(4), dx11 = v(7) - v(6);
  g[0] = (1 - tz) * ((1 - ty) * dx00 + ty * dx10) + tz * ((1 - ty) * dx01 + ty * dx11);
  const double x00 = v(0) + tx * dx00, x10 = v(2) + tx * dx10;
  const double x01 = v(4) + tx * dx01, x11 = v(6) + tx * dx11;
  g[1] = (1 - tz) * (x10 - x00) + tz * (x11 - x01);
  const double y0 = x00 + ty * (x10 - x00);
  const double y1 = x01 + ty * (x11 - x01);
  g[2] = y1 - y0;
}

}  // namespace

namespace kernels {

void warp_forward(std::span<const double> image, std::size_t channels, const GridShape& s,
                  std::span<const double> flow, std::span<double> out) {
  const std::size_t n = s.voxels();
  const double* fx = flow.data();
  const double* fy = fx + n;
  const double* fz = fy + n;
  std::size_t p = 0;
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x, ++p) {
        const Stencil st = make_stencil(s, static_cast<double>(x) + fx[p], static_cast<double>(y) + fy[p],
                                        static_cast<double>(z) + fz[p]);
        for (std::size_t c = 0; c < channels; ++c) out[c * n + p] = interpolate(image.data() + c * n, st);
      }
    }
  }
}

void warp_backward(std::span<const double> image, std::size_t channels, const GridShape& s,
                   std::span<const double> flow, std::span<const double> out_adjoint,
                   std::span<double> image_adjoint, std::span<double> flow_adjoint) {
  const std::size_t n = s.voxels();
  const double* fx = flow.data();
  const double* fy = fx + n;
  const double* fz = fy + n;
  const bool want_image = !image_adjoint.empty();
  const bool want_flow = !flow_adjoint.empty();
  std::size_t p = 0;
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x, ++p) {
        const Stencil st = make_stencil(s, static_cast<double>(x) + fx[p], static_cast<double>(y) + fy[p],
                                        static_cast<double>(z) + fz[p]);
        double w[8];
        if (want_image) corner_weights(st, w);
        double gx = 0.0, gy = 0.0, gz = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double up = out_adjoint[c * n + p];
          if (up == 0.0) continue;
          if (want_image) {
            double* dst = image_adjoint.data() + c * n;
            for (int k = 0; k < 8; ++k) dst[st.corner[k]] += w[k] * up;
          }
          if (want_flow) {
            double g[3];
            interpolate_gradient(image.data() + c * n, st, g);
            gx += up * g[0];
            gy += up * g[1];
            gz += up * g[2];
          }
        }
        if (want_flow) {
          flow_adjoint[p] += gx * st.x.slope;
          flow_adjoint[n + p] += gy * st.y.slope;
          flow_adjoint[2 * n + p] += gz * st.z.slope;
        }
      }
    }
  }
}

}  // namespace kernels

std::vector<double> trilinear_sample(const Volume& vol, const Point3& point) {
  const Stencil st = make_stencil(vol.shape(), point[0], point[1], point[2]);
  std::vector<double> out(vol.channels());
  for (std::size_t c = 0; c < vol.channels(); ++c) out[c] = interpolate(vol.channel(c).data(), st);
  return out;
}

Volume warp(const Volume& vol, const Flow& flow) {
  require_flow(flow, "warp");
  require_same_shape(vol.shape(), flow.shape(), "warp");
  Volume out(vol.shape(), vol.channels(), 0.0);
  kernels::warp_forward(vol.data(), vol.channels(), vol.shape(), flow.data(), out.data());
  return out;
}

LabelMap warp_nearest(const LabelMap& labels, const Flow& flow) {
  require_flow(flow, "warp_nearest");
  require_same_shape(labels.shape(), flow.shape(), "warp_nearest");
  const GridShape& s = labels.shape();
  LabelMap out(s);
  const auto nearest = [](double q, std::size_t extent) {
    if (std::isnan(q)) throw NumericError("warp_nearest: flow is not finite");
    const double r = std::ceil(q - 0.5);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(extent - 1)));
  };
  for (std::size_t z = 0; z < s.dz; ++z) {
    for (std::size_t y = 0; y < s.dy; ++y) {
      for (std::size_t x = 0; x < s.dx; ++x) {
        const std::size_t sx = nearest(static_cast<double>(x) + flow.at(0, x, y, z), s.dx);
        const std::size_t sy = nearest(static_cast<double>(y) + flow.at(1, x, y, z), s.dy);
        const std::size_t sz = nearest(static_cast<double>(z) + flow.at(2, x, y, z), s.dz);
        out.at(x, y, z) = labels.at(sx, sy, sz);
      }
    }
  }
  return out;
}

Flow estimate_inverse(const Flow& flow) {
  require_flow(flow, "estimate_inverse");
  Volume negated = flow;
  for (double& v : negated.data()) v = -v;
  return warp(negated, flow);
}

Point3 map_point(const Flow& flow, const Point3& point) {
  require_flow(flow, "map_point");
  const auto d = trilinear_sample(flow, point);
  return {point[0] + d[0], point[1] + d[1], point[2] + d[2]};
}

}  // namespace icnet::sampler
