#include "icnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "icnet/sampler.hpp"

namespace icnet::ad {
namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_same_dims(const char* op, Var a, Var b) {
  if (a.dims() != b.dims()) {
    shape_fail(op, "operand shapes " + a.value().shape_string() + " and " + b.value().shape_string() + " differ");
  }
}

void require_spatial(const char* op, const Tensor& t) {
  if (t.dims.size() != 4) shape_fail(op, "expected a {channels, dx, dy, dz} tensor, got " + t.shape_string());
}

void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) shape_fail(op, "operands live on different tapes");
}

struct Geometry {
  std::size_t c, x, y, z;
  std::size_t plane() const { return x * y * z; }
};

Geometry geometry(const Tensor& t) { return {t.dims[0], t.dims[1], t.dims[2], t.dims[3]}; }

// Output extent of a padded 3-wide convolution.
std::size_t conv_extent(std::size_t n, int stride) { return (n - 1) / static_cast<std::size_t>(stride) + 1; }

// Valid output range [lo, hi) along one axis for kernel tap k (0..2) with padding 1.
void tap_range(std::size_t in_extent, std::size_t out_extent, int stride, int k, std::size_t& lo, std::size_t& hi) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto n = static_cast<std::ptrdiff_t>(in_extent);
  // input index = o * s + k - 1 must lie in [0, n)
  std::ptrdiff_t first = k == 0 ? 1 : 0;
  std::ptrdiff_t last = (n - k) / s;  // inclusive bound from o*s + k - 1 <= n - 1
  if (n - k < 0) last = -1;
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(last + 1, 0, static_cast<std::ptrdiff_t>(out_extent)));
  if (hi < lo) hi = lo;
}

struct Taps {
  std::size_t lo[3][3];
  std::size_t hi[3][3];
};

Taps conv_taps(const Geometry& in, const Geometry& out, int stride) {
  Taps t{};
  const std::size_t in_ext[3] = {in.x, in.y, in.z};
  const std::size_t out_ext[3] = {out.x, out.y, out.z};
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < 3; ++k) tap_range(in_ext[axis], out_ext[axis], stride, k, t.lo[axis][k], t.hi[axis][k]);
  }
  return t;
}

// Visits every (output row, input row, x-range) touched by tap (kz, ky, kx).
template <typename RowFn>
void for_each_tap_row(const Geometry& in, const Geometry& out, const Taps& taps, int stride, int kz, int ky, int kx,
                      RowFn&& fn) {
  const std::size_t s = static_cast<std::size_t>(stride);
  for (std::size_t zo = taps.lo[2][kz]; zo < taps.hi[2][kz]; ++zo) {
    const std::size_t zi = zo * s + static_cast<std::size_t>(kz) - 1;
    for (std::size_t yo = taps.lo[1][ky]; yo < taps.hi[1][ky]; ++yo) {
      const std::size_t yi = yo * s + static_cast<std::size_t>(ky) - 1;
      fn((zo * out.y + yo) * out.x, (zi * in.y + yi) * in.x, taps.lo[0][kx], taps.hi[0][kx]);
    }
  }
}


// Stride-1 convolution on a zero-padded copy of each channel. With one voxel of
// padding every tap becomes a constant offset in the flattened padded grid, so
// the inner loops run over long contiguous ranges.
struct Padded {
  std::size_t px, py, pz;
  std::size_t first, last;  // flat range covering every interior voxel
  std::ptrdiff_t offset[27];

  explicit Padded(const Geometry& g) : px(g.x + 2), py(g.y + 2), pz(g.z + 2) {
    first = (py + 1) * px + 1;
    last = (g.z * py + g.y) * px + g.x + 1;
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          offset[(kz * 3 + ky) * 3 + kx] =
              ((kz - 1) * static_cast<std::ptrdiff_t>(py) + (ky - 1)) * static_cast<std::ptrdiff_t>(px) + (kx - 1);
        }
      }
    }
  }
  std::size_t size() const { return px * py * pz; }
};

std::vector<double> pad_channels(const double* src, const Geometry& g, const Padded& p) {
  std::vector<double> out(g.c * p.size(), 0.0);
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t z = 0; z < g.z; ++z) {
      for (std::size_t y = 0; y < g.y; ++y) {
        const double* row = src + ((c * g.z + z) * g.y + y) * g.x;
        std::copy(row, row + g.x, out.data() + c * p.size() + ((z + 1) * p.py + y + 1) * p.px + 1);
      }
    }
  }
  return out;
}

constexpr std::size_t kChunk = 512;

// out[c_out][v] (+)= sum_{c_in, k} w(c_out, c_in, k) * in[c_in][v + sign * offset[k]] over interior v.
// `weight_at(co, ci, k)` supplies the kernel; `init(co)` the starting value.
template <typename WeightAt, typename Init>
void padded_correlate(const std::vector<double>& in, std::size_t in_c, std::size_t out_c, const Geometry& g,
                      const Padded& p, int sign, WeightAt&& weight_at, Init&& init, double* out) {
  double acc[kChunk];
  double w[27];
  for (std::size_t co = 0; co < out_c; ++co) {
    for (std::size_t base = p.first; base < p.last; base += kChunk) {
      const std::size_t len = std::min(kChunk, p.last - base);
      std::fill(acc, acc + len, init(co));
      for (std::size_t ci = 0; ci < in_c; ++ci) {
        for (int k = 0; k < 27; ++k) w[k] = weight_at(co, ci, k);
        const double* src = in.data() + ci * p.size() + base;
        for (int k = 0; k < 27; ++k) {
          if (w[k] == 0.0) continue;
          const double* s = src + sign * p.offset[k];
          const double wk = w[k];
          for (std::size_t j = 0; j < len; ++j) acc[j] += wk * s[j];
        }
      }
      // scatter the interior part of the chunk
      std::size_t x = base % p.px, y = (base / p.px) % p.py, z = base / (p.px * p.py);
      for (std::size_t j = 0; j < len;) {
        // run of padded row `(y, z)` starting at column x
        const std::size_t run = std::min(len - j, p.px - x);
        if (y >= 1 && y <= g.y && z >= 1 && z <= g.z) {
          const std::size_t lo = std::max<std::size_t>(x, 1), hi = std::min(x + run, g.x + 1);
          double* row = out + ((co * g.z + z - 1) * g.y + y - 1) * g.x;
          for (std::size_t c = lo; c < hi; ++c) row[c - 1] += acc[j + c - x];
        }
        j += run;
        x = 0;
        if (++y == p.py) {
          y = 0;
          ++z;
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

std::size_t element_count(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> d, double fill) : dims(std::move(d)), data(element_count(dims), fill) {}

Tensor::Tensor(std::vector<std::size_t> d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
  if (data.size() != element_count(dims)) throw ShapeError("tensor: data length does not match " + shape_string());
}

Tensor Tensor::from_volume(const Volume& vol) {
  return Tensor({vol.channels(), vol.shape().dx, vol.shape().dy, vol.shape().dz}, vol.data());
}

Volume Tensor::to_volume() const {
  if (dims.size() != 4) throw ShapeError("tensor " + shape_string() + " is not spatial");
  return Volume(GridShape{dims[1], dims[2], dims[3]}, dims[0], data);
}

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << '{';
  for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? ", " : "") << dims[i];
  out << '}';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(id); }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item: tensor " + v.shape_string() + " is not a scalar");
  return v.data[0];
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> operands, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : operands) {
    if (v.tape != this) throw ShapeError("tape: operand recorded on a different tape");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs});
  return Var{this, nodes_.size() - 1};
}

std::span<double> Tape::adjoint(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.adjoint.empty()) node.adjoint.assign(node.value.size(), 0.0);
  return node.adjoint;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.adjoint.empty()) return Tensor(node.value.dims, 0.0);
  return Tensor(node.value.dims, node.adjoint);
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ShapeError("backward: root belongs to another tape");
  if (nodes_.at(root.id).value.size() != 1) {
    throw ShapeError("backward: root " + nodes_[root.id].value.shape_string() + " is not a scalar");
  }
  for (Node& node : nodes_) node.adjoint.clear();
  adjoint(root.id)[0] = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.adjoint.empty()) continue;
    node.backward(*this, node.adjoint);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  require_same_dims("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> up) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v.id)) continue;
      auto g = t.adjoint(v.id);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  require_same_dims("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> up) {
    if (t.requires_grad(a.id)) {
      auto g = t.adjoint(a.id);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
    }
    if (t.requires_grad(b.id)) {
      auto g = t.adjoint(b.id);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] -= up[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data) v *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& t, std::span<const double> up) {
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) g[i] += factor * up[i];
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (double& v : out.data) v += offset;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::span<const double> up) {
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  require_same_dims("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> up) {
    const auto& av = t.value(a.id).data;
    const auto& bv = t.value(b.id).data;
    if (t.requires_grad(a.id)) {
      auto g = t.adjoint(a.id);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      auto g = t.adjoint(b.id);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * av[i];
    }
  });
}

Var square(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v *= v;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::span<const double> up) {
    const auto& av = t.value(a.id).data;
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) g[i] += 2.0 * av[i] * up[i];
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  return a.tape->record(Tensor::scalar(total), {a}, [a](Tape& t, std::span<const double> up) {
    auto g = t.adjoint(a.id);
    for (double& v : g) v += up[0];
  });
}

Var masked_weighted_sum(Var a, const Tensor& weights) {
  if (weights.dims != a.dims()) {
    shape_fail("masked_weighted_sum",
               "weights " + weights.shape_string() + " do not match operand " + a.value().shape_string());
  }
  double total = 0.0;
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (weights.data[i] != 0.0) total += weights.data[i] * av[i];
  }
  return a.tape->record(Tensor::scalar(total), {a}, [a, w = weights.data](Tape& t, std::span<const double> up) {
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * up[0];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::span<const double> up) {
    const auto& av = t.value(a.id).data;
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) {
      if (av[i] > 0.0) g[i] += up[i];
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::span<const double> up) {
    const auto& av = t.value(a.id).data;
    auto g = t.adjoint(a.id);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double y = std::tanh(av[i]);
      g[i] += (1.0 - y * y) * up[i];
    }
  });
}

Var concat_channels(Var a, Var b) {
  require_same_tape("concat_channels", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_spatial("concat_channels", av);
  require_spatial("concat_channels", bv);
  if (!std::equal(av.dims.begin() + 1, av.dims.end(), bv.dims.begin() + 1)) {
    shape_fail("concat_channels", "grids of " + av.shape_string() + " and " + bv.shape_string() + " differ");
  }
  Tensor out({av.dims[0] + bv.dims[0], av.dims[1], av.dims[2], av.dims[3]}, 0.0);
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t split = av.size();
  return a.tape->record(std::move(out), {a, b}, [a, b, split](Tape& t, std::span<const double> up) {
    if (t.requires_grad(a.id)) {
      auto g = t.adjoint(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i];
    }
    if (t.requires_grad(b.id)) {
      auto g = t.adjoint(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[split + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

Var conv3d(Var input, Var weight, Var bias, int stride) {
  require_same_tape("conv3d", input, weight);
  require_same_tape("conv3d", input, bias);
  if (stride != 1 && stride != 2) shape_fail("conv3d", "stride must be 1 or 2");
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_spatial("conv3d", xv);
  const Geometry in = geometry(xv);
  if (wv.dims.size() != 5 || wv.dims[1] != in.c || wv.dims[2] != 3 || wv.dims[3] != 3 || wv.dims[4] != 3) {
    shape_fail("conv3d", "kernel " + wv.shape_string() + " incompatible with input " + xv.shape_string());
  }
  const std::size_t co = wv.dims[0];
  if (bv.dims != std::vector<std::size_t>{co}) shape_fail("conv3d", "bias " + bv.shape_string() + " needs {out}");

  const Geometry out{co, conv_extent(in.x, stride), conv_extent(in.y, stride), conv_extent(in.z, stride)};
  const Taps taps = conv_taps(in, out, stride);
  const std::size_t s = static_cast<std::size_t>(stride);

  Tensor result({out.c, out.x, out.y, out.z}, 0.0);
  if (stride == 1) {
    const Padded pad(in);
    const std::vector<double> xp = pad_channels(xv.data.data(), in, pad);
    const double* wd = wv.data.data();
    const double* bd = bv.data.data();
    padded_correlate(
        xp, in.c, out.c, in, pad, 1, [&](std::size_t o, std::size_t i, int k) { return wd[(o * in.c + i) * 27 + static_cast<std::size_t>(k)]; },
        [&](std::size_t o) { return bd[o]; }, result.data.data());
  }
  for (std::size_t o = 0; o < out.c && stride != 1; ++o) {
    double* dst = result.data.data() + o * out.plane();
    std::fill(dst, dst + out.plane(), bv.data[o]);
    for (std::size_t i = 0; i < in.c; ++i) {
      const double* src = xv.data.data() + i * in.plane();
      const double* w = wv.data.data() + (o * in.c + i) * 27;
      for (int kz = 0; kz < 3; ++kz) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double wk = w[(kz * 3 + ky) * 3 + kx];
            if (wk == 0.0) continue;
            for_each_tap_row(in, out, taps, stride, kz, ky, kx,
                             [&](std::size_t orow, std::size_t irow, std::size_t xlo, std::size_t xhi) {
                               double* d = dst + orow;
                               const double* sr = src + irow;
                               const auto off = static_cast<std::size_t>(kx);
                               for (std::size_t xo = xlo; xo < xhi; ++xo) d[xo] += wk * sr[xo * s + off - 1];
                             });
          }
        }
      }
    }
  }

  return input.tape->record(
      std::move(result), {input, weight, bias},
      [input, weight, bias, in, out, taps, stride, s](Tape& t, std::span<const double> up) {
        const Tensor& xv = t.value(input.id);
        const Tensor& wv = t.value(weight.id);
        const bool gx = t.requires_grad(input.id);
        const bool gw = t.requires_grad(weight.id);
        std::span<double> dx = gx ? t.adjoint(input.id) : std::span<double>{};
        std::span<double> dw = gw ? t.adjoint(weight.id) : std::span<double>{};
        if (t.requires_grad(bias.id)) {
          auto db = t.adjoint(bias.id);
          for (std::size_t o = 0; o < out.c; ++o) {
            double acc = 0.0;
            for (std::size_t p = 0; p < out.plane(); ++p) acc += up[o * out.plane() + p];
            db[o] += acc;
          }
        }
        if (stride == 1) {
          const Padded pad(in);
          const Geometry og{out.c, in.x, in.y, in.z};
          const std::vector<double> up_pad = pad_channels(up.data(), og, pad);
          const double* wd = wv.data.data();
          if (gx) {
            padded_correlate(
                up_pad, out.c, in.c, in, pad, -1,
                [&](std::size_t i, std::size_t o, int k) { return wd[(o * in.c + i) * 27 + static_cast<std::size_t>(k)]; },
                [](std::size_t) { return 0.0; }, dx.data());
          }
          if (gw) {
            const std::vector<double> xp = pad_channels(xv.data.data(), in, pad);
            for (std::size_t o = 0; o < out.c; ++o) {
              for (std::size_t i = 0; i < in.c; ++i) {
                double acc[27] = {};
                const double* u = up_pad.data() + o * pad.size();
                const double* x = xp.data() + i * pad.size();
                for (std::size_t base = pad.first; base < pad.last; base += kChunk) {
                  const std::size_t len = std::min(kChunk, pad.last - base);
                  for (int k = 0; k < 27; ++k) {
                    const double* xs = x + base + pad.offset[k];
                    const double* us = u + base;
                    // independent partial sums keep several FMA chains in flight
                    double part[16] = {};
                    std::size_t j = 0;
                    for (; j + 16 <= len; j += 16) {
                      for (int l = 0; l < 16; ++l) part[l] += us[j + l] * xs[j + l];
                    }
                    for (; j < len; ++j) part[0] += us[j] * xs[j];
                    double total = 0.0;
                    for (double v : part) total += v;
                    acc[k] += total;
                  }
                }
                for (int k = 0; k < 27; ++k) dw[(o * in.c + i) * 27 + static_cast<std::size_t>(k)] += acc[k];
              }
            }
          }
          return;
        }
        for (std::size_t o = 0; o < out.c; ++o) {
          const double* uo = up.data() + o * out.plane();
          for (std::size_t i = 0; i < in.c; ++i) {
            const double* src = xv.data.data() + i * in.plane();
            const double* w = wv.data.data() + (o * in.c + i) * 27;
            for (int kz = 0; kz < 3; ++kz) {
              for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                  const int k = (kz * 3 + ky) * 3 + kx;
                  const double wk = w[k];
                  double acc = 0.0;
                  for_each_tap_row(in, out, taps, stride, kz, ky, kx,
                                   [&](std::size_t orow, std::size_t irow, std::size_t xlo, std::size_t xhi) {
                                     const double* u = uo + orow;
                                     const auto off = static_cast<std::size_t>(kx);
                                     if (gw) {
                                       const double* sr = src + irow;
                                       for (std::size_t xo = xlo; xo < xhi; ++xo) acc += u[xo] * sr[xo * s + off - 1];
                                     }
                                     if (gx && wk != 0.0) {
                                       double* d = dx.data() + i * in.plane() + irow;
                                       for (std::size_t xo = xlo; xo < xhi; ++xo) d[xo * s + off - 1] += wk * u[xo];
                                     }
                                   });
                  if (gw) dw[(o * in.c + i) * 27 + static_cast<std::size_t>(k)] += acc;
                }
              }
            }
          }
        }
      });
}

Var deconv3d(Var input, Var weight, Var bias) {
  require_same_tape("deconv3d", input, weight);
  require_same_tape("deconv3d", input, bias);
  const Tensor& xv = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_spatial("deconv3d", xv);
  const Geometry in = geometry(xv);
  if (wv.dims.size() != 5 || wv.dims[1] != in.c || wv.dims[2] != 2 || wv.dims[3] != 2 || wv.dims[4] != 2) {
    shape_fail("deconv3d", "kernel " + wv.shape_string() + " incompatible with input " + xv.shape_string());
  }
  const std::size_t co = wv.dims[0];
  if (bv.dims != std::vector<std::size_t>{co}) shape_fail("deconv3d", "bias " + bv.shape_string() + " needs {out}");
  const Geometry out{co, 2 * in.x, 2 * in.y, 2 * in.z};

  // Visits every (kernel tap, input row, output row) pair; output x = 2 * xi + kx.
  auto for_each_row = [in, out](auto&& fn) {
    for (int kz = 0; kz < 2; ++kz) {
      for (int ky = 0; ky < 2; ++ky) {
        for (int kx = 0; kx < 2; ++kx) {
          const int k = (kz * 2 + ky) * 2 + kx;
          for (std::size_t z = 0; z < in.z; ++z) {
            for (std::size_t y = 0; y < in.y; ++y) {
              const std::size_t irow = (z * in.y + y) * in.x;
              const std::size_t orow = ((2 * z + static_cast<std::size_t>(kz)) * out.y + 2 * y +
                                        static_cast<std::size_t>(ky)) * out.x + static_cast<std::size_t>(kx);
              fn(k, irow, orow);
            }
          }
        }
      }
    }
  };

  Tensor result({out.c, out.x, out.y, out.z}, 0.0);
  for (std::size_t o = 0; o < out.c; ++o) {
    double* dst = result.data.data() + o * out.plane();
    std::fill(dst, dst + out.plane(), bv.data[o]);
    for (std::size_t i = 0; i < in.c; ++i) {
      const double* src = xv.data.data() + i * in.plane();
      const double* w = wv.data.data() + (o * in.c + i) * 8;
      for_each_row([&](int k, std::size_t irow, std::size_t orow) {
        const double wk = w[k];
        for (std::size_t x = 0; x < in.x; ++x) dst[orow + 2 * x] += wk * src[irow + x];
      });
    }
  }

  return input.tape->record(
      std::move(result), {input, weight, bias},
      [input, weight, bias, in, out, for_each_row](Tape& t, std::span<const double> up) {
        const Tensor& xv = t.value(input.id);
        const Tensor& wv = t.value(weight.id);
        const bool gx = t.requires_grad(input.id);
        const bool gw = t.requires_grad(weight.id);
        std::span<double> dx = gx ? t.adjoint(input.id) : std::span<double>{};
        std::span<double> dw = gw ? t.adjoint(weight.id) : std::span<double>{};
        if (t.requires_grad(bias.id)) {
          auto db = t.adjoint(bias.id);
          for (std::size_t o = 0; o < out.c; ++o) {
            double acc = 0.0;
            for (std::size_t p = 0; p < out.plane(); ++p) acc += up[o * out.plane() + p];
            db[o] += acc;
          }
        }
        for (std::size_t o = 0; o < out.c; ++o) {
          const double* uo = up.data() + o * out.plane();
          for (std::size_t i = 0; i < in.c; ++i) {
            const double* src = xv.data.data() + i * in.plane();
            const double* w = wv.data.data() + (o * in.c + i) * 8;
            double acc[8] = {};
            for_each_row([&](int k, std::size_t irow, std::size_t orow) {
              if (gw) {
                double a = 0.0;
                for (std::size_t x = 0; x < in.x; ++x) a += uo[orow + 2 * x] * src[irow + x];
                acc[k] += a;
              }
              if (gx) {
                double* d = dx.data() + i * in.plane() + irow;
                for (std::size_t x = 0; x < in.x; ++x) d[x] += w[k] * uo[orow + 2 * x];
              }
            });
            if (gw) {
              for (int k = 0; k < 8; ++k) dw[(o * in.c + i) * 8 + static_cast<std::size_t>(k)] += acc[k];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Sampling and differences

Var warp(Var image, Var flow) {
  require_same_tape("warp", image, flow);
  const Tensor& iv = image.value();
  const Tensor& fv = flow.value();
  require_spatial("warp", iv);
  require_spatial("warp", fv);
  if (fv.dims[0] != 3) shape_fail("warp", "flow must have 3 channels, got " + fv.shape_string());
  if (!std::equal(iv.dims.begin() + 1, iv.dims.end(), fv.dims.begin() + 1)) {
    shape_fail("warp", "image " + iv.shape_string() + " and flow " + fv.shape_string() + " grids differ");
  }
  const GridShape grid{iv.dims[1], iv.dims[2], iv.dims[3]};
  grid.validate();
  const std::size_t channels = iv.dims[0];
  Tensor out(iv.dims, 0.0);
  sampler::kernels::warp_forward(iv.data, channels, grid, fv.data, out.data);
  return image.tape->record(std::move(out), {image, flow},
                            [image, flow, grid, channels](Tape& t, std::span<const double> up) {
                              std::span<double> di =
                                  t.requires_grad(image.id) ? t.adjoint(image.id) : std::span<double>{};
                              std::span<double> df =
                                  t.requires_grad(flow.id) ? t.adjoint(flow.id) : std::span<double>{};
                              sampler::kernels::warp_backward(t.value(image.id).data, channels, grid,
                                                              t.value(flow.id).data, up, di, df);
                            });
}

Var forward_difference(Var a, int axis) {
  if (axis < 0 || axis > 2) shape_fail("forward_difference", "axis must be 0, 1 or 2");
  const Tensor& av = a.value();
  require_spatial("forward_difference", av);
  const Geometry g = geometry(av);
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? g.x : g.x * g.y);
  const std::size_t extent = axis == 0 ? g.x : (axis == 1 ? g.y : g.z);

  // Visits every (p, p + e_axis) pair with a forward neighbour.
  auto for_each_pair = [g, stride, extent, axis](auto&& fn) {
    for (std::size_t c = 0; c < g.c; ++c) {
      std::size_t p = c * g.plane();
      for (std::size_t z = 0; z < g.z; ++z) {
        for (std::size_t y = 0; y < g.y; ++y) {
          for (std::size_t x = 0; x < g.x; ++x, ++p) {
            const std::size_t pos = axis == 0 ? x : (axis == 1 ? y : z);
            if (pos + 1 < extent) fn(p, p + stride);
          }
        }
      }
    }
  };

  Tensor out(av.dims, 0.0);
  for_each_pair([&](std::size_t p, std::size_t q) { out.data[p] = av.data[q] - av.data[p]; });
  return a.tape->record(std::move(out), {a}, [a, for_each_pair](Tape& t, std::span<const double> up) {
    auto g = t.adjoint(a.id);
    for_each_pair([&](std::size_t p, std::size_t q) {
      g[q] += up[p];
      g[p] -= up[p];
    });
  });
}

}  // namespace icnet::ad
