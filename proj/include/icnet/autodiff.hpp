#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icnet/volume.hpp"

namespace icnet::ad {

/// Dense row-major tensor. Spatial tensors use dims {channels, dx, dy, dz}
/// with x fastest, matching Volume; kernels use {out, in, k, k, k}.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor from_volume(const Volume& vol);
  Volume to_volume() const;

  std::size_t size() const { return data.size(); }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t element_count(const std::vector<std::size_t>& dims);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& dims() const { return value().dims; }
  double item() const;
};

/// Append-only record of operations. Operands always precede their results,
/// so a reverse sweep visits nodes in a valid order. Single-threaded.
class Tape {
 public:
  /// Receives the node's output adjoint and accumulates into operand adjoints.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(Tensor value);
  /// Leaf treated as a constant.
  Var constant(Tensor value);

  /// Appends the result of an operation. `fn` is dropped when no operand needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> operands, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adjoint of a node, allocated as zeros on first access.
  std::span<double> adjoint(std::size_t id);

  /// Gradient of the last backward root with respect to `v`; zeros if unreached.
  Tensor grad(Var v) const;

  /// Reverse sweep from a single-element root. Clears adjoints from any earlier sweep.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> adjoint;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable references while recording
};

// Primitive operations. All throw ShapeError naming the operation on mismatch.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var mul(Var a, Var b);
Var square(Var a);
/// Single-element sum of every entry.
Var sum(Var a);
/// Single-element sum of weights[i] * a[i]; `weights` is a constant with a's dims.
Var masked_weighted_sum(Var a, const Tensor& weights);
Var relu(Var a);
Var tanh(Var a);
Var concat_channels(Var a, Var b);

/// 3x3x3 convolution with zero padding 1. `stride` is 1 (same extent) or 2
/// (extent halved, rounding up). weight {out, in, 3, 3, 3}, bias {out}.
Var conv3d(Var input, Var weight, Var bias, int stride);

/// 2x2x2 transposed convolution with stride 2; output extent is exactly twice
/// the input. weight {out, in, 2, 2, 2}, bias {out}.
Var deconv3d(Var input, Var weight, Var bias);

/// Differentiable backward warp of `image` (any channel count) under a
/// three-channel `flow` on the same grid.
Var warp(Var image, Var flow);

/// out(p) = a(p + e_axis) - a(p) per channel; zero on the last slice along `axis`.
Var forward_difference(Var a, int axis);

}  // namespace icnet::ad
