#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metareg/tensor.hpp"

namespace metareg {

template <class T>
class Tape;

// Handle to a value recorded on a tape.
template <class T>
struct Var {
  const Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

// Gradients of a scalar loss with respect to every requires_grad leaf.
template <class T>
class GradientSet {
 public:
  struct Entry {
    std::int32_t leaf_id;
    std::string name;
    Tensor<T> grad;
  };

  const Tensor<T>& of(Var<T> leaf) const;
  const Tensor<T>& named(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.contains(name); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void add(std::int32_t leaf_id, std::string name, Tensor<T> grad);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::int32_t, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Records one forward pass. Nodes are appended in execution order, so the
// record is already topologically sorted; backward walks it in reverse.
template <class T>
class Tape {
 public:
  // Accumulates d(loss)/d(input_i) into grad_in[i]; grad_in[i] is null when
  // input i does not require a gradient.
  using BackwardFn =
      std::function<void(const Tape& tape, std::span<const T> grad_out, std::span<T* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = {});
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // The backward closure is dropped when no input requires a gradient.
  Var<T> record(Tensor<T> value, std::vector<std::int32_t> inputs, BackwardFn backward);

  const Tensor<T>& value(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(std::int32_t id) const {
    return nodes_.at(static_cast<std::size_t>(id)).requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Does not mutate the tape; calling it twice yields identical gradients.
  GradientSet<T> backward(Var<T> loss) const;

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string name;
  };
  std::deque<Node> nodes_;
};

template <class T>
GradientSet<T> backward(Var<T> loss) {
  return loss.tape->backward(loss);
}

// --- elementwise and reductions -------------------------------------------
// Binary ops accept identical shapes or a single-element operand on either side.

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> div(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, double factor);
template <class T> Var<T> add_scalar(Var<T> a, double offset);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> leaky_relu(Var<T> a, double slope);
template <class T> Var<T> sigmoid(Var<T> a);
template <class T> Var<T> square(Var<T> a);
template <class T> Var<T> clamp(Var<T> a, double lo, double hi);
template <class T> Var<T> sum(Var<T> a);
template <class T> Var<T> mean(Var<T> a);
template <class T> Var<T> reshape(Var<T> a, Shape shape);
// Concatenates along axis 0; trailing dimensions must agree.
template <class T> Var<T> concat(std::span<const Var<T>> parts);

// --- convolution and spatial ops -------------------------------------------

enum class Padding { kSame, kValid };

// Cross-correlation. input [B,C,D,H,W], kernel [C',C,k,k,k], bias [C'].
template <class T>
Var<T> conv3d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, int stride, Padding padding);

// Trilinear resampling of [C,D,H,W]; output extent round(n * factor) per axis,
// output index i samples input coordinate i / factor (clamped to the grid).
template <class T> Var<T> resample_trilinear(Var<T> input, double factor);

// output(c, v) = input(c, v + ddf(v) / spacing), trilinear, clamp-to-edge.
// input [C,D,H,W], ddf [3,D,H,W] in mm.
template <class T> Var<T> warp(Var<T> input, Var<T> ddf, double spacing);

// Separable Gaussian over the last three axes; sigma in mm.
template <class T> Var<T> gaussian_filter(Var<T> input, double sigma, double spacing);

// Value-only kernels shared by the tape ops and by non-differentiable callers.
namespace kernels {

struct ConvGeometry {
  std::int64_t batch, in_ch, out_ch, ksize, stride, pad;
  std::int64_t in_d, in_h, in_w, out_d, out_h, out_w;
};
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, int stride, Padding padding);

template <class T>
void conv3d_forward(const ConvGeometry& g, const T* input, const T* kernel, const T* bias, T* output);
template <class T>
void conv3d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in);
template <class T>
void conv3d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input, T* grad_kernel,
                            T* grad_bias);

template <class T> Tensor<T> resample_trilinear(const Tensor<T>& input, double factor);
template <class T> Tensor<T> warp(const Tensor<T>& input, const Tensor<T>& ddf, double spacing);
template <class T> Tensor<T> gaussian_filter(const Tensor<T>& input, double sigma, double spacing);

// Normalised 1D taps, index 0 is offset -radius.
std::vector<double> gaussian_kernel_1d(double sigma_voxels);

}  // namespace kernels

}  // namespace metareg
