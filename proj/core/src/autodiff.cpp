#include "metareg/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace metareg {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

// --- GradientSet -----------------------------------------------------------

template <class T>
void GradientSet<T>::add(std::int32_t leaf_id, std::string name, Tensor<T> grad) {
  const std::size_t idx = entries_.size();
  by_id_.emplace(leaf_id, idx);
  if (!name.empty()) {
    if (!by_name_.emplace(name, idx).second) {
      throw ContractError("duplicate gradient name '" + name + "'");
    }
  }
  entries_.push_back({leaf_id, std::move(name), std::move(grad)});
}

template <class T>
const Tensor<T>& GradientSet<T>::of(Var<T> leaf) const {
  auto it = by_id_.find(leaf.id);
  if (it == by_id_.end()) throw ContractError("no gradient recorded for node " + std::to_string(leaf.id));
  return entries_[it->second].grad;
}

template <class T>
const Tensor<T>& GradientSet<T>::named(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("no gradient named '" + name + "'");
  return entries_[it->second].grad;
}

// --- Tape ------------------------------------------------------------------

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad, std::string name) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::int32_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (std::int32_t id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw ContractError("tape input " + std::to_string(id) + " is not on this tape");
    }
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <class T>
GradientSet<T> Tape<T>::backward(Var<T> loss) const {
  if (loss.tape != this) throw ContractError("backward: loss was recorded on a different tape");
  const Tensor<T>& lv = value(loss.id);
  if (lv.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
  }
  const auto last = static_cast<std::size_t>(loss.id);
  std::vector<std::vector<T>> grads(nodes_.size());
  if (nodes_[last].requires_grad) grads[last].assign(1, T{1});

  std::vector<T*> in_ptrs;
  for (std::size_t i = last + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || node.is_leaf || !node.backward) continue;
    in_ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto j = static_cast<std::size_t>(node.inputs[k]);
      if (!nodes_[j].requires_grad) continue;
      if (grads[j].empty()) grads[j].assign(static_cast<std::size_t>(nodes_[j].value.numel()), T{0});
      in_ptrs[k] = grads[j].data();
    }
    node.backward(*this, grads[i], in_ptrs);
    std::vector<T>().swap(grads[i]);
  }

  GradientSet<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    Tensor<T> g = grads[i].empty() ? Tensor<T>(node.value.shape())
                                   : Tensor<T>(node.value.shape(), std::move(grads[i]));
    out.add(static_cast<std::int32_t>(i), node.name, std::move(g));
  }
  return out;
}

template class GradientSet<float>;
template class GradientSet<double>;
template class Tape<float>;
template class Tape<double>;

// --- elementwise -----------------------------------------------------------

namespace {

template <class T>
Tape<T>& tape_of(Var<T> v) {
  if (v.tape == nullptr) throw ContractError("variable is not attached to a tape");
  // Ops append to the tape that owns their operands.
  return const_cast<Tape<T>&>(*v.tape);
}

template <class T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands belong to different tapes");
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (shape_numel(a) == 1) return b;
  if (shape_numel(b) == 1) return a;
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(std::string(op) + ": axis " + std::to_string(i) + " mismatch (" +
                           std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ")");
    }
  }
  return a;
}

template <class T, class F, class DA, class DB>
Var<T> binary_op(Var<T> a, Var<T> b, const char* name, F f, DA da, DB db) {
  same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Shape shape = broadcast_shape(av.shape(), bv.shape(), name);
  Tensor<T> out(shape);
  const std::int64_t n = out.numel();
  const bool a_bc = av.numel() != n;
  const bool b_bc = bv.numel() != n;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = f(av[a_bc ? 0 : i], bv[b_bc ? 0 : i]);
  }
  auto fn = [ida = a.id, idb = b.id, a_bc, b_bc, da, db](const Tape<T>& tape, std::span<const T> g,
                                                         std::span<T* const> gin) {
    const Tensor<T>& x = tape.value(ida);
    const Tensor<T>& y = tape.value(idb);
    const std::int64_t n = static_cast<std::int64_t>(g.size());
    double acc_a = 0.0, acc_b = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const T xv = x[a_bc ? 0 : i];
      const T yv = y[b_bc ? 0 : i];
      if (gin[0]) {
        const double d = static_cast<double>(g[i]) * static_cast<double>(da(xv, yv));
        if (a_bc) acc_a += d; else gin[0][i] += static_cast<T>(d);
      }
      if (gin[1]) {
        const double d = static_cast<double>(g[i]) * static_cast<double>(db(xv, yv));
        if (b_bc) acc_b += d; else gin[1][i] += static_cast<T>(d);
      }
    }
    if (gin[0] && a_bc) gin[0][0] += static_cast<T>(acc_a);
    if (gin[1] && b_bc) gin[1][0] += static_cast<T>(acc_b);
  };
  return tape_of(a).record(std::move(out), {a.id, b.id}, std::move(fn));
}

// df receives (input, output).
template <class T, class F, class DF>
Var<T> unary_op(Var<T> a, F f, DF df) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i]);
  const std::int32_t out_id = static_cast<std::int32_t>(a.tape->size());
  auto fn = [ida = a.id, out_id, df](const Tape<T>& tape, std::span<const T> g, std::span<T* const> gin) {
    const Tensor<T>& x = tape.value(ida);
    const Tensor<T>& y = tape.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gin[0][i] += g[i] * df(x[static_cast<std::int64_t>(i)], y[static_cast<std::int64_t>(i)]);
    }
  };
  return tape_of(a).record(std::move(out), {a.id}, std::move(fn));
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_op(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                   [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_op(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                   [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_op(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                   [](T x, T) { return x; });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  return binary_op(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
                   [](T x, T y) { return -x / (y * y); });
}

template <class T>
Var<T> scale(Var<T> a, double factor) {
  const T c = static_cast<T>(factor);
  return unary_op(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> a, double offset) {
  const T c = static_cast<T>(offset);
  return unary_op(a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return unary_op(a, [](T x) { return x > T{0} ? x : T{0}; },
                  [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> leaky_relu(Var<T> a, double slope) {
  const T s = static_cast<T>(slope);
  return unary_op(a, [s](T x) { return x > T{0} ? x : s * x; },
                  [s](T x, T) { return x > T{0} ? T{1} : s; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return unary_op(a, [](T x) { return T{1} / (T{1} + std::exp(-x)); },
                  [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> square(Var<T> a) {
  return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <class T>
Var<T> clamp(Var<T> a, double lo, double hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary_op(a, [l, h](T x) { return std::min(std::max(x, l), h); },
                  [l, h](T x, T) { return (x >= l && x <= h) ? T{1} : T{0}; });
}

template <class T>
Var<T> sum(Var<T> a) {
  const double s = sum_of(a.value());
  const std::int64_t n = a.value().numel();
  auto back = [n](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
    const T gv = g[0];
    for (std::int64_t i = 0; i < n; ++i) gin[0][i] += gv;
  };
  return tape_of(a).record(Tensor<T>::scalar(static_cast<T>(s)), {a.id}, std::move(back));
}

template <class T>
Var<T> mean(Var<T> a) {
  const std::int64_t n = a.value().numel();
  const double s = sum_of(a.value()) / static_cast<double>(n);
  auto back = [n](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
    const T gv = static_cast<T>(static_cast<double>(g[0]) / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) gin[0][i] += gv;
  };
  return tape_of(a).record(Tensor<T>::scalar(static_cast<T>(s)), {a.id}, std::move(back));
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  auto back = [](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  };
  return tape_of(a).record(std::move(out), {a.id}, std::move(back));
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  Shape shape = first;
  shape[0] = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::int64_t> sizes;
  for (const Var<T>& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch " + shape_str(s));
    for (std::size_t ax = 1; ax < s.size(); ++ax) {
      if (s[ax] != first[ax]) {
        throw DimensionError("concat: axis " + std::to_string(ax) + " mismatch (" +
                             std::to_string(s[ax]) + " vs " + std::to_string(first[ax]) + ")");
      }
    }
    shape[0] += s[0];
    ids.push_back(p.id);
    sizes.push_back(p.value().numel());
  }
  Tensor<T> out(shape);
  std::int64_t offset = 0;
  for (const Var<T>& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + offset);
    offset += p.value().numel();
  }
  auto back = [sizes](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (gin[k]) {
        for (std::int64_t i = 0; i < sizes[k]; ++i) gin[k][i] += g[static_cast<std::size_t>(off + i)];
      }
      off += sizes[k];
    }
  };
  return tape_of(parts[0]).record(std::move(out), std::move(ids), std::move(back));
}

#define METAREG_INSTANTIATE_ELEMENTWISE(T)                          \
  template Var<T> add(Var<T>, Var<T>);                              \
  template Var<T> sub(Var<T>, Var<T>);                              \
  template Var<T> mul(Var<T>, Var<T>);                              \
  template Var<T> div(Var<T>, Var<T>);                              \
  template Var<T> scale(Var<T>, double);                            \
  template Var<T> add_scalar(Var<T>, double);                       \
  template Var<T> relu(Var<T>);                                     \
  template Var<T> leaky_relu(Var<T>, double);                       \
  template Var<T> sigmoid(Var<T>);                                  \
  template Var<T> square(Var<T>);                                   \
  template Var<T> clamp(Var<T>, double, double);                    \
  template Var<T> sum(Var<T>);                                      \
  template Var<T> mean(Var<T>);                                     \
  template Var<T> reshape(Var<T>, Shape);                           \
  template Var<T> concat(std::span<const Var<T>>);

METAREG_INSTANTIATE_ELEMENTWISE(float)
METAREG_INSTANTIATE_ELEMENTWISE(double)

}  // namespace metareg
