#include <algorithm>
#include <cmath>
#include <vector>

#include "metareg/autodiff.hpp"

namespace metareg {
namespace kernels {
namespace {

struct Lerp {
  std::int64_t i0, i1;
  double t;
};

// Linear interpolation stencil for coordinate x on an axis of n samples,
// clamped to [0, n-1]. `inside` reports whether x was within range.
inline Lerp lerp_at(double x, std::int64_t n, bool* inside = nullptr) {
  if (inside) *inside = x >= 0.0 && x <= static_cast<double>(n - 1);
  if (n == 1) return {0, 0, 0.0};
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  auto i0 = static_cast<std::int64_t>(std::floor(x));
  i0 = std::min(i0, n - 2);
  return {i0, i0 + 1, x - static_cast<double>(i0)};
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* layout) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected " + layout + ", got " + shape_str(s));
  }
}

std::vector<Lerp> axis_stencil(std::int64_t in_n, std::int64_t out_n, double factor) {
  std::vector<Lerp> st(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) {
    st[static_cast<std::size_t>(i)] = lerp_at(static_cast<double>(i) / factor, in_n);
  }
  return st;
}

std::int64_t resampled_extent(std::int64_t n, double factor, int axis) {
  const auto out = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * factor));
  if (out < 1) {
    throw DimensionError("resample_trilinear: axis " + std::to_string(axis) + " would have extent " +
                         std::to_string(out));
  }
  return out;
}

// Index of tap j (offset -r..r) for output i under half-sample symmetric
// reflection with period 2n.
inline std::int64_t reflect(std::int64_t i, std::int64_t n) {
  const std::int64_t period = 2 * n;
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

template <class T>
void filter_axis(const T* in, T* out, std::int64_t outer, std::int64_t n, std::int64_t inner,
                 const std::vector<double>& taps) {
  const auto radius = static_cast<std::int64_t>(taps.size() / 2);
  const auto n_taps = static_cast<std::int64_t>(taps.size());
  if (inner == 1) {
    // Contiguous lines: reflect-pad once, then a dense dot product per sample.
    std::vector<T> line(static_cast<std::size_t>(n + 2 * radius));
    std::vector<T> w(taps.begin(), taps.end());
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = in + o * n;
      T* dst = out + o * n;
      for (std::int64_t i = -radius; i < n + radius; ++i) line[static_cast<std::size_t>(i + radius)] = src[reflect(i, n)];
      for (std::int64_t i = 0; i < n; ++i) {
        const T* x = line.data() + i;
        T acc{0};
        for (std::int64_t j = 0; j < n_taps; ++j) acc += w[static_cast<std::size_t>(j)] * x[j];
        dst[i] = acc;
      }
    }
    return;
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = in + o * n * inner;
    T* dst = out + o * n * inner;
    for (std::int64_t i = 0; i < n; ++i) {
      T* a = dst + i * inner;
      std::fill(a, a + inner, T{0});
      for (std::int64_t j = -radius; j <= radius; ++j) {
        const T w = static_cast<T>(taps[static_cast<std::size_t>(j + radius)]);
        const T* line = src + reflect(i + j, n) * inner;
        for (std::int64_t k = 0; k < inner; ++k) a[k] += w * line[k];
      }
    }
  }
}

// Linear resampling along the middle axis of [outer, n_in, inner] into
// [outer, n_out, inner].
template <class T>
void lerp_axis(const T* in, T* out, std::int64_t outer, std::int64_t n_in, std::int64_t inner,
               const std::vector<Lerp>& st) {
  const auto n_out = static_cast<std::int64_t>(st.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = in + o * n_in * inner;
    T* dst = out + o * n_out * inner;
    for (std::int64_t i = 0; i < n_out; ++i) {
      const Lerp& l = st[static_cast<std::size_t>(i)];
      const T w0 = static_cast<T>(1.0 - l.t), w1 = static_cast<T>(l.t);
      const T* a = src + l.i0 * inner;
      const T* b = src + l.i1 * inner;
      T* d = dst + i * inner;
      for (std::int64_t k = 0; k < inner; ++k) d[k] = w0 * a[k] + w1 * b[k];
    }
  }
}

// Adjoint of lerp_axis: scatters [outer, n_out, inner] into [outer, n_in, inner].
template <class T>
void lerp_axis_adjoint(const T* g_out, T* g_in, std::int64_t outer, std::int64_t n_in, std::int64_t inner,
                       const std::vector<Lerp>& st) {
  const auto n_out = static_cast<std::int64_t>(st.size());
  std::fill(g_in, g_in + outer * n_in * inner, T{0});
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = g_out + o * n_out * inner;
    T* dst = g_in + o * n_in * inner;
    for (std::int64_t i = 0; i < n_out; ++i) {
      const Lerp& l = st[static_cast<std::size_t>(i)];
      const T w0 = static_cast<T>(1.0 - l.t), w1 = static_cast<T>(l.t);
      const T* g = src + i * inner;
      T* a = dst + l.i0 * inner;
      T* b = dst + l.i1 * inner;
      for (std::int64_t k = 0; k < inner; ++k) a[k] += w0 * g[k];
      for (std::int64_t k = 0; k < inner; ++k) b[k] += w1 * g[k];
    }
  }
}

}  // namespace

std::vector<double> gaussian_kernel_1d(double sigma_voxels) {
  if (sigma_voxels < 0.0) throw ParameterError("gaussian kernel: negative sigma");
  if (sigma_voxels == 0.0) return {1.0};
  const auto radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma_voxels)));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::int64_t j = -radius; j <= radius; ++j) {
    const double x = static_cast<double>(j) / sigma_voxels;
    const double w = std::exp(-0.5 * x * x);
    taps[static_cast<std::size_t>(j + radius)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& input, double factor) {
  require_rank(input.shape(), 4, "resample_trilinear", "[C,D,H,W]");
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ParameterError("resample_trilinear: scale must be positive, got " + std::to_string(factor));
  }
  if (factor == 1.0) return input;
  const std::int64_t c_n = input.dim(0), d_n = input.dim(1), h_n = input.dim(2), w_n = input.dim(3);
  const std::int64_t od = resampled_extent(d_n, factor, 1), oh = resampled_extent(h_n, factor, 2),
                     ow = resampled_extent(w_n, factor, 3);
  const auto sd = axis_stencil(d_n, od, factor), sh = axis_stencil(h_n, oh, factor),
             sw = axis_stencil(w_n, ow, factor);
  // Separable: w, then h, then d.
  std::vector<T> t1(static_cast<std::size_t>(c_n * d_n * h_n * ow));
  std::vector<T> t2(static_cast<std::size_t>(c_n * d_n * oh * ow));
  lerp_axis(input.raw(), t1.data(), c_n * d_n * h_n, w_n, 1, sw);
  lerp_axis(t1.data(), t2.data(), c_n * d_n, h_n, ow, sh);
  Tensor<T> out(Shape{c_n, od, oh, ow});
  lerp_axis(t2.data(), out.raw(), c_n, d_n, oh * ow, sd);
  return out;
}

template <class T>
Tensor<T> warp(const Tensor<T>& input, const Tensor<T>& ddf, double spacing) {
  require_rank(input.shape(), 4, "warp", "volume [C,D,H,W]");
  require_rank(ddf.shape(), 4, "warp", "ddf [3,D,H,W]");
  if (ddf.dim(0) != 3) throw DimensionError("warp: ddf axis 0 must have 3 components, got " + shape_str(ddf.shape()));
  for (std::size_t ax = 1; ax < 4; ++ax) {
    if (ddf.dim(ax) != input.dim(ax)) {
      throw DimensionError("warp: grid mismatch on axis " + std::to_string(ax) + " (volume " +
                           std::to_string(input.dim(ax)) + ", ddf " + std::to_string(ddf.dim(ax)) + ")");
    }
  }
  if (!(spacing > 0.0)) throw ParameterError("warp: spacing must be positive");
  const std::int64_t c_n = input.dim(0), d_n = input.dim(1), h_n = input.dim(2), w_n = input.dim(3);
  const std::int64_t vox = d_n * h_n * w_n;
  Tensor<T> out(input.shape());
  const T* u0 = ddf.raw();
  const T* u1 = u0 + vox;
  const T* u2 = u1 + vox;
  const double inv = 1.0 / spacing;
  for (std::int64_t d = 0, v = 0; d < d_n; ++d) {
    for (std::int64_t h = 0; h < h_n; ++h) {
      for (std::int64_t w = 0; w < w_n; ++w, ++v) {
        const Lerp a = lerp_at(static_cast<double>(d) + u0[v] * inv, d_n);
        const Lerp b = lerp_at(static_cast<double>(h) + u1[v] * inv, h_n);
        const Lerp e = lerp_at(static_cast<double>(w) + u2[v] * inv, w_n);
        for (std::int64_t c = 0; c < c_n; ++c) {
          const T* in = input.raw() + c * vox;
          auto at = [&](std::int64_t i, std::int64_t j) {
            const T* r = in + (i * h_n + j) * w_n;
            return (1 - e.t) * r[e.i0] + e.t * r[e.i1];
          };
          const double lo = (1 - b.t) * at(a.i0, b.i0) + b.t * at(a.i0, b.i1);
          const double hi = (1 - b.t) * at(a.i1, b.i0) + b.t * at(a.i1, b.i1);
          out[c * vox + v] = static_cast<T>((1 - a.t) * lo + a.t * hi);
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> gaussian_filter(const Tensor<T>& input, double sigma, double spacing) {
  if (sigma < 0.0) throw ParameterError("gaussian_filter: negative sigma " + std::to_string(sigma));
  if (!(spacing > 0.0)) throw ParameterError("gaussian_filter: spacing must be positive");
  if (input.rank() < 3) throw DimensionError("gaussian_filter: needs rank >= 3, got " + shape_str(input.shape()));
  if (sigma == 0.0) return input;
  const auto taps = gaussian_kernel_1d(sigma / spacing);
  const std::size_t r = input.rank();
  const std::int64_t d_n = input.dim(r - 3), h_n = input.dim(r - 2), w_n = input.dim(r - 1);
  const std::int64_t batch = input.numel() / (d_n * h_n * w_n);
  Tensor<T> a(input.shape()), b(input.shape());
  filter_axis(input.raw(), a.raw(), batch * d_n * h_n, w_n, 1, taps);
  filter_axis(a.raw(), b.raw(), batch * d_n, h_n, w_n, taps);
  filter_axis(b.raw(), a.raw(), batch, d_n, h_n * w_n, taps);
  return a;
}

template Tensor<float> resample_trilinear(const Tensor<float>&, double);
template Tensor<double> resample_trilinear(const Tensor<double>&, double);
template Tensor<float> warp(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> warp(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> gaussian_filter(const Tensor<float>&, double, double);
template Tensor<double> gaussian_filter(const Tensor<double>&, double, double);

}  // namespace kernels

namespace {

template <class T>
Tape<T>& mutable_tape(Var<T> v) {
  return const_cast<Tape<T>&>(*v.tape);
}

}  // namespace

template <class T>
Var<T> resample_trilinear(Var<T> input, double factor) {
  Tensor<T> out = kernels::resample_trilinear(input.value(), factor);
  if (factor == 1.0) {
    auto back = [](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    };
    return mutable_tape(input).record(std::move(out), {input.id}, std::move(back));
  }
  const Shape in_shape = input.shape();
  const Shape out_shape = out.shape();
  auto back = [in_shape, out_shape, factor](const Tape<T>&, std::span<const T> g, std::span<T* const> gin) {
    const std::int64_t c_n = in_shape[0], d_n = in_shape[1], h_n = in_shape[2], w_n = in_shape[3];
    const std::int64_t od = out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const auto sd = kernels::axis_stencil(d_n, od, factor), sh = kernels::axis_stencil(h_n, oh, factor),
               sw = kernels::axis_stencil(w_n, ow, factor);
    std::vector<T> t2(static_cast<std::size_t>(c_n * d_n * oh * ow));
    std::vector<T> t1(static_cast<std::size_t>(c_n * d_n * h_n * ow));
    std::vector<T> t0(static_cast<std::size_t>(c_n * d_n * h_n * w_n));
    kernels::lerp_axis_adjoint(g.data(), t2.data(), c_n, d_n, oh * ow, sd);
    kernels::lerp_axis_adjoint(t2.data(), t1.data(), c_n * d_n, h_n, ow, sh);
    kernels::lerp_axis_adjoint(t1.data(), t0.data(), c_n * d_n * h_n, w_n, 1, sw);
    for (std::size_t i = 0; i < t0.size(); ++i) gin[0][i] += t0[i];
  };
  return mutable_tape(input).record(std::move(out), {input.id}, std::move(back));
}

template <class T>
Var<T> warp(Var<T> input, Var<T> ddf, double spacing) {
  if (input.tape != ddf.tape) throw ContractError("warp: operands belong to different tapes");
  Tensor<T> out = kernels::warp(input.value(), ddf.value(), spacing);
  auto back = [in_id = input.id, u_id = ddf.id, spacing](const Tape<T>& tape, std::span<const T> g,
                                                        std::span<T* const> gin) {
    const Tensor<T>& input = tape.value(in_id);
    const Tensor<T>& ddf = tape.value(u_id);
    const std::int64_t c_n = input.dim(0), d_n = input.dim(1), h_n = input.dim(2), w_n = input.dim(3);
    const std::int64_t vox = d_n * h_n * w_n;
    const double inv = 1.0 / spacing;
    const T* u0 = ddf.raw();
    const T* u1 = u0 + vox;
    const T* u2 = u1 + vox;
    for (std::int64_t d = 0, v = 0; d < d_n; ++d) {
      for (std::int64_t h = 0; h < h_n; ++h) {
        for (std::int64_t w = 0; w < w_n; ++w, ++v) {
          bool in_a, in_b, in_e;
          const auto a = kernels::lerp_at(static_cast<double>(d) + u0[v] * inv, d_n, &in_a);
          const auto b = kernels::lerp_at(static_cast<double>(h) + u1[v] * inv, h_n, &in_b);
          const auto e = kernels::lerp_at(static_cast<double>(w) + u2[v] * inv, w_n, &in_e);
          const std::int64_t corner[8] = {
              (a.i0 * h_n + b.i0) * w_n + e.i0, (a.i0 * h_n + b.i0) * w_n + e.i1,
              (a.i0 * h_n + b.i1) * w_n + e.i0, (a.i0 * h_n + b.i1) * w_n + e.i1,
              (a.i1 * h_n + b.i0) * w_n + e.i0, (a.i1 * h_n + b.i0) * w_n + e.i1,
              (a.i1 * h_n + b.i1) * w_n + e.i0, (a.i1 * h_n + b.i1) * w_n + e.i1};
          const double wa[2] = {1 - a.t, a.t}, wb[2] = {1 - b.t, b.t}, we[2] = {1 - e.t, e.t};
          double gu0 = 0.0, gu1 = 0.0, gu2 = 0.0;
          for (std::int64_t c = 0; c < c_n; ++c) {
            const double gv = g[static_cast<std::size_t>(c * vox + v)];
            if (gv == 0.0) continue;
            const T* in = input.raw() + c * vox;
            if (gin[0]) {
              T* gi = gin[0] + c * vox;
              for (int k = 0; k < 8; ++k) {
                gi[corner[k]] += static_cast<T>(gv * wa[k >> 2] * wb[(k >> 1) & 1] * we[k & 1]);
              }
            }
            if (gin[1]) {
              double v_[8];
              for (int k = 0; k < 8; ++k) v_[k] = in[corner[k]];
              // d/dt of the trilinear blend along each axis.
              const double da = wb[0] * we[0] * (v_[4] - v_[0]) + wb[0] * we[1] * (v_[5] - v_[1]) +
                                wb[1] * we[0] * (v_[6] - v_[2]) + wb[1] * we[1] * (v_[7] - v_[3]);
              const double db = wa[0] * we[0] * (v_[2] - v_[0]) + wa[0] * we[1] * (v_[3] - v_[1]) +
                                wa[1] * we[0] * (v_[6] - v_[4]) + wa[1] * we[1] * (v_[7] - v_[5]);
              const double de = wa[0] * wb[0] * (v_[1] - v_[0]) + wa[0] * wb[1] * (v_[3] - v_[2]) +
                                wa[1] * wb[0] * (v_[5] - v_[4]) + wa[1] * wb[1] * (v_[7] - v_[6]);
              if (in_a && d_n > 1) gu0 += gv * da;
              if (in_b && h_n > 1) gu1 += gv * db;
              if (in_e && w_n > 1) gu2 += gv * de;
            }
          }
          if (gin[1]) {
            gin[1][v] += static_cast<T>(gu0 * inv);
            gin[1][vox + v] += static_cast<T>(gu1 * inv);
            gin[1][2 * vox + v] += static_cast<T>(gu2 * inv);
          }
        }
      }
    }
  };
  return mutable_tape(input).record(std::move(out), {input.id, ddf.id}, std::move(back));
}

template <class T>
Var<T> gaussian_filter(Var<T> input, double sigma, double spacing) {
  Tensor<T> out = kernels::gaussian_filter(input.value(), sigma, spacing);
  // With a symmetric kernel and symmetric reflection the filter matrix is
  // symmetric, so the adjoint is the filter itself.
  auto back = [shape = input.shape(), sigma, spacing](const Tape<T>&, std::span<const T> g,
                                                      std::span<T* const> gin) {
    Tensor<T> go(shape, std::vector<T>(g.begin(), g.end()));
    Tensor<T> gi = kernels::gaussian_filter(go, sigma, spacing);
    for (std::int64_t i = 0; i < gi.numel(); ++i) gin[0][i] += gi[i];
  };
  return mutable_tape(input).record(std::move(out), {input.id}, std::move(back));
}

template Var<float> resample_trilinear(Var<float>, double);
template Var<double> resample_trilinear(Var<double>, double);
template Var<float> warp(Var<float>, Var<float>, double);
template Var<double> warp(Var<double>, Var<double>, double);
template Var<float> gaussian_filter(Var<float>, double, double);
template Var<double> gaussian_filter(Var<double>, double, double);

}  // namespace metareg
