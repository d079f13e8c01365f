#include <cblas.h>

#include <algorithm>
#include <vector>

#include "metareg/autodiff.hpp"

namespace metareg {
namespace kernels {
namespace {

// Products are summed in blocks of this many columns in working precision;
// block totals are accumulated in double.
constexpr std::int64_t kReduceBlock = 1024;

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, float alpha, const float* a,
          int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// [rows x cols] -> [cols x rows]
template <class T>
void transpose(const T* src, T* dst, std::int64_t rows, std::int64_t cols) {
  constexpr std::int64_t kTile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::int64_t r1 = std::min(rows, r0 + kTile);
    for (std::int64_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::int64_t c1 = std::min(cols, c0 + kTile);
      for (std::int64_t r = r0; r < r1; ++r) {
        for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

std::int64_t row_width(const ConvGeometry& g) { return g.ksize * g.ksize * g.ksize * g.in_ch; }

// Output voxels handled per GEMM block, sized so a block of patch rows stays
// cache resident. Also bounds the working-precision partial sums.
std::int64_t block_rows(const ConvGeometry& g) {
  return std::clamp<std::int64_t>(65536 / row_width(g), 32, kReduceBlock);
}

bool is_pointwise(const ConvGeometry& g) { return g.ksize == 1 && g.stride == 1 && g.pad == 0; }

// Visits the (od, oh) output rows overlapping voxels [n0, n1), passing the
// covered ow range and the patch row index of its first voxel.
template <class F>
void for_each_row(const ConvGeometry& g, std::int64_t n0, std::int64_t n1, F&& f) {
  std::int64_t n = n0;
  while (n < n1) {
    const std::int64_t row = n / g.out_w, ow0 = n % g.out_w;
    const std::int64_t ow1 = std::min(g.out_w, ow0 + (n1 - n));
    f(n - n0, row / g.out_h, row % g.out_h, ow0, ow1);
    n += ow1 - ow0;
  }
}

// Patch rows [n1 - n0, K'] from a channel-last input [N_in, C], with K'
// ordered (kd, kh, kw, c) so that each (kd, kh) run is contiguous.
template <class T>
void im2row(const ConvGeometry& g, const T* in_cl, std::int64_t n0, std::int64_t n1, T* rows) {
  const std::int64_t k = g.ksize, c_n = g.in_ch, kw_run = k * c_n, s = g.stride;
  const std::int64_t width = row_width(g);
  for_each_row(g, n0, n1, [&](std::int64_t r0, std::int64_t od, std::int64_t oh, std::int64_t ow0,
                              std::int64_t ow1) {
    for (std::int64_t kd = 0; kd < k; ++kd) {
      const std::int64_t id = od * s + kd - g.pad;
      for (std::int64_t kh = 0; kh < k; ++kh) {
        const std::int64_t ih = oh * s + kh - g.pad;
        T* dst = rows + r0 * width + (kd * k + kh) * kw_run;
        if (id < 0 || id >= g.in_d || ih < 0 || ih >= g.in_h) {
          for (std::int64_t ow = ow0; ow < ow1; ++ow, dst += width) {
            for (std::int64_t i = 0; i < kw_run; ++i) dst[i] = T{0};
          }
          continue;
        }
        const T* src = in_cl + ((id * g.in_h + ih) * g.in_w) * c_n;
        for (std::int64_t ow = ow0; ow < ow1; ++ow, dst += width) {
          const std::int64_t iw0 = ow * s - g.pad;
          if (iw0 >= 0 && iw0 + k <= g.in_w) {
            const T* x = src + iw0 * c_n;
            for (std::int64_t i = 0; i < kw_run; ++i) dst[i] = x[i];
            continue;
          }
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const std::int64_t iw = iw0 + kw;
            T* cell = dst + kw * c_n;
            if (iw < 0 || iw >= g.in_w) {
              for (std::int64_t c = 0; c < c_n; ++c) cell[c] = T{0};
            } else {
              for (std::int64_t c = 0; c < c_n; ++c) cell[c] = src[iw * c_n + c];
            }
          }
        }
      }
    }
  });
}

template <class T>
void row2im_add(const ConvGeometry& g, const T* rows, std::int64_t n0, std::int64_t n1, T* in_cl) {
  const std::int64_t k = g.ksize, c_n = g.in_ch, kw_run = k * c_n, s = g.stride;
  const std::int64_t width = row_width(g);
  for_each_row(g, n0, n1, [&](std::int64_t r0, std::int64_t od, std::int64_t oh, std::int64_t ow0,
                              std::int64_t ow1) {
    for (std::int64_t kd = 0; kd < k; ++kd) {
      const std::int64_t id = od * s + kd - g.pad;
      if (id < 0 || id >= g.in_d) continue;
      for (std::int64_t kh = 0; kh < k; ++kh) {
        const std::int64_t ih = oh * s + kh - g.pad;
        if (ih < 0 || ih >= g.in_h) continue;
        const T* src = rows + r0 * width + (kd * k + kh) * kw_run;
        T* dst = in_cl + ((id * g.in_h + ih) * g.in_w) * c_n;
        for (std::int64_t ow = ow0; ow < ow1; ++ow, src += width) {
          const std::int64_t iw0 = ow * s - g.pad;
          if (iw0 >= 0 && iw0 + k <= g.in_w) {
            T* x = dst + iw0 * c_n;
            for (std::int64_t i = 0; i < kw_run; ++i) x[i] += src[i];
            continue;
          }
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const std::int64_t iw = iw0 + kw;
            if (iw < 0 || iw >= g.in_w) continue;
            T* x = dst + iw * c_n;
            const T* y = src + kw * c_n;
            for (std::int64_t c = 0; c < c_n; ++c) x[c] += y[c];
          }
        }
      }
    }
  });
}

// kernel [Co, C, k, k, k] -> [Co, k, k, k, C] to match the patch ordering.
template <class T>
std::vector<T> reorder_kernel(const ConvGeometry& g, const T* kernel) {
  const std::int64_t taps = g.ksize * g.ksize * g.ksize;
  std::vector<T> out(static_cast<std::size_t>(g.out_ch * taps * g.in_ch));
  for (std::int64_t co = 0; co < g.out_ch; ++co) {
    for (std::int64_t c = 0; c < g.in_ch; ++c) {
      for (std::int64_t t = 0; t < taps; ++t) {
        out[static_cast<std::size_t>((co * taps + t) * g.in_ch + c)] = kernel[(co * g.in_ch + c) * taps + t];
      }
    }
  }
  return out;
}

// Block of patch rows; pointwise convolutions read the channel-last input in place.
template <class T>
const T* patch_block(const ConvGeometry& g, const T* in_cl, std::int64_t n0, std::int64_t n1,
                     std::vector<T>& buffer) {
  if (is_pointwise(g)) return in_cl + n0 * g.in_ch;
  im2row(g, in_cl, n0, n1, buffer.data());
  return buffer.data();
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, int stride, Padding padding) {
  if (input.size() != 5) {
    throw DimensionError("conv3d: input must be [B,C,D,H,W], got " + shape_str(input));
  }
  if (kernel.size() != 5) {
    throw DimensionError("conv3d: kernel must be [C',C,k,k,k], got " + shape_str(kernel));
  }
  if (kernel[1] != input[1]) {
    throw DimensionError("conv3d: axis 1 (channels) mismatch: input has " + std::to_string(input[1]) +
                         ", kernel expects " + std::to_string(kernel[1]));
  }
  if (kernel[2] != kernel[3] || kernel[2] != kernel[4]) {
    throw DimensionError("conv3d: kernel must be cubic, got " + shape_str(kernel));
  }
  if (kernel[2] % 2 == 0) throw DimensionError("conv3d: kernel extent must be odd, got " + shape_str(kernel));
  if (stride < 1) throw ParameterError("conv3d: stride must be >= 1");

  ConvGeometry g{};
  g.batch = input[0];
  g.in_ch = input[1];
  g.out_ch = kernel[0];
  g.ksize = kernel[2];
  g.stride = stride;
  g.pad = padding == Padding::kSame ? g.ksize / 2 : 0;
  g.in_d = input[2];
  g.in_h = input[3];
  g.in_w = input[4];
  auto out_extent = [&](std::int64_t n, int axis) {
    const std::int64_t e = (n + 2 * g.pad - g.ksize);
    if (e < 0) {
      throw DimensionError("conv3d: axis " + std::to_string(axis) + " extent " + std::to_string(n) +
                           " smaller than kernel " + std::to_string(g.ksize));
    }
    return e / g.stride + 1;
  };
  g.out_d = out_extent(g.in_d, 2);
  g.out_h = out_extent(g.in_h, 3);
  g.out_w = out_extent(g.in_w, 4);
  return g;
}

template <class T>
void conv3d_forward(const ConvGeometry& g, const T* input, const T* kernel, const T* bias, T* output) {
  const std::int64_t n_out = g.out_d * g.out_h * g.out_w;
  const std::int64_t n_in = g.in_d * g.in_h * g.in_w;
  const std::int64_t width = row_width(g), step = block_rows(g);
  const std::vector<T> wr = reorder_kernel(g, kernel);
  std::vector<T> in_cl(static_cast<std::size_t>(n_in * g.in_ch));
  std::vector<T> rows(static_cast<std::size_t>(step * width));
  std::vector<T> out_cl(static_cast<std::size_t>(n_out * g.out_ch));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    transpose(input + b * g.in_ch * n_in, in_cl.data(), g.in_ch, n_in);
    for (std::int64_t n0 = 0; n0 < n_out; n0 += step) {
      const std::int64_t n1 = std::min(n_out, n0 + step);
      const T* r = patch_block(g, in_cl.data(), n0, n1, rows);
      gemm(CblasNoTrans, CblasTrans, static_cast<int>(n1 - n0), static_cast<int>(g.out_ch),
           static_cast<int>(width), T{1}, r, static_cast<int>(width), wr.data(), static_cast<int>(width), T{0},
           out_cl.data() + n0 * g.out_ch, static_cast<int>(g.out_ch));
    }
    T* out_b = output + b * g.out_ch * n_out;
    transpose(out_cl.data(), out_b, n_out, g.out_ch);
    if (bias) {
      for (std::int64_t co = 0; co < g.out_ch; ++co) {
        T* row = out_b + co * n_out;
        const T bv = bias[co];
        for (std::int64_t i = 0; i < n_out; ++i) row[i] += bv;
      }
    }
  }
}

template <class T>
void conv3d_backward_input(const ConvGeometry& g, const T* grad_out, const T* kernel, T* grad_in) {
  const std::int64_t n_out = g.out_d * g.out_h * g.out_w;
  const std::int64_t n_in = g.in_d * g.in_h * g.in_w;
  const std::int64_t width = row_width(g), step = block_rows(g);
  const std::vector<T> wr = reorder_kernel(g, kernel);
  std::vector<T> go_cl(static_cast<std::size_t>(n_out * g.out_ch));
  std::vector<T> rows(static_cast<std::size_t>(step * width));
  std::vector<T> gi_cl(static_cast<std::size_t>(n_in * g.in_ch));
  std::vector<T> gi(static_cast<std::size_t>(n_in * g.in_ch));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    transpose(grad_out + b * g.out_ch * n_out, go_cl.data(), g.out_ch, n_out);
    if (is_pointwise(g)) {
      gemm(CblasNoTrans, CblasNoTrans, static_cast<int>(n_out), static_cast<int>(width),
           static_cast<int>(g.out_ch), T{1}, go_cl.data(), static_cast<int>(g.out_ch), wr.data(),
           static_cast<int>(width), T{0}, gi_cl.data(), static_cast<int>(width));
    } else {
      std::fill(gi_cl.begin(), gi_cl.end(), T{0});
      for (std::int64_t n0 = 0; n0 < n_out; n0 += step) {
        const std::int64_t n1 = std::min(n_out, n0 + step);
        gemm(CblasNoTrans, CblasNoTrans, static_cast<int>(n1 - n0), static_cast<int>(width),
             static_cast<int>(g.out_ch), T{1}, go_cl.data() + n0 * g.out_ch, static_cast<int>(g.out_ch),
             wr.data(), static_cast<int>(width), T{0}, rows.data(), static_cast<int>(width));
        row2im_add(g, rows.data(), n0, n1, gi_cl.data());
      }
    }
    transpose(gi_cl.data(), gi.data(), n_in, g.in_ch);
    T* dst = grad_in + b * g.in_ch * n_in;
    for (std::size_t i = 0; i < gi.size(); ++i) dst[i] += gi[i];
  }
}

template <class T>
void conv3d_backward_kernel(const ConvGeometry& g, const T* grad_out, const T* input, T* grad_kernel,
                            T* grad_bias) {
  const std::int64_t n_out = g.out_d * g.out_h * g.out_w;
  const std::int64_t n_in = g.in_d * g.in_h * g.in_w;
  const std::int64_t width = row_width(g), step = block_rows(g);
  const std::int64_t taps = g.ksize * g.ksize * g.ksize;
  std::vector<T> go_cl(static_cast<std::size_t>(n_out * g.out_ch));
  std::vector<T> in_cl(static_cast<std::size_t>(n_in * g.in_ch));
  std::vector<T> rows(static_cast<std::size_t>(step * width));
  std::vector<T> block(static_cast<std::size_t>(g.out_ch * width));
  std::vector<double> acc(static_cast<std::size_t>(g.out_ch * width), 0.0);
  std::vector<double> acc_b(static_cast<std::size_t>(g.out_ch), 0.0);
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* go = grad_out + b * g.out_ch * n_out;
    transpose(go, go_cl.data(), g.out_ch, n_out);
    transpose(input + b * g.in_ch * n_in, in_cl.data(), g.in_ch, n_in);
    for (std::int64_t n0 = 0; n0 < n_out; n0 += step) {
      const std::int64_t n1 = std::min(n_out, n0 + step);
      const T* r = patch_block(g, in_cl.data(), n0, n1, rows);
      gemm(CblasTrans, CblasNoTrans, static_cast<int>(g.out_ch), static_cast<int>(width),
           static_cast<int>(n1 - n0), T{1}, go_cl.data() + n0 * g.out_ch, static_cast<int>(g.out_ch), r,
           static_cast<int>(width), T{0}, block.data(), static_cast<int>(width));
      for (std::size_t i = 0; i < block.size(); ++i) acc[i] += static_cast<double>(block[i]);
    }
    if (grad_bias) {
      for (std::int64_t co = 0; co < g.out_ch; ++co) {
        const T* row = go + co * n_out;
        for (std::int64_t n0 = 0; n0 < n_out; n0 += kReduceBlock) {
          const std::int64_t end = std::min(n_out, n0 + kReduceBlock);
          T part{0};
          for (std::int64_t i = n0; i < end; ++i) part += row[i];
          acc_b[static_cast<std::size_t>(co)] += static_cast<double>(part);
        }
      }
    }
  }
  // acc is [Co, k, k, k, C]; the kernel layout is [Co, C, k, k, k].
  for (std::int64_t co = 0; co < g.out_ch; ++co) {
    for (std::int64_t c = 0; c < g.in_ch; ++c) {
      for (std::int64_t t = 0; t < taps; ++t) {
        grad_kernel[(co * g.in_ch + c) * taps + t] +=
            static_cast<T>(acc[static_cast<std::size_t>((co * taps + t) * g.in_ch + c)]);
      }
    }
  }
  if (grad_bias) {
    for (std::size_t i = 0; i < acc_b.size(); ++i) grad_bias[i] += static_cast<T>(acc_b[i]);
  }
}

template void conv3d_forward(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv3d_forward(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv3d_backward_input(const ConvGeometry&, const float*, const float*, float*);
template void conv3d_backward_input(const ConvGeometry&, const double*, const double*, double*);
template void conv3d_backward_kernel(const ConvGeometry&, const float*, const float*, float*, float*);
template void conv3d_backward_kernel(const ConvGeometry&, const double*, const double*, double*, double*);

}  // namespace kernels

template <class T>
Var<T> conv3d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, int stride, Padding padding) {
  if (input.tape != kernel.tape || (bias && bias->tape != input.tape)) {
    throw ContractError("conv3d: operands belong to different tapes");
  }
  const kernels::ConvGeometry g = kernels::conv_geometry(input.shape(), kernel.shape(), stride, padding);
  if (bias && (bias->value().numel() != g.out_ch)) {
    throw DimensionError("conv3d: bias has " + std::to_string(bias->value().numel()) + " entries, expected " +
                         std::to_string(g.out_ch));
  }
  Tensor<T> out(Shape{g.batch, g.out_ch, g.out_d, g.out_h, g.out_w});
  kernels::conv3d_forward(g, input.value().raw(), kernel.value().raw(), bias ? bias->value().raw() : nullptr,
                          out.raw());
  std::vector<std::int32_t> ids{input.id, kernel.id};
  if (bias) ids.push_back(bias->id);
  auto back = [g, in_id = input.id, k_id = kernel.id](const Tape<T>& tape, std::span<const T> go,
                                                      std::span<T* const> gin) {
    if (gin[0]) kernels::conv3d_backward_input(g, go.data(), tape.value(k_id).raw(), gin[0]);
    T* gb = gin.size() > 2 ? gin[2] : nullptr;
    if (gin[1]) {
      kernels::conv3d_backward_kernel(g, go.data(), tape.value(in_id).raw(), gin[1], gb);
    } else if (gb) {
      const std::int64_t n_out = g.out_d * g.out_h * g.out_w;
      for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t co = 0; co < g.out_ch; ++co) {
          double s = 0.0;
          const T* row = go.data() + (b * g.out_ch + co) * n_out;
          for (std::int64_t i = 0; i < n_out; ++i) s += static_cast<double>(row[i]);
          gb[co] += static_cast<T>(s);
        }
      }
    }
  };
  return const_cast<Tape<T>&>(*input.tape).record(std::move(out), std::move(ids), std::move(back));
}

template Var<float> conv3d(Var<float>, Var<float>, std::optional<Var<float>>, int, Padding);
template Var<double> conv3d(Var<double>, Var<double>, std::optional<Var<double>>, int, Padding);

}  // namespace metareg
