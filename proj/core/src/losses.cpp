#include "metareg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace metareg {

void LossWeights::validate() const {
  if (alpha_label < 0.0 || alpha_def < 0.0) throw ConfigError("loss weights must be nonnegative");
  if (alpha_image != 0.0) throw ConfigError("alpha_image must be 0: intensity similarity is not supported");
  if (sigmas_mm.empty()) throw ConfigError("sigma list must not be empty");
  for (std::size_t i = 0; i < sigmas_mm.size(); ++i) {
    if (sigmas_mm[i] < 0.0) throw ConfigError("sigma list entries must be nonnegative");
    if (i > 0 && !(sigmas_mm[i] > sigmas_mm[i - 1])) throw ConfigError("sigma list must be strictly increasing");
  }
}

namespace {

template <class T>
Tape<T>& mutable_tape(Var<T> v) {
  return const_cast<Tape<T>&>(*v.tape);
}

void check_same_grid(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return;
  if (a.size() != b.size()) throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(std::string(op) + ": grid mismatch on axis " + std::to_string(i) + " (" +
                           std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ")");
    }
  }
}

}  // namespace

template <class T>
Var<T> soft_dice(Var<T> p, Var<T> q) {
  check_same_grid(p.shape(), q.shape(), "soft_dice");
  if (p.tape != q.tape) throw ContractError("soft_dice: operands belong to different tapes");
  const std::int64_t n = p.value().numel();
  const T* pv = p.value().raw();
  const T* qv = q.value().raw();
  auto unit = [](T x) { return std::min(std::max(x, T{0}), T{1}); };
  double spq = 0.0, spp = 0.0, sqq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = unit(pv[i]), b = unit(qv[i]);
    spq += a * b;
    spp += a * a;
    sqq += b * b;
  }
  const double num = 2.0 * spq + kDiceEpsilon;
  const double den = spp + sqq + kDiceEpsilon;
  auto back = [pid = p.id, qid = q.id, n, num, den, unit](const Tape<T>& tape, std::span<const T> g,
                                                           std::span<T* const> gin) {
    const T* pv = tape.value(pid).raw();
    const T* qv = tape.value(qid).raw();
    // d(num/den)/dp_i = (2 q_i den - 2 p_i num) / den^2, zero where the clamp is active.
    const T cross = static_cast<T>(2.0 * static_cast<double>(g[0]) / den);
    const T self = static_cast<T>(2.0 * static_cast<double>(g[0]) * num / (den * den));
    auto active = [](T x) { return x >= T{0} && x <= T{1}; };
    for (int side = 0; side < 2; ++side) {
      T* out = gin[static_cast<std::size_t>(side)];
      if (out == nullptr) continue;
      const T* mine = side == 0 ? pv : qv;
      const T* other = side == 0 ? qv : pv;
      for (std::int64_t i = 0; i < n; ++i) {
        if (active(mine[i])) out[i] += cross * unit(other[i]) - self * mine[i];
      }
    }
  };
  return mutable_tape(p).record(Tensor<T>::scalar(static_cast<T>(num / den)), {p.id, q.id}, std::move(back));
}

template <class T>
Var<T> multiscale_dice_loss(Var<T> warped_source_label, Var<T> target_label, const LossWeights& weights,
                            double spacing) {
  if (weights.sigmas_mm.empty()) throw ConfigError("multiscale_dice_loss: empty sigma list");
  check_same_grid(warped_source_label.shape(), target_label.shape(), "multiscale_dice_loss");
  std::optional<Var<T>> total;
  for (double sigma : weights.sigmas_mm) {
    Var<T> d = soft_dice(gaussian_filter(target_label, sigma, spacing),
                         gaussian_filter(warped_source_label, sigma, spacing));
    total = total ? add(*total, d) : d;
  }
  return scale(*total, -1.0 / static_cast<double>(weights.sigmas_mm.size()));
}

namespace {

// Interior second differences of one channel along a w-row, for the six
// Hessian terms (dd, hh, ww, dh, dw, hw). Rows are indexed at w = 1..W-2.
template <class T>
struct RowTerms {
  std::vector<double> t[6];
  explicit RowTerms(std::int64_t w_n) {
    for (auto& v : t) v.assign(static_cast<std::size_t>(w_n), 0.0);
  }
};

template <class T>
void hessian_row(const T* uc, std::int64_t d, std::int64_t h, std::int64_t h_n, std::int64_t w_n,
                 RowTerms<T>& out) {
  auto row = [&](std::int64_t dd, std::int64_t hh) { return uc + ((d + dd) * h_n + (h + hh)) * w_n; };
  const T* c = row(0, 0);
  const T *dm = row(-1, 0), *dp = row(1, 0), *hm = row(0, -1), *hp = row(0, 1);
  const T *pp = row(1, 1), *pm = row(1, -1), *mp = row(-1, 1), *mm = row(-1, -1);
  double* t0 = out.t[0].data();
  double* t1 = out.t[1].data();
  double* t2 = out.t[2].data();
  double* t3 = out.t[3].data();
  double* t4 = out.t[4].data();
  double* t5 = out.t[5].data();
  for (std::int64_t w = 1; w < w_n - 1; ++w) {
    const double cv = c[w];
    t0[w] = static_cast<double>(dp[w]) - 2.0 * cv + dm[w];
    t1[w] = static_cast<double>(hp[w]) - 2.0 * cv + hm[w];
    t2[w] = static_cast<double>(c[w + 1]) - 2.0 * cv + c[w - 1];
    t3[w] = 0.25 * (static_cast<double>(pp[w]) - pm[w] - mp[w] + mm[w]);
    t4[w] = 0.25 * (static_cast<double>(dp[w + 1]) - dp[w - 1] - dm[w + 1] + dm[w - 1]);
    t5[w] = 0.25 * (static_cast<double>(hp[w + 1]) - hp[w - 1] - hm[w + 1] + hm[w - 1]);
  }
}

}  // namespace

template <class T>
Var<T> bending_energy(Var<T> ddf) {
  const Shape& s = ddf.shape();
  if (s.size() != 4) throw DimensionError("bending_energy: ddf must be [C,D,H,W], got " + shape_str(s));
  for (std::size_t ax = 1; ax < 4; ++ax) {
    if (s[ax] < 3) {
      throw DimensionError("bending_energy: axis " + std::to_string(ax) + " has " + std::to_string(s[ax]) +
                           " voxels, need >= 3");
    }
  }
  const std::int64_t c_n = s[0], d_n = s[1], h_n = s[2], w_n = s[3];
  const std::int64_t vox = d_n * h_n * w_n;
  const double norm = 1.0 / static_cast<double>(c_n * (d_n - 2) * (h_n - 2) * (w_n - 2));

  const T* u = ddf.value().raw();
  RowTerms<T> terms(w_n);
  double energy = 0.0;
  for (std::int64_t c = 0; c < c_n; ++c) {
    for (std::int64_t d = 1; d < d_n - 1; ++d) {
      for (std::int64_t h = 1; h < h_n - 1; ++h) {
        hessian_row(u + c * vox, d, h, h_n, w_n, terms);
        double row = 0.0;
        for (int k = 0; k < 6; ++k) {
          const double weight = k < 3 ? 1.0 : 2.0;
          const double* t = terms.t[k].data();
          double acc = 0.0;
          for (std::int64_t w = 1; w < w_n - 1; ++w) acc += t[w] * t[w];
          row += weight * acc;
        }
        energy += row;
      }
    }
  }
  auto back = [id = ddf.id, norm, c_n, d_n, h_n, w_n, vox](const Tape<T>& tape, std::span<const T> g,
                                                          std::span<T* const> gin) {
    const T* u = tape.value(id).raw();
    const double scale = 2.0 * static_cast<double>(g[0]) * norm;
    RowTerms<T> terms(w_n);
    for (std::int64_t c = 0; c < c_n; ++c) {
      T* gc = gin[0] + c * vox;
      auto row = [&](std::int64_t d, std::int64_t h) { return gc + (d * h_n + h) * w_n; };
      for (std::int64_t d = 1; d < d_n - 1; ++d) {
        for (std::int64_t h = 1; h < h_n - 1; ++h) {
          hessian_row(u + c * vox, d, h, h_n, w_n, terms);
          T *cr = row(d, h), *dm = row(d - 1, h), *dp = row(d + 1, h), *hm = row(d, h - 1), *hp = row(d, h + 1);
          T *pp = row(d + 1, h + 1), *pm = row(d + 1, h - 1), *mp = row(d - 1, h + 1), *mm = row(d - 1, h - 1);
          const double *t0 = terms.t[0].data(), *t1 = terms.t[1].data(), *t2 = terms.t[2].data();
          const double *t3 = terms.t[3].data(), *t4 = terms.t[4].data(), *t5 = terms.t[5].data();
          for (std::int64_t w = 1; w < w_n - 1; ++w) {
            const double a = scale * t0[w], b = scale * t1[w], e = scale * t2[w];
            // Mixed terms: weight 2, stencil coefficient 1/4.
            const double f = 0.5 * scale * t3[w], q = 0.5 * scale * t4[w], r = 0.5 * scale * t5[w];
            cr[w] += static_cast<T>(-2.0 * (a + b + e));
            dp[w] += static_cast<T>(a);
            dm[w] += static_cast<T>(a);
            hp[w] += static_cast<T>(b);
            hm[w] += static_cast<T>(b);
            cr[w + 1] += static_cast<T>(e);
            cr[w - 1] += static_cast<T>(e);
            pp[w] += static_cast<T>(f);
            pm[w] -= static_cast<T>(f);
            mp[w] -= static_cast<T>(f);
            mm[w] += static_cast<T>(f);
            dp[w + 1] += static_cast<T>(q);
            dp[w - 1] -= static_cast<T>(q);
            dm[w + 1] -= static_cast<T>(q);
            dm[w - 1] += static_cast<T>(q);
            hp[w + 1] += static_cast<T>(r);
            hp[w - 1] -= static_cast<T>(r);
            hm[w + 1] -= static_cast<T>(r);
            hm[w - 1] += static_cast<T>(r);
          }
        }
      }
    }
  };
  return mutable_tape(ddf).record(Tensor<T>::scalar(static_cast<T>(energy * norm)), {ddf.id}, std::move(back));
}

template <class T>
Var<T> total_loss(Var<T> warped_label, Var<T> target_label, Var<T> ddf, const LossWeights& weights,
                  double spacing) {
  std::optional<Var<T>> loss;
  if (weights.alpha_label != 0.0) {
    loss = scale(multiscale_dice_loss(warped_label, target_label, weights, spacing), weights.alpha_label);
  }
  if (weights.alpha_def != 0.0) {
    Var<T> be = scale(bending_energy(ddf), weights.alpha_def);
    loss = loss ? add(*loss, be) : be;
  }
  if (!loss) {
    check_same_grid(warped_label.shape(), target_label.shape(), "total_loss");
    loss = scale(sum(ddf), 0.0);
  }
  return *loss;
}

#define METAREG_INSTANTIATE_LOSSES(T)                                                              \
  template Var<T> soft_dice(Var<T>, Var<T>);                                                       \
  template Var<T> multiscale_dice_loss(Var<T>, Var<T>, const LossWeights&, double);                \
  template Var<T> bending_energy(Var<T>);                                                          \
  template Var<T> total_loss(Var<T>, Var<T>, Var<T>, const LossWeights&, double);

METAREG_INSTANTIATE_LOSSES(float)
METAREG_INSTANTIATE_LOSSES(double)

double soft_dice(const Volume& p, const Volume& q) {
  Tape<double> tape;
  auto a = tape.constant(p.data.cast<double>());
  auto b = tape.constant(q.data.cast<double>());
  return soft_dice(a, b).value().item();
}

double multiscale_dice_loss(const Volume& warped_source_label, const Volume& target_label,
                            const LossWeights& weights) {
  Tape<double> tape;
  auto a = tape.constant(warped_source_label.data.cast<double>());
  auto b = tape.constant(target_label.data.cast<double>());
  return multiscale_dice_loss(a, b, weights, target_label.spacing).value().item();
}

double bending_energy(const DisplacementField& ddf) {
  Tape<double> tape;
  return bending_energy(tape.constant(ddf.data.cast<double>())).value().item();
}

}  // namespace metareg
