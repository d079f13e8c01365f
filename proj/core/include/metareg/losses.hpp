#pragma once

#include <vector>

#include "metareg/autodiff.hpp"
#include "metareg/volume.hpp"

namespace metareg {

// Label-driven loss weighting. The image-similarity weight is carried only to
// make its absence explicit; validate() rejects any non-zero value.
struct LossWeights {
  double alpha_label = 1.0;
  double alpha_def = 1.0;
  double alpha_image = 0.0;
  std::vector<double> sigmas_mm{0.0, 1.0, 2.0, 4.0};

  void validate() const;  // throws ConfigError
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kDiceEpsilon = 1e-6;

// (2 sum(pq) + eps) / (sum(p^2) + sum(q^2) + eps) with p, q clamped to [0,1].
template <class T> Var<T> soft_dice(Var<T> p, Var<T> q);

// -(1/Z) sum_sigma dice(G_sigma(target), G_sigma(warped)); spacing in mm.
template <class T>
Var<T> multiscale_dice_loss(Var<T> warped_source_label, Var<T> target_label, const LossWeights& weights,
                            double spacing);

// Mean over interior voxels and channels of the squared Hessian Frobenius norm
// (mixed terms twice), central differences in voxel units. ddf [3,D,H,W].
template <class T> Var<T> bending_energy(Var<T> ddf);

template <class T>
Var<T> total_loss(Var<T> warped_label, Var<T> target_label, Var<T> ddf, const LossWeights& weights,
                  double spacing);

// Value-only conveniences.
double soft_dice(const Volume& p, const Volume& q);
double multiscale_dice_loss(const Volume& warped_source_label, const Volume& target_label,
                            const LossWeights& weights);
double bending_energy(const DisplacementField& ddf);

}  // namespace metareg
