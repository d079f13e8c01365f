#pragma once

#include <array>

#include "metareg/tensor.hpp"

namespace metareg {

using Vec3 = std::array<double, 3>;

// Dense scalar grid [D,H,W] with isotropic spacing in mm.
struct Volume {
  Tensor<float> data;
  double spacing = 1.0;

  Volume() = default;
  Volume(Tensor<float> d, double s) : data(std::move(d)), spacing(s) {
    if (data.rank() != 3) throw DimensionError("volume must be rank 3, got " + shape_str(data.shape()));
  }
  static Volume zeros(const Shape& grid, double spacing) { return Volume(Tensor<float>(grid), spacing); }

  const Shape& grid() const { return data.shape(); }
  // [1,D,H,W] view for channel-first ops.
  Tensor<float> as_channels() const {
    const Shape& g = data.shape();
    return data.reshaped({1, g[0], g[1], g[2]});
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

// Displacements in mm, channel c displaces along grid axis c.
struct DisplacementField {
  Tensor<float> data;  // [3,D,H,W]
  double spacing = 1.0;

  DisplacementField() = default;
  DisplacementField(Tensor<float> d, double s) : data(std::move(d)), spacing(s) {
    if (data.rank() != 4 || data.dim(0) != 3) {
      throw DimensionError("displacement field must be [3,D,H,W], got " + shape_str(data.shape()));
    }
  }
  static DisplacementField zeros(const Shape& grid, double spacing) {
    return DisplacementField(Tensor<float>({3, grid.at(0), grid.at(1), grid.at(2)}), spacing);
  }

  Shape grid() const { return {data.dim(1), data.dim(2), data.dim(3)}; }

  friend bool operator==(const DisplacementField&, const DisplacementField&) = default;
};

// Value-only warp of a volume by a displacement field on the same grid.
Volume warp_volume(const Volume& volume, const DisplacementField& ddf);

// Intensity-weighted centroid in mm (grid index times spacing). Returns false
// when the volume has no positive mass.
bool centroid_mm(const Volume& volume, Vec3& out);

}  // namespace metareg
