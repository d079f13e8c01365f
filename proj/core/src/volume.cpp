#include "metareg/volume.hpp"

#include "metareg/autodiff.hpp"

namespace metareg {

Volume warp_volume(const Volume& volume, const DisplacementField& ddf) {
  Tensor<float> out = kernels::warp(volume.as_channels(), ddf.data, ddf.spacing);
  return Volume(out.reshaped(volume.grid()), volume.spacing);
}

bool centroid_mm(const Volume& volume, Vec3& out) {
  const Shape& g = volume.grid();
  double mass = 0.0, sd = 0.0, sh = 0.0, sw = 0.0;
  std::int64_t v = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++v) {
        const double m = volume.data[v];
        if (m <= 0.0) continue;
        mass += m;
        sd += m * static_cast<double>(d);
        sh += m * static_cast<double>(h);
        sw += m * static_cast<double>(w);
      }
    }
  }
  if (mass <= 0.0) return false;
  out = {sd / mass * volume.spacing, sh / mass * volume.spacing, sw / mass * volume.spacing};
  return true;
}

}  // namespace metareg
