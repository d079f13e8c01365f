#include "metareg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "metareg/autodiff.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

constexpr int kMaxAttempts = 8;
constexpr double kMinJacobian = 0.3;

// Trilinear sample at fractional voxel coordinates. Corners outside the grid
// read the nearest edge voxel when clamping, zero otherwise.
float sample(const Volume& v, double d, double h, double w, bool clamp) {
  const Shape& g = v.grid();
  const double x[3] = {d, h, w};
  std::int64_t i0[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(x[a]);
    i0[a] = static_cast<std::int64_t>(f);
    t[a] = x[a] - f;
  }
  auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) -> double {
    const std::int64_t idx[3] = {a, b, c};
    for (int k = 0; k < 3; ++k) {
      if (idx[k] < 0 || idx[k] >= g[static_cast<std::size_t>(k)]) {
        if (!clamp) return 0.0;
      }
    }
    const auto cl = [&](std::int64_t i, int k) { return std::clamp<std::int64_t>(i, 0, g[static_cast<std::size_t>(k)] - 1); };
    return v.data[(cl(a, 0) * g[1] + cl(b, 1)) * g[2] + cl(c, 2)];
  };
  double out = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int bd = corner >> 2, bh = (corner >> 1) & 1, bw = corner & 1;
    const double wt = (bd ? t[0] : 1 - t[0]) * (bh ? t[1] : 1 - t[1]) * (bw ? t[2] : 1 - t[2]);
    if (wt == 0.0) continue;
    out += wt * at(i0[0] + bd, i0[1] + bh, i0[2] + bw);
  }
  return static_cast<float>(out);
}

Volume binarize(const Volume& v, float threshold = 0.5f) {
  Volume out = v;
  for (float& x : out.data.data()) x = x >= threshold ? 1.0f : 0.0f;
  return out;
}

Volume smooth(const Volume& v, double sigma_mm) {
  Tensor<float> f = kernels::gaussian_filter(v.as_channels(), sigma_mm, v.spacing);
  return Volume(f.reshaped(v.grid()), v.spacing);
}

// Zero-mean, unit-variance noise smoothed with the given sigma and
// renormalised to unit standard deviation.
Volume smooth_noise(const Shape& grid, double spacing, double sigma_mm, Rng& rng) {
  Volume v = Volume::zeros(grid, spacing);
  for (float& x : v.data.data()) x = static_cast<float>(rng.normal());
  if (sigma_mm > 0.0) v = smooth(v, sigma_mm);
  double mean = 0.0, sq = 0.0;
  const auto n = static_cast<double>(v.data.numel());
  for (float x : v.data.data()) mean += x;
  mean /= n;
  for (float x : v.data.data()) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / n);
  for (float& x : v.data.data()) x = static_cast<float>((x - mean) / (sd > 0.0 ? sd : 1.0));
  return v;
}

struct Ellipsoid {
  Vec3 center;  // mm
  Vec3 radius;  // mm
  double coeff[9];
  double perturbation;

  // Relative boundary radius along unit direction n.
  double boundary(const Vec3& n) const {
    const double f[9] = {n[0],        n[1],        n[2],        n[0] * n[1], n[1] * n[2],
                         n[0] * n[2], n[0] * n[0] - n[1] * n[1], n[1] * n[1] - n[2] * n[2], n[0] * n[1] * n[2]};
    double s = 0.0, norm = 0.0;
    for (int i = 0; i < 9; ++i) {
      s += coeff[i] * f[i];
      norm += std::abs(coeff[i]);
    }
    return 1.0 + perturbation * (norm > 0.0 ? s / norm : 0.0);
  }

  bool inside(const Vec3& p) const {
    Vec3 q;
    double rho = 0.0;
    for (int a = 0; a < 3; ++a) {
      q[a] = (p[a] - center[a]) / radius[a];
      rho += q[a] * q[a];
    }
    rho = std::sqrt(rho);
    if (rho == 0.0) return true;
    return rho <= boundary({q[0] / rho, q[1] / rho, q[2] / rho});
  }
};

Volume sphere_label(const Shape& grid, double spacing, const Vec3& center_mm, double radius_vox) {
  Volume v = Volume::zeros(grid, spacing);
  std::int64_t i = 0;
  for (std::int64_t d = 0; d < grid[0]; ++d) {
    for (std::int64_t h = 0; h < grid[1]; ++h) {
      for (std::int64_t w = 0; w < grid[2]; ++w, ++i) {
        const double dd = d - center_mm[0] / spacing, dh = h - center_mm[1] / spacing, dw = w - center_mm[2] / spacing;
        if (dd * dd + dh * dh + dw * dw <= radius_vox * radius_vox) v.data[i] = 1.0f;
      }
    }
  }
  return v;
}

bool has_margin(const Volume& label, std::int64_t margin) {
  const Shape& g = label.grid();
  std::int64_t i = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++i) {
        if (label.data[i] <= 0.5f) continue;
        if (d < margin || h < margin || w < margin || d >= g[0] - margin || h >= g[1] - margin ||
            w >= g[2] - margin) {
          return false;
        }
      }
    }
  }
  return true;
}

// Smallest det(I + du/dx) over interior voxels, central differences.
double min_jacobian(const DisplacementField& f) {
  const Shape g = f.grid();
  const double sp = f.spacing;
  const std::int64_t plane = g[1] * g[2], vox = g[0] * plane;
  const std::int64_t stride[3] = {plane, g[2], 1};
  const float* u = f.data.raw();
  double lo = 1.0;
  for (std::int64_t d = 1; d + 1 < g[0]; ++d) {
    for (std::int64_t h = 1; h + 1 < g[1]; ++h) {
      for (std::int64_t w = 1; w + 1 < g[2]; ++w) {
        const std::int64_t i = d * plane + h * g[2] + w;
        double j[3][3];
        for (int c = 0; c < 3; ++c) {
          for (int a = 0; a < 3; ++a) {
            j[c][a] = (u[c * vox + i + stride[a]] - u[c * vox + i - stride[a]]) / (2.0 * sp) + (c == a ? 1.0 : 0.0);
          }
        }
        const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                           j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                           j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        lo = std::min(lo, det);
      }
    }
  }
  return lo;
}

double label_mass(const Volume& v) {
  double s = 0.0;
  for (float x : v.data.data()) s += x;
  return s;
}

Landmark make_landmark(std::string name, Volume label) {
  Landmark lm{std::move(name), std::move(label), {}};
  if (!centroid_mm(lm.label, lm.centroid_mm)) throw DataError("landmark '" + lm.name + "' is empty");
  return lm;
}

DisplacementField smooth_field(const PhantomConfig& config, double amplitude, Rng& rng) {
  const Shape& g = config.grid;
  const double cs = config.control_spacing_vox;
  std::int64_t nc[3];
  for (int a = 0; a < 3; ++a) nc[a] = static_cast<std::int64_t>(std::floor((g[static_cast<std::size_t>(a)] - 1) / cs)) + 2;
  // Control values [3, nc0, nc1, nc2], zero on the outer control layer.
  std::vector<double> ctrl(static_cast<std::size_t>(3 * nc[0] * nc[1] * nc[2]), 0.0);
  auto cidx = [&](int c, std::int64_t i, std::int64_t j, std::int64_t k) {
    return static_cast<std::size_t>(((c * nc[0] + i) * nc[1] + j) * nc[2] + k);
  };
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < nc[0]; ++i) {
      for (std::int64_t j = 0; j < nc[1]; ++j) {
        for (std::int64_t k = 0; k < nc[2]; ++k) {
          const double u = rng.uniform(-amplitude, amplitude);
          const bool border = i == 0 || j == 0 || k == 0 || i == nc[0] - 1 || j == nc[1] - 1 || k == nc[2] - 1;
          ctrl[cidx(c, i, j, k)] = border ? 0.0 : u;
        }
      }
    }
  }
  DisplacementField f = DisplacementField::zeros(g, config.spacing);
  const std::int64_t vox = g[0] * g[1] * g[2];
  std::int64_t v = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++v) {
        const double x[3] = {d / cs, h / cs, w / cs};
        std::int64_t i0[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
          i0[a] = std::min(static_cast<std::int64_t>(std::floor(x[a])), nc[a] - 2);
          t[a] = x[a] - static_cast<double>(i0[a]);
        }
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (int corner = 0; corner < 8; ++corner) {
            const int b0 = corner >> 2, b1 = (corner >> 1) & 1, b2 = corner & 1;
            const double wt = (b0 ? t[0] : 1 - t[0]) * (b1 ? t[1] : 1 - t[1]) * (b2 ? t[2] : 1 - t[2]);
            s += wt * ctrl[cidx(c, i0[0] + b0, i0[1] + b1, i0[2] + b2)];
          }
          f.data[c * vox + v] = static_cast<float>(s);
        }
      }
    }
  }
  return f;
}

Volume gradient_magnitude(const Volume& v) {
  const Shape& g = v.grid();
  Volume out = Volume::zeros(g, v.spacing);
  auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    d = std::clamp<std::int64_t>(d, 0, g[0] - 1);
    h = std::clamp<std::int64_t>(h, 0, g[1] - 1);
    w = std::clamp<std::int64_t>(w, 0, g[2] - 1);
    return static_cast<double>(v.data[(d * g[1] + h) * g[2] + w]);
  };
  std::int64_t i = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++i) {
        const double gd = at(d + 1, h, w) - at(d - 1, h, w);
        const double gh = at(d, h + 1, w) - at(d, h - 1, w);
        const double gw = at(d, h, w + 1) - at(d, h, w - 1);
        out.data[i] = static_cast<float>(0.5 * std::sqrt(gd * gd + gh * gh + gw * gw) / v.spacing);
      }
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(rotation_deg >= 0.0 && rotation_deg < 90.0)) throw ConfigError("augment rotation must be in [0, 90) degrees");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("augment scale range must satisfy 0 < min <= max");
  if (!(translation_mm >= 0.0)) throw ConfigError("augment translation must be nonnegative");
}

void PhantomConfig::validate() const {
  if (grid.size() != 3) throw ConfigError("phantom grid must have 3 axes");
  for (auto n : grid) {
    if (n < 8) throw ConfigError("phantom grid axes must have at least 8 voxels");
  }
  if (!(spacing > 0.0)) throw ConfigError("phantom spacing must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!(radius_min[a] > 0.0 && radius_min[a] <= radius_max[a])) throw ConfigError("gland radius range invalid");
  }
  if (boundary_perturbation < 0.0 || boundary_perturbation >= 0.5) {
    throw ConfigError("boundary perturbation must be in [0, 0.5)");
  }
  if (deformation_amplitude_mm < 0.0) throw ConfigError("deformation amplitude must be nonnegative");
  if (misalignment_mm < 0.0) throw ConfigError("misalignment must be nonnegative");
  if (control_spacing_vox < 4.0) throw ConfigError("control point spacing must be at least 4 voxels");
  if (landmarks_min < 3 || landmarks_max < landmarks_min) throw ConfigError("landmark count range must be >= 3");
  if (!(landmark_radius_min_vox > 0.0 && landmark_radius_min_vox <= landmark_radius_max_vox)) {
    throw ConfigError("landmark radius range invalid");
  }
  if (texture_amplitude < 0.0 || speckle < 0.0) throw ConfigError("texture and speckle must be nonnegative");
  if (train_cases < 0 || test_cases < 0) throw ConfigError("case counts must be nonnegative");
  const auto overlap = [](std::uint64_t a, int na, std::uint64_t b, int nb) {
    return na > 0 && nb > 0 && a < b + static_cast<std::uint64_t>(nb) && b < a + static_cast<std::uint64_t>(na);
  };
  if (overlap(train_index_offset, train_cases, test_index_offset, test_cases)) {
    throw ConfigError("train and test generation index ranges overlap");
  }
  augment.validate();
}

DisplacementField random_smooth_deformation(const PhantomConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  return smooth_field(config, config.deformation_amplitude_mm, rng);
}

Task generate_case(const PhantomConfig& config, std::uint64_t seed, std::string case_id) {
  config.validate();
  const Shape& g = config.grid;
  const double sp = config.spacing;
  Rng rng(seed);

  Ellipsoid gland;
  for (int a = 0; a < 3; ++a) {
    const double mid = 0.5 * static_cast<double>(g[static_cast<std::size_t>(a)] - 1) * sp;
    gland.center[a] = mid + rng.uniform(-config.center_jitter_mm, config.center_jitter_mm);
    gland.radius[a] = rng.uniform(config.radius_min[a], config.radius_max[a]);
  }
  for (double& c : gland.coeff) c = rng.uniform(-1.0, 1.0);
  gland.perturbation = config.boundary_perturbation;

  Task task;
  task.case_id = std::move(case_id);
  task.spacing = sp;
  task.source_gland = Volume::zeros(g, sp);
  {
    std::int64_t i = 0;
    for (std::int64_t d = 0; d < g[0]; ++d) {
      for (std::int64_t h = 0; h < g[1]; ++h) {
        for (std::int64_t w = 0; w < g[2]; ++w, ++i) {
          if (gland.inside({d * sp, h * sp, w * sp})) task.source_gland.data[i] = 1.0f;
        }
      }
    }
  }
  if (label_mass(task.source_gland) == 0.0) throw DataError("generated gland is empty");

  // Landmarks: apex and base on the sweep axis, then interior spheres.
  const auto count = static_cast<int>(rng.uniform_int(config.landmarks_min, config.landmarks_max));
  std::vector<Vec3> centers;
  std::vector<double> radii;
  auto radius = [&] { return rng.uniform(config.landmark_radius_min_vox, config.landmark_radius_max_vox); };
  for (double side : {1.0, -1.0}) {
    Vec3 c = gland.center;
    c[2] += side * 0.6 * gland.radius[2];
    centers.push_back(c);
    radii.push_back(radius());
  }
  const double min_sep = 2.0 * config.landmark_radius_max_vox * sp + 0.5 * sp;
  for (int tries = 0; static_cast<int>(centers.size()) < count; ++tries) {
    if (tries > 2000) {
      // Crowded glands keep what fits, never fewer than the configured minimum.
      if (static_cast<int>(centers.size()) >= config.landmarks_min) break;
      throw DataError("could not place " + std::to_string(config.landmarks_min) + " landmarks");
    }
    Vec3 u;
    for (double& x : u) x = rng.uniform(-1.0, 1.0);
    if (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] > 1.0) continue;
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = gland.center[a] + 0.7 * u[a] * gland.radius[a];
    bool ok = true;
    for (const Vec3& o : centers) {
      const double dd = c[0] - o[0], dh = c[1] - o[1], dw = c[2] - o[2];
      if (std::sqrt(dd * dd + dh * dh + dw * dw) < min_sep) ok = false;
    }
    if (!ok) continue;
    centers.push_back(c);
    radii.push_back(radius());
  }
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const std::string name = i == 0 ? "apex" : i == 1 ? "base" : "lm" + std::to_string(i - 1);
    task.source_landmarks.push_back(make_landmark(name, sphere_label(g, sp, centers[i], radii[i])));
  }

  // Global misalignment plus local deformation, damped until the deformed
  // gland and landmarks stay inside and the mapping does not fold.
  Vec3 shift;
  for (double& t : shift) t = rng.uniform(-config.misalignment_mm, config.misalignment_mm);
  double local = 1.0, global = 1.0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) {
      throw DataError("no admissible deformation after " + std::to_string(kMaxAttempts) + " attempts");
    }
    task.gt_ddf = smooth_field(config, local * config.deformation_amplitude_mm, rng);
    {
      const std::int64_t vox = g[0] * g[1] * g[2];
      for (int c = 0; c < 3; ++c) {
        float* u = task.gt_ddf.data.raw() + c * vox;
        for (std::int64_t i = 0; i < vox; ++i) u[i] += static_cast<float>(global * shift[static_cast<std::size_t>(c)]);
      }
    }
    if (min_jacobian(task.gt_ddf) < kMinJacobian) {
      local *= 0.7;
      continue;
    }
    task.target_gland = binarize(warp_volume(task.source_gland, task.gt_ddf));
    bool ok = has_margin(task.target_gland, 1);
    task.target_landmarks.clear();
    for (const Landmark& lm : task.source_landmarks) {
      Volume t = binarize(warp_volume(lm.label, task.gt_ddf));
      if (label_mass(t) == 0.0) {
        ok = false;
        break;
      }
      task.target_landmarks.push_back(make_landmark(lm.name, std::move(t)));
    }
    if (ok) break;
    local *= 0.7;
    global *= 0.7;
  }

  // Pseudo-MR source: bright gland, brighter landmarks, smooth background.
  const Volume gland_soft = smooth(task.source_gland, 1.0 * sp);
  Volume lm_soft = Volume::zeros(g, sp);
  for (const Landmark& lm : task.source_landmarks) {
    for (std::int64_t i = 0; i < lm_soft.data.numel(); ++i) lm_soft.data[i] += lm.label.data[i];
  }
  lm_soft = smooth(lm_soft, 0.7 * sp);
  const Volume tex_s = smooth_noise(g, sp, 4.0 * sp, rng);
  task.source_image = Volume::zeros(g, sp);
  for (std::int64_t i = 0; i < task.source_image.data.numel(); ++i) {
    const double x = 0.15 + config.texture_amplitude * tex_s.data[i] + 0.45 * gland_soft.data[i] +
                     0.25 * lm_soft.data[i] + 0.02 * rng.normal();
    task.source_image.data[i] = static_cast<float>(x);
  }

  // Pseudo-US target: dark gland with a bright rim, speckle.
  const Volume gland_t = warp_volume(gland_soft, task.gt_ddf);
  const Volume lm_t = warp_volume(lm_soft, task.gt_ddf);
  const Volume rim = gradient_magnitude(gland_t);
  const Volume tex_t = smooth_noise(g, sp, 3.0 * sp, rng);
  const Volume speck = smooth_noise(g, sp, 0.5 * sp, rng);
  task.target_image = Volume::zeros(g, sp);
  for (std::int64_t i = 0; i < task.target_image.data.numel(); ++i) {
    double x = 0.35 + config.texture_amplitude * tex_t.data[i] - 0.15 * gland_t.data[i] + 0.8 * rim.data[i] +
               0.35 * lm_t.data[i];
    x *= 1.0 + config.speckle * speck.data[i];
    task.target_image.data[i] = static_cast<float>(std::max(0.0, x));
  }
  return task;
}

double Affine::determinant() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Affine sample_affine(std::uint64_t seed, const AugmentConfig& config) {
  config.validate();
  Rng rng(seed);
  // Rotation about a uniformly random axis (Rodrigues), then per-axis scale.
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  double len = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (len == 0.0) {
    axis = {0, 0, 1};
    len = 1.0;
  }
  for (double& a : axis) a /= len;
  const double angle = rng.uniform(-config.rotation_deg, config.rotation_deg) * std::numbers::pi / 180.0;
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  const double r[3][3] = {{c + x * x * C, x * y * C - z * s, x * z * C + y * s},
                          {y * x * C + z * s, c + y * y * C, y * z * C - x * s},
                          {z * x * C - y * s, z * y * C + x * s, c + z * z * C}};
  Vec3 scale;
  for (double& k : scale) k = rng.uniform(config.scale_min, config.scale_max);
  Affine a;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) a.m[i][j] = r[i][j] * scale[j];
  }
  for (double& t : a.t) t = rng.uniform(-config.translation_mm, config.translation_mm);
  return a;
}

Volume transform_volume(const Volume& volume, const Affine& a, bool clamp_to_edge) {
  const Shape& g = volume.grid();
  const double sp = volume.spacing;
  // Inverse of the linear part by cofactors.
  const double det = a.determinant();
  if (!(std::abs(det) > 1e-12)) throw ParameterError("affine transform is singular");
  const auto& m = a.m;
  double inv[3][3];
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  Vec3 centre;
  for (int k = 0; k < 3; ++k) centre[k] = 0.5 * static_cast<double>(g[static_cast<std::size_t>(k)] - 1) * sp;

  Volume out = Volume::zeros(g, sp);
  std::int64_t i = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++i) {
        const double y[3] = {d * sp - centre[0] - a.t[0], h * sp - centre[1] - a.t[1], w * sp - centre[2] - a.t[2]};
        double x[3];
        for (int r = 0; r < 3; ++r) x[r] = (inv[r][0] * y[0] + inv[r][1] * y[1] + inv[r][2] * y[2] + centre[r]) / sp;
        out.data[i] = sample(volume, x[0], x[1], x[2], clamp_to_edge);
      }
    }
  }
  return out;
}

Task random_affine_augment(const Task& task, std::uint64_t seed, const AugmentConfig& config) {
  config.validate();
  if (config.is_identity()) return task;
  const Affine src = sample_affine(derive_seed(seed, "augment-source"), config);
  const Affine tgt = sample_affine(derive_seed(seed, "augment-target"), config);
  Task out = task;
  out.gt_valid = false;
  auto side = [](const Affine& a, Volume& image, Volume& gland, std::vector<Landmark>& lms) {
    image = transform_volume(image, a, true);
    gland = transform_volume(gland, a, false);
    for (Landmark& lm : lms) {
      lm.label = transform_volume(lm.label, a, false);
      if (!centroid_mm(lm.label, lm.centroid_mm)) lm.centroid_mm = {0.0, 0.0, 0.0};
    }
  };
  side(src, out.source_image, out.source_gland, out.source_landmarks);
  side(tgt, out.target_image, out.target_gland, out.target_landmarks);
  return out;
}

}  // namespace metareg
