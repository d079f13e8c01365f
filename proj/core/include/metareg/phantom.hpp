#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metareg/volume.hpp"

namespace metareg {

struct Landmark {
  std::string name;
  Volume label;
  Vec3 centroid_mm{};

  friend bool operator==(const Landmark&, const Landmark&) = default;
};

// One registration case. Target structures are the source structures warped
// by gt_ddf: target(x) = source(x + gt_ddf(x)).
struct Task {
  std::string case_id;
  double spacing = 1.0;
  Volume source_image;
  Volume source_gland;
  std::vector<Landmark> source_landmarks;
  Volume target_image;
  Volume target_gland;
  std::vector<Landmark> target_landmarks;
  DisplacementField gt_ddf;
  bool gt_valid = true;  // false once an augmentation has been applied

  friend bool operator==(const Task&, const Task&) = default;
};

struct AugmentConfig {
  double rotation_deg = 10.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translation_mm = 3.0;

  bool is_identity() const { return rotation_deg == 0.0 && scale_min == 1.0 && scale_max == 1.0 && translation_mm == 0.0; }
  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PhantomConfig {
  Shape grid{32, 32, 32};
  double spacing = 1.0;
  // Gland semi-axes in mm along (d, h, w); w is the sweep axis.
  Vec3 radius_min{6.5, 6.5, 7.5};
  Vec3 radius_max{8.5, 8.5, 9.5};
  double center_jitter_mm = 1.5;
  double boundary_perturbation = 0.08;  // relative radius modulation
  double deformation_amplitude_mm = 5.0;
  double misalignment_mm = 3.0;  // per-axis bound of the global shift
  double control_spacing_vox = 10.0;
  int landmarks_min = 3;
  int landmarks_max = 6;
  double landmark_radius_min_vox = 1.5;
  double landmark_radius_max_vox = 2.0;
  double texture_amplitude = 0.05;
  double speckle = 0.25;
  AugmentConfig augment;

  // Dataset split: case i of a split uses generation index offset + i.
  int train_cases = 60;
  int test_cases = 30;
  std::uint64_t train_index_offset = 0;
  std::uint64_t test_index_offset = 1000000;

  void validate() const;  // throws ConfigError
  friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

Task generate_case(const PhantomConfig& config, std::uint64_t seed, std::string case_id = "case");

DisplacementField random_smooth_deformation(const PhantomConfig& config, std::uint64_t seed);

// Independent no-flip affine transforms for the source side and the target
// side of the task.
Task random_affine_augment(const Task& task, std::uint64_t seed, const AugmentConfig& config);

// 3x3 matrix, row major, with translation; maps grid-centred mm coordinates.
struct Affine {
  double m[3][3]{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  Vec3 t{};
  double determinant() const;
};

Affine sample_affine(std::uint64_t seed, const AugmentConfig& config);

// Resamples `volume` so that out(A(x)) = in(x) about the grid centre.
// Samples outside the grid read zero, or the nearest edge value when clamping.
Volume transform_volume(const Volume& volume, const Affine& a, bool clamp_to_edge);

}  // namespace metareg
