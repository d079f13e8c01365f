#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metareg/volume.hpp"

namespace metareg {

// Frames are acquired as planes orthogonal to the last grid axis.
inline constexpr int kSliceAxis = 2;

// Inclusive slice index range [first, last].
struct SliceRange {
  std::int64_t first = 0;
  std::int64_t last = -1;

  std::int64_t length() const { return last - first + 1; }
  friend bool operator==(const SliceRange&, const SliceRange&) = default;
};

struct FrameMask {
  int axis = kSliceAxis;
  std::vector<std::int64_t> slice_indices;  // sorted ascending, unique
  std::int64_t num_slices = 0;

  std::size_t frames() const { return slice_indices.size(); }
  bool contains(std::int64_t slice) const;
  void validate() const;  // throws DimensionError

  // "axis=2;num_slices=32;slices=3,7,12"
  std::string to_text() const;
  static FrameMask from_text(const std::string& text);

  friend bool operator==(const FrameMask&, const FrameMask&) = default;
};

// Nested masks in sweep order: updates[j] holds f_min + j frames; the
// inference mask holds all f_max frames.
struct SweepSchedule {
  int f_min = 2;
  int f_max = 10;
  std::vector<std::int64_t> sweep_order;  // acquisition order, f_max slices
  std::vector<FrameMask> updates;
  FrameMask inference;

  // Mask made of the first `frames` slices of the sweep.
  FrameMask mask_with(int frames) const;
};

struct InteractionPair {
  Volume image;
  Volume label;
  FrameMask mask;
};

// Slices along `axis` that intersect label > 0.5, widened by `pad` on each
// side and clipped to the grid. Throws DataError on an empty label.
SliceRange gland_extent(const Volume& label, int axis = kSliceAxis, int pad = 1);

FrameMask sample_training_mask(std::uint64_t seed, int f_min, int f_max, std::int64_t num_slices,
                               SliceRange extent, int axis = kSliceAxis);

SweepSchedule build_sweep_schedule(int f_min, int f_max, SliceRange extent, std::int64_t num_slices,
                                   int axis = kSliceAxis);

// Zeroes every slice not in the mask.
Volume apply_mask(const Volume& volume, const FrameMask& mask);
InteractionPair apply_mask(const Volume& target_image, const Volume& target_label, const FrameMask& mask);

// Binary indicator volume of the acquired slices.
Volume mask_volume(const Shape& grid, double spacing, const FrameMask& mask);

}  // namespace metareg
