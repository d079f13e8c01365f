#include "metareg/interact.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "metareg/rng.hpp"

namespace metareg {

namespace {

void check_axis(int axis) {
  if (axis < 0 || axis > 2) throw DimensionError("frame mask axis must be 0, 1 or 2, got " + std::to_string(axis));
}

void check_mask_fits(const Volume& volume, const FrameMask& mask) {
  mask.validate();
  const std::int64_t n = volume.grid().at(static_cast<std::size_t>(mask.axis));
  if (n != mask.num_slices) {
    throw DimensionError("frame mask covers " + std::to_string(mask.num_slices) + " slices but volume axis " +
                         std::to_string(mask.axis) + " has " + std::to_string(n));
  }
}

// Calls f(slice, flat index) for every voxel.
template <class F>
void for_each_voxel(const Shape& g, int axis, F&& f) {
  std::int64_t v = 0;
  for (std::int64_t d = 0; d < g[0]; ++d) {
    for (std::int64_t h = 0; h < g[1]; ++h) {
      for (std::int64_t w = 0; w < g[2]; ++w, ++v) f(axis == 0 ? d : axis == 1 ? h : w, v);
    }
  }
}

}  // namespace

bool FrameMask::contains(std::int64_t slice) const {
  return std::binary_search(slice_indices.begin(), slice_indices.end(), slice);
}

void FrameMask::validate() const {
  check_axis(axis);
  if (num_slices < 1) throw DimensionError("frame mask must cover at least one slice");
  for (std::size_t i = 0; i < slice_indices.size(); ++i) {
    const std::int64_t s = slice_indices[i];
    if (s < 0 || s >= num_slices) {
      throw DimensionError("slice index " + std::to_string(s) + " outside [0, " + std::to_string(num_slices) + ")");
    }
    if (i > 0 && s <= slice_indices[i - 1]) throw DimensionError("slice indices must be sorted and unique");
  }
}

std::string FrameMask::to_text() const {
  std::ostringstream os;
  os << "axis=" << axis << ";num_slices=" << num_slices << ";slices=";
  for (std::size_t i = 0; i < slice_indices.size(); ++i) os << (i ? "," : "") << slice_indices[i];
  return os.str();
}

FrameMask FrameMask::from_text(const std::string& text) {
  FrameMask m;
  bool seen[3] = {false, false, false};
  std::istringstream fields(text);
  std::string field;
  try {
    while (std::getline(fields, field, ';')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw DataError("malformed frame mask field '" + field + "'");
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "axis") {
        m.axis = std::stoi(value);
        seen[0] = true;
      } else if (key == "num_slices") {
        m.num_slices = std::stoll(value);
        seen[1] = true;
      } else if (key == "slices") {
        std::istringstream list(value);
        std::string item;
        while (std::getline(list, item, ',')) m.slice_indices.push_back(std::stoll(item));
        seen[2] = true;
      } else {
        throw DataError("unknown frame mask field '" + key + "'");
      }
    }
  } catch (const std::logic_error&) {
    throw DataError("malformed frame mask '" + text + "'");
  }
  if (!seen[0] || !seen[1] || !seen[2]) throw DataError("incomplete frame mask '" + text + "'");
  m.validate();
  return m;
}

FrameMask SweepSchedule::mask_with(int frames) const {
  if (frames < 1 || frames > static_cast<int>(sweep_order.size())) {
    throw ParameterError("sweep has " + std::to_string(sweep_order.size()) + " frames, requested " +
                         std::to_string(frames));
  }
  FrameMask m = inference;
  m.slice_indices.assign(sweep_order.begin(), sweep_order.begin() + frames);
  std::sort(m.slice_indices.begin(), m.slice_indices.end());
  return m;
}

SliceRange gland_extent(const Volume& label, int axis, int pad) {
  check_axis(axis);
  const Shape& g = label.grid();
  const std::int64_t n = g[static_cast<std::size_t>(axis)];
  SliceRange r{n, -1};
  const float* x = label.data.raw();
  for_each_voxel(g, axis, [&](std::int64_t s, std::int64_t v) {
    if (x[v] > 0.5f) {
      r.first = std::min(r.first, s);
      r.last = std::max(r.last, s);
    }
  });
  if (r.last < 0) throw DataError("gland label is empty; no slice extent");
  r.first = std::max<std::int64_t>(0, r.first - pad);
  r.last = std::min<std::int64_t>(n - 1, r.last + pad);
  return r;
}

FrameMask sample_training_mask(std::uint64_t seed, int f_min, int f_max, std::int64_t num_slices,
                               SliceRange extent, int axis) {
  check_axis(axis);
  if (f_min < 2) throw ParameterError("F_min must be at least 2");
  if (f_max < f_min) throw ParameterError("F_max must be >= F_min");
  if (extent.first < 0 || extent.last >= num_slices || extent.length() < 1) {
    throw ParameterError("gland extent outside the slice axis");
  }
  if (f_max > extent.length()) {
    throw ParameterError("F_max=" + std::to_string(f_max) + " exceeds gland extent of " +
                         std::to_string(extent.length()) + " slices");
  }
  Rng rng(seed);
  const auto frames = rng.uniform_int(f_min, f_max);
  // Partial Fisher-Yates over the extent.
  std::vector<std::int64_t> pool(static_cast<std::size_t>(extent.length()));
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = extent.first + static_cast<std::int64_t>(i);
  for (std::int64_t i = 0; i < frames; ++i) {
    const auto j = rng.uniform_int(i, static_cast<std::int64_t>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  FrameMask m{axis, {pool.begin(), pool.begin() + frames}, num_slices};
  std::sort(m.slice_indices.begin(), m.slice_indices.end());
  return m;
}

SweepSchedule build_sweep_schedule(int f_min, int f_max, SliceRange extent, std::int64_t num_slices, int axis) {
  check_axis(axis);
  if (f_min < 1) throw ParameterError("F_min must be positive");
  if (f_max < f_min) throw ParameterError("F_max must be >= F_min");
  if (extent.first < 0 || extent.last >= num_slices) throw ParameterError("gland extent outside the slice axis");
  if (extent.length() < f_max) {
    throw ParameterError("gland extent of " + std::to_string(extent.length()) + " slices is smaller than F_max=" +
                         std::to_string(f_max));
  }
  SweepSchedule s;
  s.f_min = f_min;
  s.f_max = f_max;
  // Equidistant positions over the extent, rounded half down, visited from
  // the highest index to the lowest.
  const double step = f_max > 1 ? static_cast<double>(extent.length() - 1) / (f_max - 1) : 0.0;
  for (int i = f_max - 1; i >= 0; --i) {
    const double x = i * step;
    s.sweep_order.push_back(extent.first + static_cast<std::int64_t>(std::ceil(x - 0.5)));
  }
  s.inference = FrameMask{axis, {}, num_slices};
  s.inference = s.mask_with(f_max);
  for (int frames = f_min; frames < f_max; ++frames) s.updates.push_back(s.mask_with(frames));
  return s;
}

Volume apply_mask(const Volume& volume, const FrameMask& mask) {
  check_mask_fits(volume, mask);
  std::vector<char> keep(static_cast<std::size_t>(mask.num_slices), 0);
  for (std::int64_t s : mask.slice_indices) keep[static_cast<std::size_t>(s)] = 1;
  Volume out = volume;
  float* x = out.data.raw();
  for_each_voxel(volume.grid(), mask.axis, [&](std::int64_t s, std::int64_t v) {
    if (!keep[static_cast<std::size_t>(s)]) x[v] = 0.0f;
  });
  return out;
}

InteractionPair apply_mask(const Volume& target_image, const Volume& target_label, const FrameMask& mask) {
  if (target_image.grid() != target_label.grid()) {
    throw DimensionError("image grid " + shape_str(target_image.grid()) + " differs from label grid " +
                         shape_str(target_label.grid()));
  }
  return {apply_mask(target_image, mask), apply_mask(target_label, mask), mask};
}

Volume mask_volume(const Shape& grid, double spacing, const FrameMask& mask) {
  Volume ones(Tensor<float>(grid, 1.0f), spacing);
  return apply_mask(ones, mask);
}

}  // namespace metareg
