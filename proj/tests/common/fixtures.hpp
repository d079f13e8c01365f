#pragma once

// Small phantoms and networks that keep unit tests fast.

#include <mutex>

#include "metareg/metalearn.hpp"
#include "metareg/phantom.hpp"

namespace metareg::testing {

// 16^3 grid at 2 mm: same physical extent as the default phantom.
inline PhantomConfig small_phantom() {
  PhantomConfig c;
  c.grid = {16, 16, 16};
  c.spacing = 2.0;
  c.control_spacing_vox = 5.0;
  c.landmark_radius_min_vox = 1.0;
  c.landmark_radius_max_vox = 1.2;
  c.landmarks_max = 4;
  return c;
}

inline ArchConfig small_arch() {
  ArchConfig a;
  a.grid = {16, 16, 16};
  a.levels = 2;
  a.base_channels = 4;
  return a;
}

inline const std::vector<Task>& small_tasks() {
  static const std::vector<Task> tasks = [] {
    std::vector<Task> t;
    for (int i = 0; i < 3; ++i) t.push_back(generate_case(small_phantom(), 100 + i, "case" + std::to_string(i)));
    return t;
  }();
  return tasks;
}

inline TrainConfig small_train() {
  TrainConfig c;
  c.k = 2;
  c.minibatch = 2;
  c.episodes = 2;
  c.f_min = 2;
  c.f_max = 5;
  c.seed = 77;
  c.loss.sigmas_mm = {0.0, 2.0};
  return c;
}

}  // namespace metareg::testing
