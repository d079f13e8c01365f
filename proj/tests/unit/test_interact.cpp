#include <set>

#include "doctest.h"
#include "metareg/interact.hpp"

using namespace metareg;

TEST_CASE("sweep schedule positions") {
  const SweepSchedule s = build_sweep_schedule(2, 10, {4, 25}, 32);
  CHECK(s.sweep_order == std::vector<std::int64_t>{25, 23, 20, 18, 16, 13, 11, 9, 6, 4});
  CHECK(build_sweep_schedule(2, 5, {3, 21}, 32).sweep_order == std::vector<std::int64_t>{21, 16, 12, 7, 3});
  CHECK(build_sweep_schedule(2, 15, {2, 28}, 32).sweep_order ==
        std::vector<std::int64_t>{28, 26, 24, 22, 21, 19, 17, 15, 13, 11, 9, 8, 6, 4, 2});
}

TEST_CASE("baseline schedule has nested update masks and one inference mask") {
  const SweepSchedule s = build_sweep_schedule(2, 10, {4, 25}, 32);
  REQUIRE(s.updates.size() == 8);
  for (std::size_t j = 0; j < s.updates.size(); ++j) {
    CHECK(s.updates[j].frames() == j + 2);
    if (j > 0) {
      for (auto idx : s.updates[j - 1].slice_indices) CHECK(s.updates[j].contains(idx));
    }
  }
  CHECK(s.inference.frames() == 10);
  CHECK(s.mask_with(2).slice_indices == std::vector<std::int64_t>{23, 25});
  CHECK(build_sweep_schedule(2, 5, {3, 21}, 32).updates.size() == 3);
  CHECK(build_sweep_schedule(2, 15, {2, 28}, 32).updates.size() == 13);
}

TEST_CASE("schedule rejects an extent shorter than F_max") {
  CHECK_THROWS_AS(build_sweep_schedule(2, 10, {4, 12}, 32), ParameterError);
  CHECK_THROWS_AS(build_sweep_schedule(3, 2, {4, 20}, 32), ParameterError);
}

TEST_CASE("frame mask text round trip and validation") {
  FrameMask m{2, {3, 7, 12}, 32};
  CHECK(m.to_text() == "axis=2;num_slices=32;slices=3,7,12");
  CHECK(FrameMask::from_text(m.to_text()) == m);
  CHECK_THROWS(FrameMask::from_text("axis=2;slices=1"));
  FrameMask bad{2, {7, 3}, 32};
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  FrameMask out{2, {40}, 32};
  CHECK_THROWS_AS(out.validate(), DimensionError);
}

TEST_CASE("training masks are sorted, distinct and inside the extent") {
  std::set<std::size_t> counts;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const FrameMask m = sample_training_mask(seed, 2, 10, 32, {5, 24});
    CHECK_NOTHROW(m.validate());
    CHECK(m.frames() >= 2);
    CHECK(m.frames() <= 10);
    CHECK(m.slice_indices.front() >= 5);
    CHECK(m.slice_indices.back() <= 24);
    counts.insert(m.frames());
  }
  CHECK(counts.size() == 9);
  CHECK(sample_training_mask(9, 2, 10, 32, {5, 24}) == sample_training_mask(9, 2, 10, 32, {5, 24}));
}

TEST_CASE("apply_mask keeps only acquired slices") {
  Volume v = Volume::zeros({2, 3, 5}, 1.0);
  for (float& x : v.data.data()) x = 1.0f;
  const Volume m = apply_mask(v, FrameMask{2, {1, 3}, 5});
  for (std::int64_t d = 0; d < 2; ++d)
    for (std::int64_t h = 0; h < 3; ++h)
      for (std::int64_t w = 0; w < 5; ++w) CHECK(m.data[(d * 3 + h) * 5 + w] == (w == 1 || w == 3 ? 1.0f : 0.0f));
  CHECK(mask_volume({2, 3, 5}, 1.0, FrameMask{2, {1, 3}, 5}) == m);
  CHECK_THROWS_AS(apply_mask(v, FrameMask{2, {1}, 6}), DimensionError);
}

TEST_CASE("gland extent pads and clips") {
  Volume v = Volume::zeros({3, 3, 10}, 1.0);
  v.data[5] = 1.0f;  // w = 5
  v.data[10 + 7] = 1.0f;  // w = 7
  CHECK(gland_extent(v, 2, 1) == SliceRange{4, 8});
  v.data[9] = 1.0f;
  CHECK(gland_extent(v, 2, 2) == SliceRange{3, 9});
  CHECK_THROWS_AS(gland_extent(Volume::zeros({3, 3, 10}, 1.0)), DataError);
}
