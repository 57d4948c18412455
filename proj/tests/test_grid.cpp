#include "vvt/grid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace vvt;

TEST(PositionGrid, FlattenKnownCells) {
  PositionGrid g{2, 2};
  EXPECT_EQ(flatten_index(1, 1, g), 3);
  EXPECT_EQ(flatten_index(0, 0, g), 0);
  EXPECT_EQ(flatten_index(0, 0, PositionGrid{7, 9}), 0);
}

TEST(PositionGrid, FlattenUnflattenRoundTrip) {
  PositionGrid g{3, 5};
  for (int64_t u = 0; u < g.rows; ++u)
    for (int64_t r = 0; r < g.cols; ++r) {
      auto [uu, rr] = unflatten_index(flatten_index(u, r, g), g);
      EXPECT_EQ(uu, u);
      EXPECT_EQ(rr, r);
    }
}

TEST(PositionGrid, OutOfRangeIndices) {
  PositionGrid g{2, 3};
  EXPECT_THROW(flatten_index(2, 0, g), std::out_of_range);
  EXPECT_THROW(flatten_index(0, 3, g), std::out_of_range);
  EXPECT_THROW(flatten_index(-1, 0, g), std::out_of_range);
  EXPECT_THROW(unflatten_index(6, g), std::out_of_range);
  EXPECT_THROW(check_grid(PositionGrid{0, 3}), std::invalid_argument);
}

TEST(AngleCodes, KnownValues) {
  const double pi = std::numbers::pi;
  AngleCodes c22 = angle_encode(PositionGrid{2, 2});
  EXPECT_DOUBLE_EQ(c22.row[3], pi / 4.0);
  EXPECT_DOUBLE_EQ(c22.col[3], pi / 4.0);

  AngleCodes c11 = angle_encode(PositionGrid{1, 1});
  EXPECT_DOUBLE_EQ(c11.row[0], 0.0);
  EXPECT_DOUBLE_EQ(c11.col[0], 0.0);

  AngleCodes c14 = angle_encode(PositionGrid{1, 4});
  EXPECT_DOUBLE_EQ(c14.row[3], 0.0);
  EXPECT_DOUBLE_EQ(c14.col[3], 3.0 * pi / 8.0);
}

TEST(AngleCodes, RangeAndDeterminism) {
  PositionGrid g{5, 7};
  AngleCodes a = angle_encode(g);
  AngleCodes b = angle_encode(g);
  for (int64_t i = 0; i < g.tokens(); ++i) {
    EXPECT_GE(a.row[i], 0.0);
    EXPECT_LT(a.row[i], std::numbers::pi / 2.0);
    EXPECT_GE(a.col[i], 0.0);
    EXPECT_LT(a.col[i], std::numbers::pi / 2.0);
    EXPECT_EQ(a.row[i], b.row[i]);
    EXPECT_EQ(a.col[i], b.col[i]);
  }
}

TEST(Reweight, SelfWeightIsTwo) {
  PositionGrid g{4, 6};
  for (int64_t i = 0; i < g.tokens(); ++i)
    EXPECT_DOUBLE_EQ(reweight_factor(i, i, g), 2.0);
}

TEST(Reweight, TwoTokenRow) {
  PositionGrid g{1, 2};
  EXPECT_NEAR(reweight_factor(0, 1, g), 1.0 + std::cos(std::numbers::pi / 4.0),
              1e-15);
}

TEST(Reweight, BoundsAndSymmetry) {
  PositionGrid g{8, 8};
  for (int64_t i = 0; i < g.tokens(); ++i)
    for (int64_t j = 0; j < g.tokens(); ++j) {
      const double w = reweight_factor(i, j, g);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 2.0);
      EXPECT_DOUBLE_EQ(w, reweight_factor(j, i, g));
    }
}

// With the column fixed, the weight never grows as the row gap widens
// (and vice versa). Exhaustive over an 8x8 grid.
TEST(Reweight, MonotoneAlongAxes) {
  PositionGrid g{8, 8};
  for (int64_t u0 = 0; u0 < 8; ++u0)
    for (int64_t r0 = 0; r0 < 8; ++r0) {
      const int64_t i = flatten_index(u0, r0, g);
      // widen the row gap at every fixed column, both directions
      for (int64_t r = 0; r < 8; ++r) {
        for (int64_t d = 1; u0 + d < 8; ++d)
          EXPECT_LE(reweight_factor(i, flatten_index(u0 + d, r, g), g),
                    reweight_factor(i, flatten_index(u0 + d - 1, r, g), g) +
                        1e-15);
        for (int64_t d = 1; u0 - d >= 0; ++d)
          EXPECT_LE(reweight_factor(i, flatten_index(u0 - d, r, g), g),
                    reweight_factor(i, flatten_index(u0 - d + 1, r, g), g) +
                        1e-15);
      }
      // widen the column gap at every fixed row
      for (int64_t u = 0; u < 8; ++u) {
        for (int64_t d = 1; r0 + d < 8; ++d)
          EXPECT_LE(reweight_factor(i, flatten_index(u, r0 + d, g), g),
                    reweight_factor(i, flatten_index(u, r0 + d - 1, g), g) +
                        1e-15);
        for (int64_t d = 1; r0 - d >= 0; ++d)
          EXPECT_LE(reweight_factor(i, flatten_index(u, r0 - d, g), g),
                    reweight_factor(i, flatten_index(u, r0 - d + 1, g), g) +
                        1e-15);
      }
    }
}

TEST(Modes, ParseAndFormat) {
  EXPECT_EQ(parse_mode("vicinity2d"), AttentionMode::vicinity2d);
  EXPECT_EQ(parse_mode("1dlocality"), AttentionMode::locality1d);
  EXPECT_EQ(parse_mode("locality1d"), AttentionMode::locality1d);
  EXPECT_EQ(parse_mode("nolocality"), AttentionMode::no_locality);
  EXPECT_EQ(parse_mode("softmax"), AttentionMode::softmax_oracle);
  EXPECT_THROW(parse_mode("parabolic"), std::invalid_argument);
  EXPECT_EQ(mode_name(AttentionMode::vicinity2d), "vicinity2d");
  EXPECT_EQ(parse_mode(mode_name(AttentionMode::locality1d)),
            AttentionMode::locality1d);
}
