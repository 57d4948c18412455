#include "vvt/attention.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace vvt;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) -
                             static_cast<double>(b[i])));
  return m;
}

template <typename T>
Tensor<T> randn(int64_t r, int64_t c, Rng& rng) {
  Tensor<T> t({r, c});
  fill_normal(t, rng);
  return t;
}

}  // namespace

TEST(Expansion, ZeroAngleGrid) {
  Tensor<double> x({1, 2});
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  Tensor<double> out = expand_with_angles(x, angle_encode(PositionGrid{1, 1}),
                                          AttentionMode::vicinity2d);
  ASSERT_EQ(out.dim(1), 8);
  const double expected[8] = {1, 2, 0, 0, 1, 2, 0, 0};
  for (int64_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(out(0, c), expected[c]);
}

TEST(Expansion, NoLocalityIsIdentity) {
  Rng rng(7);
  Tensor<double> x = randn<double>(6, 3, rng);
  Tensor<double> out =
      expand_with_angles(x, AngleCodes{}, AttentionMode::no_locality);
  EXPECT_EQ(max_abs_diff(x, out), 0.0);
}

TEST(Expansion, RowNormsObeyPythagoras) {
  Rng rng(11);
  PositionGrid g{2, 2};
  Tensor<double> x = randn<double>(4, 5, rng);
  Tensor<double> out =
      expand_with_angles(x, angle_encode(g), AttentionMode::vicinity2d);
  const int64_t d = 5;
  for (int64_t i = 0; i < 4; ++i) {
    double norm_x = 0, norm_cos_a = 0, norm_sin_a = 0;
    for (int64_t c = 0; c < d; ++c) {
      norm_x += x(i, c) * x(i, c);
      norm_cos_a += out(i, c) * out(i, c);
      norm_sin_a += out(i, d + c) * out(i, d + c);
    }
    EXPECT_NEAR(norm_cos_a + norm_sin_a, norm_x, 1e-12);
  }
}

TEST(Expansion, SoftmaxModeRejected) {
  Tensor<double> x({2, 2});
  EXPECT_THROW(
      expand_with_angles(x, AngleCodes{}, AttentionMode::softmax_oracle),
      std::invalid_argument);
  EXPECT_THROW(expanded_width(4, AttentionMode::softmax_oracle),
               std::invalid_argument);
}

TEST(Expansion, Widths) {
  EXPECT_EQ(expanded_width(5, AttentionMode::vicinity2d), 20);
  EXPECT_EQ(expanded_width(5, AttentionMode::locality1d), 10);
  EXPECT_EQ(expanded_width(5, AttentionMode::no_locality), 5);
}

TEST(LinearAttention, SingleTokenReturnsValueRow) {
  PositionGrid g{1, 1};
  Tensor<double> q({1, 3}), k({1, 3}), v({1, 4});
  q(0, 0) = 0.7; q(0, 1) = 0.2; q(0, 2) = 1.3;
  k(0, 0) = 0.4; k(0, 1) = 0.9; k(0, 2) = 0.1;
  v(0, 0) = -1.5; v(0, 1) = 2.0; v(0, 2) = 0.25; v(0, 3) = 3.0;
  for (AttentionMode mode :
       {AttentionMode::vicinity2d, AttentionMode::locality1d,
        AttentionMode::no_locality}) {
    Tensor<double> out = linear_attention(q, k, v, g, mode, 1e-6);
    for (int64_t c = 0; c < 4; ++c) EXPECT_NEAR(out(0, c), v(0, c), 1e-14);
  }
}

TEST(LinearAttention, AllZeroQueryGivesZeroOutput) {
  PositionGrid g{2, 2};
  Rng rng(3);
  Tensor<double> q({4, 3});
  Tensor<double> k = randn<double>(4, 3, rng);
  Tensor<double> v = randn<double>(4, 2, rng);
  Tensor<double> out =
      linear_attention(q, k, v, g, AttentionMode::vicinity2d, 1e-6);
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(LinearAttention, MatchesQuadraticOracleVicinity) {
  PositionGrid g{8, 8};
  Rng rng(42);
  Tensor<double> q = randn<double>(64, 16, rng);
  Tensor<double> k = randn<double>(64, 16, rng);
  Tensor<double> v = randn<double>(64, 16, rng);
  Tensor<double> lin =
      linear_attention(q, k, v, g, AttentionMode::vicinity2d, 1e-6);
  Tensor<double> ora =
      quadratic_oracle(q, k, v, g, AttentionMode::vicinity2d, 1e-6);
  EXPECT_LE(max_abs_diff(lin, ora), 1e-10);
}

TEST(LinearAttention, MatchesQuadraticOracleAllModes) {
  for (AttentionMode mode :
       {AttentionMode::vicinity2d, AttentionMode::locality1d,
        AttentionMode::no_locality}) {
    PositionGrid g{4, 8};
    Rng rng(1234 + static_cast<uint64_t>(mode));
    Tensor<double> q = randn<double>(32, 8, rng);
    Tensor<double> k = randn<double>(32, 8, rng);
    Tensor<double> v = randn<double>(32, 8, rng);
    Tensor<double> lin = linear_attention(q, k, v, g, mode, 1e-6);
    Tensor<double> ora = quadratic_oracle(q, k, v, g, mode, 1e-6);
    EXPECT_LE(max_abs_diff(lin, ora), 1e-10) << mode_name(mode);
  }
}

TEST(LinearAttention, SinglePrecisionOracleEquivalence) {
  PositionGrid g{8, 8};
  Rng rng(5);
  Tensor<float> q = randn<float>(64, 16, rng);
  Tensor<float> k = randn<float>(64, 16, rng);
  Tensor<float> v = randn<float>(64, 16, rng);
  Tensor<float> lin =
      linear_attention(q, k, v, g, AttentionMode::vicinity2d, 1e-6f);
  Tensor<float> ora =
      quadratic_oracle(q, k, v, g, AttentionMode::vicinity2d, 1e-6f);
  EXPECT_LE(max_abs_diff(lin, ora), 1e-3);
}

TEST(LinearAttention, InputValidation) {
  PositionGrid g{1, 2};
  Tensor<double> q({2, 3}), k({2, 4}), v({2, 3});
  EXPECT_THROW(linear_attention(q, k, v, g, AttentionMode::vicinity2d, 1e-6),
               std::invalid_argument);
  Tensor<double> k2({2, 3});
  k2(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(linear_attention(q, k2, v, g, AttentionMode::vicinity2d, 1e-6),
               std::invalid_argument);
  Tensor<double> k3({2, 3});
  EXPECT_THROW(linear_attention(q, k3, v, g, AttentionMode::vicinity2d, 0.0),
               std::invalid_argument);
  EXPECT_THROW(
      linear_attention(q, k3, v, g, AttentionMode::softmax_oracle, 1e-6),
      std::invalid_argument);
  // sequence length vs grid
  EXPECT_THROW(linear_attention(q, k3, v, PositionGrid{1, 3},
                                AttentionMode::vicinity2d, 1e-6),
               std::invalid_argument);
}

// Permuting rows of Q/K/V together with their angle codes permutes the
// output rows identically: position enters only through the codes.
TEST(LinearAttention, PermutationEquivariance) {
  PositionGrid g{3, 4};
  const int64_t n = g.tokens();
  Rng rng(9);
  Tensor<double> q = randn<double>(n, 6, rng);
  Tensor<double> k = randn<double>(n, 6, rng);
  Tensor<double> v = randn<double>(n, 5, rng);
  AngleCodes codes = angle_encode(g);
  Tensor<double> base = linear_attention_with_codes(
      q, k, v, codes, AttentionMode::vicinity2d, 1e-6);

  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());

  Tensor<double> qp({n, 6}), kp({n, 6}), vp({n, 5});
  AngleCodes codes_p;
  codes_p.row.resize(static_cast<size_t>(n));
  codes_p.col.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t src = perm[static_cast<size_t>(i)];
    std::copy(q.row(src), q.row(src) + 6, qp.row(i));
    std::copy(k.row(src), k.row(src) + 6, kp.row(i));
    std::copy(v.row(src), v.row(src) + 5, vp.row(i));
    codes_p.row[static_cast<size_t>(i)] = codes.row[static_cast<size_t>(src)];
    codes_p.col[static_cast<size_t>(i)] = codes.col[static_cast<size_t>(src)];
  }
  Tensor<double> permuted = linear_attention_with_codes(
      qp, kp, vp, codes_p, AttentionMode::vicinity2d, 1e-6);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t src = perm[static_cast<size_t>(i)];
    for (int64_t c = 0; c < 5; ++c)
      EXPECT_NEAR(permuted(i, c), base(src, c), 1e-12);
  }
}

TEST(QuadraticOracle, RowsAreStochasticAndNonNegative) {
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    PositionGrid g{1 + rng.integer(6), 1 + rng.integer(6)};
    const int64_t n = g.tokens(), d = 1 + rng.integer(8);
    Tensor<double> q = randn<double>(n, d, rng);
    Tensor<double> k = randn<double>(n, d, rng);
    if (rep % 5 == 0) {
      // degenerate zero-query rows exercise the eps clamp path
      for (int64_t c = 0; c < d; ++c) q(rng.integer(n), c) = 0.0;
    }
    const AttentionMode mode = rep % 3 == 0   ? AttentionMode::vicinity2d
                               : rep % 3 == 1 ? AttentionMode::locality1d
                                              : AttentionMode::no_locality;
    Tensor<double> w = oracle_weight_matrix(q, k, g, mode, 1e-6);
    Tensor<double> qr = q;
    for (auto& x : qr.flat()) x = std::max(x, 0.0);
    for (int64_t i = 0; i < n; ++i) {
      double row_sum = 0.0, raw = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        EXPECT_GE(w(i, j), 0.0);
        row_sum += w(i, j);
      }
      // recompute the raw denominator to know whether the clamp was active
      Tensor<double> kr = k;
      for (auto& x : kr.flat()) x = std::max(x, 0.0);
      for (int64_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int64_t c = 0; c < d; ++c) dot += qr(i, c) * kr(j, c);
        raw += dot * oracle_locality_weight(i, j, g, mode);
      }
      if (raw > 1e-6) {
        EXPECT_NEAR(row_sum, 1.0, 1e-9);
      }
    }
  }
}

TEST(QuadraticOracle, TokenCapRefusal) {
  PositionGrid g{1, kQuadraticTokenCap + 1};
  Tensor<double> q({g.tokens(), 1}), k({g.tokens(), 1}), v({g.tokens(), 1});
  EXPECT_THROW(quadratic_oracle(q, k, v, g, AttentionMode::no_locality, 1e-6),
               std::length_error);
}

TEST(QuadraticOracle, LocalityOrdersNeighbours) {
  PositionGrid g{4, 4};
  Tensor<double> q({16, 4}), k({16, 4});
  q.fill(1.0);
  k.fill(1.0);
  Tensor<double> w =
      oracle_weight_matrix(q, k, g, AttentionMode::vicinity2d, 1e-6);
  const int64_t from = flatten_index(0, 0, g);
  EXPECT_GT(w(from, flatten_index(0, 1, g)), w(from, flatten_index(0, 3, g)));
}

TEST(QuadraticOracle, LocalityArgmaxAndRayMonotone) {
  PositionGrid g{8, 8};
  const int64_t n = g.tokens();
  Tensor<double> q({n, 4}), k({n, 4});
  q.fill(1.0);
  k.fill(1.0);
  Tensor<double> w =
      oracle_weight_matrix(q, k, g, AttentionMode::vicinity2d, 1e-6);
  for (int64_t i = 0; i < n; ++i) {
    auto [u0, r0] = unflatten_index(i, g);
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) {
        EXPECT_LT(w(i, j), w(i, i));
      }
    }
    // rays in all four axis directions
    const int64_t dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (auto& dir : dirs) {
      double prev = w(i, i);
      for (int64_t s = 1;; ++s) {
        const int64_t u = u0 + dir[0] * s, r = r0 + dir[1] * s;
        if (u < 0 || u >= 8 || r < 0 || r >= 8) break;
        const double cur = w(i, flatten_index(u, r, g));
        EXPECT_LE(cur, prev + 1e-15);
        prev = cur;
      }
    }
  }
}

TEST(SoftmaxAttention, SingleToken) {
  Tensor<double> q({1, 3}), k({1, 3}), v({1, 2});
  Rng rng(1);
  fill_normal(q, rng);
  fill_normal(k, rng);
  fill_normal(v, rng);
  Tensor<double> out = softmax_attention(q, k, v);
  EXPECT_NEAR(out(0, 0), v(0, 0), 1e-15);
  EXPECT_NEAR(out(0, 1), v(0, 1), 1e-15);
}

TEST(SoftmaxAttention, ZeroQueryAveragesValues) {
  Rng rng(2);
  Tensor<double> q({5, 3});
  Tensor<double> k = randn<double>(5, 3, rng);
  Tensor<double> v = randn<double>(5, 2, rng);
  Tensor<double> out = softmax_attention(q, k, v);
  for (int64_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int64_t j = 0; j < 5; ++j) mean += v(j, c);
    mean /= 5.0;
    for (int64_t i = 0; i < 5; ++i) EXPECT_NEAR(out(i, c), mean, 1e-12);
  }
}

TEST(SoftmaxAttention, RowsSumToOne) {
  Rng rng(3);
  Tensor<double> q = randn<double>(16, 8, rng);
  Tensor<double> k = randn<double>(16, 8, rng);
  Tensor<double> v = randn<double>(16, 4, rng);
  SoftmaxAttentionCache<double> cache;
  softmax_attention(q, k, v, &cache);
  for (int64_t i = 0; i < 16; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 16; ++j) sum += cache.probs(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(SoftmaxAttention, TokenCapRefusal) {
  const int64_t n = kQuadraticTokenCap + 1;
  Tensor<double> q({n, 1}), k({n, 1}), v({n, 1});
  EXPECT_THROW(softmax_attention(q, k, v), std::length_error);
}
