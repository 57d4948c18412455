#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vvt/tensor.hpp"

namespace vvt {

/// Spatial shape of a token grid: n rows by m columns, flattened row-major
/// so that flat index i = u*m + r for row u and column r.
struct PositionGrid {
  int64_t rows = 1;  // n
  int64_t cols = 1;  // m

  int64_t tokens() const { return rows * cols; }
  bool valid() const { return rows >= 1 && cols >= 1; }
};

inline void check_grid(const PositionGrid& g) {
  VVT_CHECK(g.valid(), "position grid must have rows >= 1 and cols >= 1");
}

inline int64_t flatten_index(int64_t u, int64_t r, const PositionGrid& g) {
  check_grid(g);
  if (u < 0 || u >= g.rows || r < 0 || r >= g.cols)
    throw std::out_of_range("grid index (" + std::to_string(u) + "," +
                            std::to_string(r) + ") outside " +
                            std::to_string(g.rows) + "x" +
                            std::to_string(g.cols));
  return u * g.cols + r;
}

inline std::pair<int64_t, int64_t> unflatten_index(int64_t i,
                                                   const PositionGrid& g) {
  check_grid(g);
  if (i < 0 || i >= g.tokens())
    throw std::out_of_range("flat index " + std::to_string(i) + " outside " +
                            std::to_string(g.tokens()) + " tokens");
  return {i / g.cols, i % g.cols};
}

/// Per-token angles in radians. For the 2D scheme, row(i) = pi*u_i/(2n) and
/// col(i) = pi*r_i/(2m), both in [0, pi/2). For the 1D scheme only row is
/// used, with row(i) = pi*i/(2N).
struct AngleCodes {
  std::vector<double> row;  // a_i
  std::vector<double> col;  // b_i

  int64_t size() const { return static_cast<int64_t>(row.size()); }
};

inline AngleCodes angle_encode(const PositionGrid& g) {
  check_grid(g);
  const double pi = std::numbers::pi;
  AngleCodes codes;
  codes.row.resize(static_cast<size_t>(g.tokens()));
  codes.col.resize(static_cast<size_t>(g.tokens()));
  for (int64_t u = 0; u < g.rows; ++u) {
    const double a = pi * static_cast<double>(u) / (2.0 * g.rows);
    for (int64_t r = 0; r < g.cols; ++r) {
      const int64_t i = u * g.cols + r;
      codes.row[static_cast<size_t>(i)] = a;
      codes.col[static_cast<size_t>(i)] =
          pi * static_cast<double>(r) / (2.0 * g.cols);
    }
  }
  return codes;
}

/// Angles for the 1D ablation: a single angle per flat position.
inline AngleCodes flat_angle_codes(int64_t n_tokens) {
  VVT_CHECK(n_tokens >= 1, "need at least one token");
  AngleCodes codes;
  codes.row.resize(static_cast<size_t>(n_tokens));
  for (int64_t i = 0; i < n_tokens; ++i)
    codes.row[static_cast<size_t>(i)] =
        std::numbers::pi * static_cast<double>(i) / (2.0 * n_tokens);
  return codes;
}

/// Locality weight between flat positions i and j:
/// cos(a_i - a_j) + cos(b_i - b_j). Symmetric, in [0, 2], equal to 2 at i = j
/// (both cosine arguments lie in (-pi/2, pi/2), so each term is positive).
inline double reweight_factor(int64_t i, int64_t j, const PositionGrid& g) {
  auto [ui, ri] = unflatten_index(i, g);
  auto [uj, rj] = unflatten_index(j, g);
  const double pi = std::numbers::pi;
  const double da = pi * static_cast<double>(ui - uj) / (2.0 * g.rows);
  const double db = pi * static_cast<double>(ri - rj) / (2.0 * g.cols);
  return std::cos(da) + std::cos(db);
}

/// 1D variant used by the Locality1D ablation: cos over flattened distance.
inline double reweight_factor_1d(int64_t i, int64_t j, int64_t n_tokens) {
  VVT_CHECK(i >= 0 && i < n_tokens && j >= 0 && j < n_tokens,
            "flat index outside sequence");
  return std::cos(std::numbers::pi * static_cast<double>(i - j) /
                  (2.0 * n_tokens));
}

enum class AttentionMode {
  vicinity2d,      // ReLU kernel with the 2D cosine re-weighting
  locality1d,      // ReLU kernel with 1D flattened-index cosine
  no_locality,     // plain ReLU kernel, no re-weighting
  softmax_oracle,  // standard quadratic softmax attention
};

inline std::string mode_name(AttentionMode m) {
  switch (m) {
    case AttentionMode::vicinity2d: return "vicinity2d";
    case AttentionMode::locality1d: return "locality1d";
    case AttentionMode::no_locality: return "nolocality";
    case AttentionMode::softmax_oracle: return "softmax";
  }
  return "?";
}

inline AttentionMode parse_mode(const std::string& s) {
  if (s == "vicinity2d" || s == "2dlocality") return AttentionMode::vicinity2d;
  if (s == "locality1d" || s == "1dlocality") return AttentionMode::locality1d;
  if (s == "nolocality" || s == "no_locality")
    return AttentionMode::no_locality;
  if (s == "softmax" || s == "softmax_oracle")
    return AttentionMode::softmax_oracle;
  fail("unknown attention mode '" + s +
       "' (expected vicinity2d, locality1d/1dlocality, nolocality, softmax)");
}

/// A batch of flattened token sequences plus the grid they came from.
template <typename T>
struct TokenGrid {
  Tensor<T> data;  // (batch, N, d)
  PositionGrid grid;

  int64_t batch() const { return data.dim(0); }
  int64_t tokens() const { return data.dim(1); }
  int64_t channels() const { return data.dim(2); }

  void check() const {
    VVT_CHECK(data.rank() == 3, "token grid data must be (batch, N, d)");
    check_grid(grid);
    VVT_CHECK(data.dim(1) == grid.tokens(),
              "token count " + std::to_string(data.dim(1)) +
                  " does not match grid " + std::to_string(grid.rows) + "x" +
                  std::to_string(grid.cols));
    VVT_CHECK(all_finite(data), "token grid contains non-finite values");
  }
};

}  // namespace vvt
