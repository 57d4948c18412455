#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "vvt/grid.hpp"
#include "vvt/tensor.hpp"

namespace vvt {

// Explicit-weights paths refuse sequences longer than this.
inline constexpr int64_t kQuadraticTokenCap = 4096;

inline int64_t expanded_width(int64_t d, AttentionMode mode) {
  switch (mode) {
    case AttentionMode::vicinity2d: return 4 * d;
    case AttentionMode::locality1d: return 2 * d;
    case AttentionMode::no_locality: return d;
    case AttentionMode::softmax_oracle:
      fail("softmax mode does not use the angle expansion");
  }
  return d;
}

namespace detail {

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  VVT_CHECK(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
            "attention inputs must be rank-2 (N, d)");
  VVT_CHECK(q.dim(1) == k.dim(1),
            "query/key width mismatch " + shape_string(q) + " vs " +
                shape_string(k));
  VVT_CHECK(q.dim(0) == k.dim(0) && q.dim(0) == v.dim(0),
            "query/key/value row mismatch");
  VVT_CHECK(all_finite(q) && all_finite(k) && all_finite(v),
            "attention inputs contain non-finite values");
}

template <typename T>
Tensor<T> relu_copy(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (T& v : out.flat())
    if (v < T(0)) v = T(0);
  return out;
}

inline void check_codes(const AngleCodes& codes, int64_t n,
                        AttentionMode mode) {
  if (mode == AttentionMode::no_locality) return;
  VVT_CHECK(codes.size() == n, "angle codes cover " +
                                   std::to_string(codes.size()) +
                                   " tokens, sequence has " +
                                   std::to_string(n));
  if (mode == AttentionMode::vicinity2d)
    VVT_CHECK(static_cast<int64_t>(codes.col.size()) == n,
              "2D mode needs column angles");
}

}  // namespace detail

/// Concatenates trig-scaled copies of X per token. X is assumed to be the
/// kernelized (ReLU) feature. Vicinity2D emits
/// [cos(a_i) X_i, sin(a_i) X_i, cos(b_i) X_i, sin(b_i) X_i]; Locality1D emits
/// [cos(c_i) X_i, sin(c_i) X_i] with the single flattened-index angle in
/// codes.row; NoLocality returns X unchanged.
template <typename T>
Tensor<T> expand_with_angles(const Tensor<T>& x, const AngleCodes& codes,
                             AttentionMode mode) {
  VVT_CHECK(x.rank() == 2, "expand_with_angles expects (N, d)");
  VVT_CHECK(mode != AttentionMode::softmax_oracle,
            "softmax mode does not use the angle expansion");
  const int64_t n = x.dim(0), d = x.dim(1);
  detail::check_codes(codes, n, mode);
  if (mode == AttentionMode::no_locality) return x;

  Tensor<T> out({n, expanded_width(d, mode)});
  for (int64_t i = 0; i < n; ++i) {
    const T* src = x.row(i);
    T* dst = out.row(i);
    const double a = codes.row[static_cast<size_t>(i)];
    const T ca = static_cast<T>(std::cos(a)), sa = static_cast<T>(std::sin(a));
    for (int64_t c = 0; c < d; ++c) {
      dst[c] = ca * src[c];
      dst[d + c] = sa * src[c];
    }
    if (mode == AttentionMode::vicinity2d) {
      const double b = codes.col[static_cast<size_t>(i)];
      const T cb = static_cast<T>(std::cos(b)),
              sb = static_cast<T>(std::sin(b));
      for (int64_t c = 0; c < d; ++c) {
        dst[2 * d + c] = cb * src[c];
        dst[3 * d + c] = sb * src[c];
      }
    }
  }
  return out;
}

/// Adjoint of expand_with_angles with respect to X.
template <typename T>
Tensor<T> collapse_expansion(const Tensor<T>& dxp, const AngleCodes& codes,
                             AttentionMode mode, int64_t d) {
  if (mode == AttentionMode::no_locality) return dxp;
  const int64_t n = dxp.dim(0);
  Tensor<T> dx({n, d});
  for (int64_t i = 0; i < n; ++i) {
    const T* src = dxp.row(i);
    T* dst = dx.row(i);
    const double a = codes.row[static_cast<size_t>(i)];
    const T ca = static_cast<T>(std::cos(a)), sa = static_cast<T>(std::sin(a));
    for (int64_t c = 0; c < d; ++c) dst[c] = ca * src[c] + sa * src[d + c];
    if (mode == AttentionMode::vicinity2d) {
      const double b = codes.col[static_cast<size_t>(i)];
      const T cb = static_cast<T>(std::cos(b)),
              sb = static_cast<T>(std::sin(b));
      for (int64_t c = 0; c < d; ++c)
        dst[c] += cb * src[2 * d + c] + sb * src[3 * d + c];
    }
  }
  return dx;
}

template <typename T>
struct LinearAttentionCache {
  AttentionMode mode = AttentionMode::vicinity2d;
  T eps = T(1e-6);
  int64_t d = 0;  // pre-expansion feature width
  AngleCodes codes;
  Tensor<T> q_mask, k_mask;  // ReLU activation masks, (N, d)
  Tensor<T> qx, kx;          // expanded kernel features, (N, d')
  Tensor<T> v;               // (N, dv)
  Tensor<T> summary;         // K'^T V, (d', dv)
  Tensor<T> key_sum;         // sum_j K'_j, (1, d')
  std::vector<T> denom_raw;  // Q'_i . key_sum before the eps clamp
  Tensor<T> out;             // (N, dv)
};

/// Linearized attention: O_i = Q'_i (K'^T V) / max(Q'_i . sum_j K'_j, eps).
/// Q and K pass through ReLU and the angle expansion for `mode`; the (d', dv)
/// key-value summary is accumulated before any query touches it, so no N x N
/// intermediate exists. Summaries accumulate sequentially over j.
template <typename T>
Tensor<T> linear_attention_with_codes(const Tensor<T>& q, const Tensor<T>& k,
                                      const Tensor<T>& v,
                                      const AngleCodes& codes,
                                      AttentionMode mode,
                                      std::type_identity_t<T> eps,
                                      LinearAttentionCache<T>* cache = nullptr) {
  detail::check_qkv(q, k, v);
  VVT_CHECK(mode != AttentionMode::softmax_oracle,
            "linear_attention does not run the softmax oracle mode");
  VVT_CHECK(eps > T(0), "eps must be positive");
  const int64_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  detail::check_codes(codes, n, mode);

  Tensor<T> qr = detail::relu_copy(q);
  Tensor<T> kr = detail::relu_copy(k);
  Tensor<T> qx = expand_with_angles(qr, codes, mode);
  Tensor<T> kx = expand_with_angles(kr, codes, mode);
  const int64_t dp = qx.dim(1);

  // (d', dv) summary and (d') key total, one sequential pass over j.
  Tensor<T> summary({dp, dv});
  matmul_at_b(kx, v, summary);
  Tensor<T> key_sum({int64_t(1), dp});
  for (int64_t j = 0; j < n; ++j) {
    const T* krow = kx.row(j);
    T* s = key_sum.row(0);
    for (int64_t p = 0; p < dp; ++p) s[p] += krow[p];
  }

  Tensor<T> out({n, dv});
  matmul(qx, summary, out);
  std::vector<T> denom_raw(static_cast<size_t>(n));
  const T* s = key_sum.row(0);
  for (int64_t i = 0; i < n; ++i) {
    const T* qrow = qx.row(i);
    T t = T(0);
    for (int64_t p = 0; p < dp; ++p) t += qrow[p] * s[p];
    denom_raw[static_cast<size_t>(i)] = t;
    const T den = std::max(t, eps);
    T* orow = out.row(i);
    for (int64_t c = 0; c < dv; ++c) orow[c] /= den;
  }

  if (cache) {
    cache->mode = mode;
    cache->eps = eps;
    cache->d = d;
    cache->codes = codes;
    cache->q_mask = Tensor<T>({n, d});
    cache->k_mask = Tensor<T>({n, d});
    for (int64_t i = 0; i < n * d; ++i) {
      cache->q_mask[i] = q[i] > T(0) ? T(1) : T(0);
      cache->k_mask[i] = k[i] > T(0) ? T(1) : T(0);
    }
    cache->qx = std::move(qx);
    cache->kx = std::move(kx);
    cache->v = v;
    cache->summary = std::move(summary);
    cache->key_sum = std::move(key_sum);
    cache->denom_raw = std::move(denom_raw);
    cache->out = out;
  }
  return out;
}

template <typename T>
AngleCodes codes_for_mode(const PositionGrid& grid, AttentionMode mode,
                          const Tensor<T>& q) {
  switch (mode) {
    case AttentionMode::vicinity2d: return angle_encode(grid);
    case AttentionMode::locality1d: return flat_angle_codes(q.dim(0));
    default: return {};
  }
}

template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, const PositionGrid& grid,
                           AttentionMode mode,
                           std::type_identity_t<T> eps = 1e-6,
                           LinearAttentionCache<T>* cache = nullptr) {
  check_grid(grid);
  VVT_CHECK(q.rank() == 2 && q.dim(0) == grid.tokens(),
            "sequence length does not match grid");
  return linear_attention_with_codes(q, k, v, codes_for_mode(grid, mode, q),
                                     mode, eps, cache);
}

template <typename T>
struct AttentionGrads {
  Tensor<T> dq, dk, dv;
};

/// Negative-control hook: grad-check tests corrupt the backward pass through
/// this switch to prove the checker catches a dropped term.
enum class BackwardFault {
  none,
  drop_key_sum_grad,  // omit the denominator's contribution to dK
};

template <typename T>
AttentionGrads<T> linear_attention_backward(
    const Tensor<T>& dout, const LinearAttentionCache<T>& cache,
    BackwardFault fault = BackwardFault::none) {
  const int64_t n = cache.qx.dim(0), dp = cache.qx.dim(1), dv = cache.v.dim(1);
  VVT_CHECK(dout.rank() == 2 && dout.dim(0) == n && dout.dim(1) == dv,
            "dout shape mismatch");

  Tensor<T> dnum({n, dv});
  std::vector<T> dt(static_cast<size_t>(n), T(0));
  for (int64_t i = 0; i < n; ++i) {
    const T traw = cache.denom_raw[static_cast<size_t>(i)];
    const T den = std::max(traw, cache.eps);
    const T* go = dout.row(i);
    const T* orow = cache.out.row(i);
    T* gn = dnum.row(i);
    T douto = T(0);
    for (int64_t c = 0; c < dv; ++c) {
      gn[c] = go[c] / den;
      douto += go[c] * orow[c];
    }
    if (traw > cache.eps) dt[static_cast<size_t>(i)] = -douto / den;
  }

  // dQ' = dnum M^T + dt ⊗ key_sum
  Tensor<T> dqx({n, dp});
  matmul_a_bt(dnum, cache.summary, dqx);
  const T* s = cache.key_sum.row(0);
  for (int64_t i = 0; i < n; ++i) {
    T* row = dqx.row(i);
    const T ti = dt[static_cast<size_t>(i)];
    if (ti != T(0))
      for (int64_t p = 0; p < dp; ++p) row[p] += ti * s[p];
  }

  // dM = Q'^T dnum ; ds = sum_i dt_i Q'_i
  Tensor<T> dsummary({dp, dv});
  matmul_at_b(cache.qx, dnum, dsummary);
  std::vector<T> ds(static_cast<size_t>(dp), T(0));
  for (int64_t i = 0; i < n; ++i) {
    const T ti = dt[static_cast<size_t>(i)];
    if (ti == T(0)) continue;
    const T* qrow = cache.qx.row(i);
    for (int64_t p = 0; p < dp; ++p) ds[static_cast<size_t>(p)] += ti * qrow[p];
  }

  // dK' = V dM^T + 1 ⊗ ds ; dV = K' dM
  Tensor<T> dkx({n, dp});
  matmul_a_bt(cache.v, dsummary, dkx);
  if (fault != BackwardFault::drop_key_sum_grad) {
    for (int64_t j = 0; j < n; ++j) {
      T* row = dkx.row(j);
      for (int64_t p = 0; p < dp; ++p) row[p] += ds[static_cast<size_t>(p)];
    }
  }
  AttentionGrads<T> grads;
  grads.dv = Tensor<T>({n, dv});
  matmul(cache.kx, dsummary, grads.dv);

  grads.dq = collapse_expansion(dqx, cache.codes, cache.mode, cache.d);
  grads.dk = collapse_expansion(dkx, cache.codes, cache.mode, cache.d);
  for (int64_t i = 0; i < n * cache.d; ++i) {
    grads.dq[i] *= cache.q_mask[i];
    grads.dk[i] *= cache.k_mask[i];
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Explicit quadratic paths: the test oracle and the softmax baseline.
// ---------------------------------------------------------------------------

inline void check_token_cap(int64_t n) {
  if (n > kQuadraticTokenCap)
    throw std::length_error("explicit attention refused: N = " +
                            std::to_string(n) + " exceeds cap " +
                            std::to_string(kQuadraticTokenCap));
}

inline double oracle_locality_weight(int64_t i, int64_t j,
                                     const PositionGrid& grid,
                                     AttentionMode mode) {
  switch (mode) {
    case AttentionMode::vicinity2d: return reweight_factor(i, j, grid);
    case AttentionMode::locality1d:
      return reweight_factor_1d(i, j, grid.tokens());
    case AttentionMode::no_locality: return 1.0;
    case AttentionMode::softmax_oracle:
      fail("quadratic oracle does not cover the softmax mode");
  }
  return 1.0;
}

/// Explicit row-normalized attention weights
/// S_ij = ReLU(Q_i).ReLU(K_j) * w(i,j) / max(sum_j ..., eps). Test-only: this
/// is the O(N^2) reference the linear path is checked against.
template <typename T>
Tensor<T> oracle_weight_matrix(const Tensor<T>& q, const Tensor<T>& k,
                               const PositionGrid& grid, AttentionMode mode,
                               std::type_identity_t<T> eps = 1e-6) {
  VVT_CHECK(q.rank() == 2 && k.rank() == 2 && q.dim(1) == k.dim(1) &&
                q.dim(0) == k.dim(0),
            "oracle expects matching (N, d) query/key");
  const int64_t n = q.dim(0), d = q.dim(1);
  VVT_CHECK(n == grid.tokens(), "sequence length does not match grid");
  check_token_cap(n);
  Tensor<T> qr = detail::relu_copy(q);
  Tensor<T> kr = detail::relu_copy(k);
  Tensor<T> s({n, n});
  for (int64_t i = 0; i < n; ++i) {
    T row_sum = T(0);
    for (int64_t j = 0; j < n; ++j) {
      T dot = T(0);
      const T* qi = qr.row(i);
      const T* kj = kr.row(j);
      for (int64_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
      const T w =
          static_cast<T>(oracle_locality_weight(i, j, grid, mode)) * dot;
      s(i, j) = w;
      row_sum += w;
    }
    const T den = std::max(row_sum, eps);
    for (int64_t j = 0; j < n; ++j) s(i, j) /= den;
  }
  return s;
}

/// Brute-force re-weighted attention used to verify the linear path.
template <typename T>
Tensor<T> quadratic_oracle(const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, const PositionGrid& grid,
                           AttentionMode mode,
                           std::type_identity_t<T> eps = 1e-6) {
  detail::check_qkv(q, k, v);
  Tensor<T> weights = oracle_weight_matrix(q, k, grid, mode, eps);
  Tensor<T> out({v.dim(0), v.dim(1)});
  matmul(weights, v, out);
  return out;
}

template <typename T>
struct SoftmaxAttentionCache {
  Tensor<T> q, k, v;
  Tensor<T> probs;  // (N, N) row-stochastic
  T scale = T(1);
};

/// Standard scaled dot-product attention with 1/sqrt(d) scaling.
template <typename T>
Tensor<T> softmax_attention(const Tensor<T>& q, const Tensor<T>& k,
                            const Tensor<T>& v,
                            SoftmaxAttentionCache<T>* cache = nullptr) {
  detail::check_qkv(q, k, v);
  const int64_t n = q.dim(0), dv = v.dim(1);
  check_token_cap(n);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(1))));

  Tensor<T> scores({n, n});
  matmul_a_bt(q, k, scores);
  for (T& x : scores.flat()) x *= scale;
  for (int64_t i = 0; i < n; ++i) {
    T* row = scores.row(i);
    T mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < n; ++j) row[j] /= sum;
  }

  Tensor<T> out({n, dv});
  matmul(scores, v, out);
  if (cache) {
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->probs = std::move(scores);
    cache->scale = scale;
  }
  return out;
}

template <typename T>
AttentionGrads<T> softmax_attention_backward(
    const Tensor<T>& dout, const SoftmaxAttentionCache<T>& cache) {
  const int64_t n = cache.probs.dim(0);
  AttentionGrads<T> grads;
  grads.dv = Tensor<T>({n, cache.v.dim(1)});
  matmul_at_b(cache.probs, dout, grads.dv);

  Tensor<T> dprobs({n, n});
  matmul_a_bt(dout, cache.v, dprobs);
  // softmax Jacobian per row: dZ = P ⊙ (dP - (dP.P) 1^T)
  for (int64_t i = 0; i < n; ++i) {
    const T* p = cache.probs.row(i);
    T* dp = dprobs.row(i);
    T inner = T(0);
    for (int64_t j = 0; j < n; ++j) inner += dp[j] * p[j];
    for (int64_t j = 0; j < n; ++j) dp[j] = p[j] * (dp[j] - inner);
  }
  grads.dq = Tensor<T>({n, cache.q.dim(1)});
  matmul(dprobs, cache.k, grads.dq);
  grads.dk = Tensor<T>({n, cache.k.dim(1)});
  matmul_at_b(dprobs, cache.q, grads.dk);
  for (T& x : grads.dq.flat()) x *= cache.scale;
  for (T& x : grads.dk.flat()) x *= cache.scale;
  return grads;
}

}  // namespace vvt
