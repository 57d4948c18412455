#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <type_traits>
#include <vector>

#include "vvt/tensor.hpp"

namespace vvt {

// Runtime switches threaded through forward passes. Only training with a
// non-zero drop rate consumes randomness.
struct ForwardCtx {
  bool training = false;
  double drop_rate = 0.0;
  Rng* rng = nullptr;
};

// ---------------------------------------------------------------------------
// Affine map y = x W + b with x (N, in), W (in, out), b (out).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b) {
  VVT_CHECK(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
            "linear shape mismatch " + shape_string(x) + " x " +
                shape_string(w));
  Tensor<T> y({x.dim(0), w.dim(1)});
  matmul(x, w, y);
  const T* bias = b.data();
  for (int64_t r = 0; r < y.dim(0); ++r) {
    T* row = y.row(r);
    for (int64_t c = 0; c < y.dim(1); ++c) row[c] += bias[c];
  }
  return y;
}

// Accumulates dw/db, returns dx.
template <typename T>
Tensor<T> linear_backward(const Tensor<T>& dout, const Tensor<T>& x,
                          const Tensor<T>& w, Tensor<T>& dw, Tensor<T>& db) {
  matmul_at_b(x, dout, dw, /*accumulate=*/true);
  for (int64_t r = 0; r < dout.dim(0); ++r) {
    const T* row = dout.row(r);
    for (int64_t c = 0; c < dout.dim(1); ++c) db[c] += row[c];
  }
  Tensor<T> dx({x.dim(0), x.dim(1)});
  matmul_a_bt(dout, w, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Layer normalization over the channel axis of (N, C) tokens.
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta,
                     LayerNormCache<std::type_identity_t<T>>* cache = nullptr,
                     std::type_identity_t<T> ln_eps = 1e-5) {
  const int64_t n = x.dim(0), c = x.dim(1);
  VVT_CHECK(gamma.numel() == c && beta.numel() == c,
            "layer norm parameter width mismatch");
  Tensor<T> y({n, c});
  Tensor<T> xhat({n, c});
  std::vector<T> inv_std(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = x.row(i);
    T mean = T(0);
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (int64_t j = 0; j < c; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T istd = T(1) / std::sqrt(var + ln_eps);
    inv_std[static_cast<size_t>(i)] = istd;
    T* hrow = xhat.row(i);
    T* yrow = y.row(i);
    for (int64_t j = 0; j < c; ++j) {
      hrow[j] = (row[j] - mean) * istd;
      yrow[j] = gamma[j] * hrow[j] + beta[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm_backward(const Tensor<T>& dout,
                              const LayerNormCache<T>& cache,
                              const Tensor<T>& gamma, Tensor<T>& dgamma,
                              Tensor<T>& dbeta) {
  const int64_t n = dout.dim(0), c = dout.dim(1);
  Tensor<T> dx({n, c});
  for (int64_t i = 0; i < n; ++i) {
    const T* go = dout.row(i);
    const T* xh = cache.xhat.row(i);
    const T istd = cache.inv_std[static_cast<size_t>(i)];
    T mean_dy = T(0), mean_dyxh = T(0);
    for (int64_t j = 0; j < c; ++j) {
      const T dy = go[j] * gamma[j];
      mean_dy += dy;
      mean_dyxh += dy * xh[j];
      dgamma[j] += go[j] * xh[j];
      dbeta[j] += go[j];
    }
    mean_dy /= static_cast<T>(c);
    mean_dyxh /= static_cast<T>(c);
    T* dxr = dx.row(i);
    for (int64_t j = 0; j < c; ++j) {
      const T dy = go[j] * gamma[j];
      dxr[j] = (dy - mean_dy - xh[j] * mean_dyxh) * istd;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Exact (erf-based) GELU.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.flat()) {
    const double z = static_cast<double>(v);
    v = static_cast<T>(0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)));
  }
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& dout, const Tensor<T>& x) {
  Tensor<T> dx = dout;
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double z = static_cast<double>(x[i]);
    const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
    dx[i] = static_cast<T>(static_cast<double>(dout[i]) * (cdf + z * pdf));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// 2D convolution over a single (C, H, W) sample, emitted as tokens. Patch
// rows are gathered (im2col) and multiplied by a (C*k*k, out) weight, so the
// token layout matches PositionGrid flattening directly.
// ---------------------------------------------------------------------------

struct ConvSpec {
  int64_t in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;

  int64_t out_extent(int64_t in) const {
    return (in + 2 * pad - kernel) / stride + 1;
  }
};

template <typename T>
Tensor<T> im2col(const Tensor<T>& img, const ConvSpec& cs) {
  VVT_CHECK(img.rank() == 3 && img.dim(0) == cs.in_ch,
            "conv input must be (C, H, W)");
  const int64_t h = img.dim(1), w = img.dim(2);
  VVT_CHECK(cs.out_extent(h) >= 1 && cs.out_extent(w) >= 1,
            "spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                " too small for kernel " + std::to_string(cs.kernel));
  const int64_t ho = cs.out_extent(h), wo = cs.out_extent(w);
  Tensor<T> cols({ho * wo, cs.in_ch * cs.kernel * cs.kernel});
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      T* dst = cols.row(oy * wo + ox);
      int64_t idx = 0;
      for (int64_t ci = 0; ci < cs.in_ch; ++ci) {
        for (int64_t ky = 0; ky < cs.kernel; ++ky) {
          const int64_t iy = oy * cs.stride + ky - cs.pad;
          for (int64_t kx = 0; kx < cs.kernel; ++kx, ++idx) {
            const int64_t ix = ox * cs.stride + kx - cs.pad;
            dst[idx] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                           ? img(ci, iy, ix)
                           : T(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& dcols, const ConvSpec& cs, int64_t h,
                 int64_t w) {
  Tensor<T> dimg({cs.in_ch, h, w});
  const int64_t ho = cs.out_extent(h), wo = cs.out_extent(w);
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      const T* src = dcols.row(oy * wo + ox);
      int64_t idx = 0;
      for (int64_t ci = 0; ci < cs.in_ch; ++ci) {
        for (int64_t ky = 0; ky < cs.kernel; ++ky) {
          const int64_t iy = oy * cs.stride + ky - cs.pad;
          for (int64_t kx = 0; kx < cs.kernel; ++kx, ++idx) {
            const int64_t ix = ox * cs.stride + kx - cs.pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              dimg(ci, iy, ix) += src[idx];
          }
        }
      }
    }
  }
  return dimg;
}

template <typename T>
struct ConvCache {
  Tensor<T> cols;
  int64_t in_h = 0, in_w = 0;
};

/// Returns tokens (Ho*Wo, out_ch), flattened row-major over output positions.
template <typename T>
Tensor<T> conv2d_tokens(const Tensor<T>& img, const Tensor<T>& w,
                        const Tensor<T>& b, const ConvSpec& cs,
                        ConvCache<std::type_identity_t<T>>* cache = nullptr) {
  VVT_CHECK(w.rank() == 2 && w.dim(0) == cs.in_ch * cs.kernel * cs.kernel &&
                w.dim(1) == cs.out_ch,
            "conv weight must be (C*k*k, out)");
  Tensor<T> cols = im2col(img, cs);
  Tensor<T> out = linear_forward(cols, w, b);
  if (cache) {
    cache->cols = std::move(cols);
    cache->in_h = img.dim(1);
    cache->in_w = img.dim(2);
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_tokens_backward(const Tensor<T>& dout,
                                 const ConvCache<T>& cache, const Tensor<T>& w,
                                 const ConvSpec& cs, Tensor<T>& dw,
                                 Tensor<T>& db) {
  Tensor<T> dcols = linear_backward(dout, cache.cols, w, dw, db);
  return col2im(dcols, cs, cache.in_h, cache.in_w);
}

// ---------------------------------------------------------------------------
// Pooling and loss.
// ---------------------------------------------------------------------------

/// Mean over rows: (N, C) -> (1, C).
template <typename T>
Tensor<T> mean_pool_rows(const Tensor<T>& x) {
  Tensor<T> out({int64_t(1), x.dim(1)});
  for (int64_t r = 0; r < x.dim(0); ++r) {
    const T* row = x.row(r);
    for (int64_t c = 0; c < x.dim(1); ++c) out[c] += row[c];
  }
  for (int64_t c = 0; c < x.dim(1); ++c) out[c] /= static_cast<T>(x.dim(0));
  return out;
}

template <typename T>
Tensor<T> mean_pool_rows_backward(const Tensor<T>& dpooled, int64_t n) {
  Tensor<T> dx({n, dpooled.dim(1)});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < dpooled.dim(1); ++c)
      dx(r, c) = dpooled[c] / static_cast<T>(n);
  return dx;
}

/// Softmax cross-entropy, mean over the batch. Returns the loss and writes
/// dlogits in place.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits,
                             const std::vector<int>& labels,
                             Tensor<T>* dlogits = nullptr) {
  const int64_t b = logits.dim(0), k = logits.dim(1);
  VVT_CHECK(static_cast<int64_t>(labels.size()) == b,
            "label count does not match batch");
  if (dlogits) *dlogits = Tensor<T>({b, k});
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const T* row = logits.row(i);
    const int y = labels[static_cast<size_t>(i)];
    VVT_CHECK(y >= 0 && y < k, "label out of range");
    double mx = static_cast<double>(row[0]);
    for (int64_t j = 1; j < k; ++j)
      mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j)
      sum += std::exp(static_cast<double>(row[j]) - mx);
    const double logz = mx + std::log(sum);
    total += logz - static_cast<double>(row[y]);
    if (dlogits) {
      T* drow = dlogits->row(i);
      for (int64_t j = 0; j < k; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - logz);
        drow[j] = static_cast<T>((p - (j == y ? 1.0 : 0.0)) /
                                 static_cast<double>(b));
      }
    }
  }
  return total / static_cast<double>(b);
}

// Inverted dropout; the mask folds the 1/(1-rate) scale in.
template <typename T>
Tensor<T> make_dropout_mask(int64_t rows, int64_t cols, double rate,
                            Rng& rng) {
  Tensor<T> mask({rows, cols});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& v : mask.flat())
    v = rng.uniform(0.0, 1.0) < rate ? T(0) : keep_scale;
  return mask;
}

template <typename T>
void apply_mask(Tensor<T>& x, const Tensor<T>& mask) {
  for (int64_t i = 0; i < x.numel(); ++i) x[i] *= mask[i];
}

}  // namespace vvt
