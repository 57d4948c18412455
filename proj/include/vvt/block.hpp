#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "vvt/attention.hpp"
#include "vvt/grid.hpp"
#include "vvt/layers.hpp"
#include "vvt/tensor.hpp"

namespace vvt {

/// Per-block hyperparameters. `fr_ratio` divides the channel width before
/// attention (Feature Reduction Attention); `fpc_enabled` wires the Feature
/// Preserving Connection; `post_norm` switches the ablation wiring where
/// normalization follows the residual add instead of preceding the branches.
struct BlockConfig {
  int64_t dim = 0;        // C
  int64_t heads = 1;      // H
  int64_t fr_ratio = 2;   // R
  int64_t expansion = 4;  // E
  AttentionMode mode = AttentionMode::vicinity2d;
  bool fpc_enabled = true;
  bool post_norm = false;
  bool fpc_identity_act = false;  // test hook: skip the FPC activation

  int64_t reduced_dim() const { return dim / fr_ratio; }
  int64_t head_dim() const { return reduced_dim() / heads; }

  void validate() const {
    VVT_CHECK(dim >= 1 && heads >= 1 && fr_ratio >= 1 && expansion >= 1,
              "block config fields must be positive");
    VVT_CHECK(dim % (fr_ratio * heads) == 0,
              "dim " + std::to_string(dim) + " not divisible by R*H = " +
                  std::to_string(fr_ratio * heads));
  }
};

template <typename T>
struct BlockParams {
  Tensor<T> wq, bq, wk, bk, wv, bv;          // C -> C/R
  Tensor<T> wo, bo;                          // C/R -> C
  Tensor<T> fpc_w1, fpc_b1, fpc_w2, fpc_b2;  // C -> C -> C
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // C -> E*C -> C
  Tensor<T> norm1_gamma, norm1_beta;
  Tensor<T> norm2_gamma, norm2_beta;
};

template <typename T>
BlockParams<T> make_block_params(const BlockConfig& cfg) {
  cfg.validate();
  const int64_t c = cfg.dim, cr = cfg.reduced_dim(), ec = cfg.expansion * c;
  BlockParams<T> p;
  p.wq = Tensor<T>({c, cr});
  p.bq = Tensor<T>({cr});
  p.wk = Tensor<T>({c, cr});
  p.bk = Tensor<T>({cr});
  p.wv = Tensor<T>({c, cr});
  p.bv = Tensor<T>({cr});
  p.wo = Tensor<T>({cr, c});
  p.bo = Tensor<T>({c});
  p.fpc_w1 = Tensor<T>({c, c});
  p.fpc_b1 = Tensor<T>({c});
  p.fpc_w2 = Tensor<T>({c, c});
  p.fpc_b2 = Tensor<T>({c});
  p.ffn_w1 = Tensor<T>({c, ec});
  p.ffn_b1 = Tensor<T>({ec});
  p.ffn_w2 = Tensor<T>({ec, c});
  p.ffn_b2 = Tensor<T>({c});
  p.norm1_gamma = Tensor<T>({c});
  p.norm1_beta = Tensor<T>({c});
  p.norm2_gamma = Tensor<T>({c});
  p.norm2_beta = Tensor<T>({c});
  return p;
}

template <typename T, typename F>
void for_each_param(BlockParams<T>& p, const std::string& prefix, F&& f) {
  f(prefix + "wq", p.wq);
  f(prefix + "bq", p.bq);
  f(prefix + "wk", p.wk);
  f(prefix + "bk", p.bk);
  f(prefix + "wv", p.wv);
  f(prefix + "bv", p.bv);
  f(prefix + "wo", p.wo);
  f(prefix + "bo", p.bo);
  f(prefix + "fpc_w1", p.fpc_w1);
  f(prefix + "fpc_b1", p.fpc_b1);
  f(prefix + "fpc_w2", p.fpc_w2);
  f(prefix + "fpc_b2", p.fpc_b2);
  f(prefix + "ffn_w1", p.ffn_w1);
  f(prefix + "ffn_b1", p.ffn_b1);
  f(prefix + "ffn_w2", p.ffn_w2);
  f(prefix + "ffn_b2", p.ffn_b2);
  f(prefix + "norm1_gamma", p.norm1_gamma);
  f(prefix + "norm1_beta", p.norm1_beta);
  f(prefix + "norm2_gamma", p.norm2_gamma);
  f(prefix + "norm2_beta", p.norm2_beta);
}

template <typename T>
void init_block_params(BlockParams<T>& p, Rng& rng, double sigma = 0.02) {
  for_each_param(p, "", [&](const std::string& name, Tensor<T>& t) {
    if (name.find("norm") != std::string::npos) {
      const bool is_scale = name.find("gamma") != std::string::npos;
      t.fill(is_scale ? T(1) : T(0));
    } else if (name[0] == 'b' || name.find("_b") != std::string::npos) {
      t.fill(T(0));
    } else {
      fill_trunc_normal(t, rng, 0.0, sigma);
    }
  });
}

// ---------------------------------------------------------------------------
// Feature Reduction Attention projections.
// ---------------------------------------------------------------------------

template <typename T>
struct ProjectedQkv {
  Tensor<T> q, k, v;  // each (N, C/R)
};

template <typename T>
ProjectedQkv<T> fra_project(const Tensor<T>& x, const BlockParams<T>& p,
                            const BlockConfig& cfg) {
  cfg.validate();
  VVT_CHECK(x.rank() == 2 && x.dim(1) == cfg.dim,
            "fra_project expects (N, C) input");
  ProjectedQkv<T> out;
  out.q = linear_forward(x, p.wq, p.bq);
  out.k = linear_forward(x, p.wk, p.bk);
  out.v = linear_forward(x, p.wv, p.bv);
  return out;
}

template <typename T>
Tensor<T> fra_project_backward(const ProjectedQkv<T>& dqkv, const Tensor<T>& x,
                               const BlockParams<T>& p, BlockParams<T>& g) {
  Tensor<T> dx = linear_backward(dqkv.q, x, p.wq, g.wq, g.bq);
  Tensor<T> dxk = linear_backward(dqkv.k, x, p.wk, g.wk, g.bk);
  Tensor<T> dxv = linear_backward(dqkv.v, x, p.wv, g.wv, g.bv);
  for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dxk[i] + dxv[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention over the reduced width.
// ---------------------------------------------------------------------------

template <typename T>
struct MultiHeadCache {
  ProjectedQkv<T> qkv;
  std::vector<LinearAttentionCache<T>> linear_heads;
  std::vector<SoftmaxAttentionCache<T>> softmax_heads;
  Tensor<T> concat;  // (N, C/R), heads side by side
};

/// Splits the reduced channels into H heads, runs the block's attention mode
/// per head, concatenates, and projects back to C with W_O. When `reference`
/// is set the non-softmax modes run through the explicit quadratic oracle
/// instead of the linear path (forward only; used for equivalence checks).
template <typename T>
Tensor<T> multi_head_attention(const ProjectedQkv<T>& qkv,
                               const PositionGrid& grid,
                               const BlockParams<T>& p, const BlockConfig& cfg,
                               std::type_identity_t<T> eps,
                               MultiHeadCache<std::type_identity_t<T>>* cache,
                               bool reference = false) {
  const int64_t n = qkv.q.dim(0), cr = cfg.reduced_dim(), dh = cfg.head_dim();
  Tensor<T> concat({n, cr});
  if (cache) {
    cache->linear_heads.clear();
    cache->softmax_heads.clear();
  }
  for (int64_t h = 0; h < cfg.heads; ++h) {
    const int64_t c0 = h * dh;
    Tensor<T> qh = slice_columns(qkv.q, c0, c0 + dh);
    Tensor<T> kh = slice_columns(qkv.k, c0, c0 + dh);
    Tensor<T> vh = slice_columns(qkv.v, c0, c0 + dh);
    Tensor<T> oh;
    if (cfg.mode == AttentionMode::softmax_oracle) {
      SoftmaxAttentionCache<T> sc;
      oh = softmax_attention(qh, kh, vh, cache ? &sc : nullptr);
      if (cache) cache->softmax_heads.push_back(std::move(sc));
    } else if (reference) {
      oh = quadratic_oracle(qh, kh, vh, grid, cfg.mode, eps);
    } else {
      LinearAttentionCache<T> lc;
      oh = linear_attention(qh, kh, vh, grid, cfg.mode, eps,
                            cache ? &lc : nullptr);
      if (cache) cache->linear_heads.push_back(std::move(lc));
    }
    place_columns(oh, concat, c0);
  }
  Tensor<T> out = linear_forward(concat, p.wo, p.bo);
  if (cache) {
    cache->qkv = qkv;
    cache->concat = std::move(concat);
  }
  return out;
}

/// Full operation from the (N, C) branch input: FRA projections, per-head
/// attention, W_O.
template <typename T>
Tensor<T> multi_head_vicinity(const Tensor<T>& x, const PositionGrid& grid,
                              const BlockParams<T>& p, const BlockConfig& cfg,
                              std::type_identity_t<T> eps = 1e-6,
                              MultiHeadCache<std::type_identity_t<T>>* cache = nullptr,
                              bool reference = false) {
  ProjectedQkv<T> qkv = fra_project(x, p, cfg);
  return multi_head_attention(qkv, grid, p, cfg, eps, cache, reference);
}

// Returns gradients w.r.t. the projected Q/K/V; the caller owes fra backward.
template <typename T>
ProjectedQkv<T> multi_head_attention_backward(
    const Tensor<T>& dout, const MultiHeadCache<T>& cache,
    const BlockParams<T>& p, const BlockConfig& cfg, BlockParams<T>& g,
    BackwardFault fault = BackwardFault::none) {
  const int64_t n = cache.concat.dim(0), cr = cfg.reduced_dim(),
                dh = cfg.head_dim();
  Tensor<T> dconcat = linear_backward(dout, cache.concat, p.wo, g.wo, g.bo);
  ProjectedQkv<T> dqkv;
  dqkv.q = Tensor<T>({n, cr});
  dqkv.k = Tensor<T>({n, cr});
  dqkv.v = Tensor<T>({n, cr});
  for (int64_t h = 0; h < cfg.heads; ++h) {
    const int64_t c0 = h * dh;
    Tensor<T> doh = slice_columns(dconcat, c0, c0 + dh);
    AttentionGrads<T> hg;
    if (cfg.mode == AttentionMode::softmax_oracle) {
      hg = softmax_attention_backward(doh,
                                      cache.softmax_heads[static_cast<size_t>(h)]);
    } else {
      hg = linear_attention_backward(
          doh, cache.linear_heads[static_cast<size_t>(h)], fault);
    }
    place_columns(hg.dq, dqkv.q, c0);
    place_columns(hg.dk, dqkv.k, c0);
    place_columns(hg.dv, dqkv.v, c0);
  }
  return dqkv;
}

// ---------------------------------------------------------------------------
// Feature Preserving Connection: mean-pool over tokens, two linear layers,
// broadcast back. Costs 2C^2 multiply-adds per sequence.
// ---------------------------------------------------------------------------

template <typename T>
struct FpcCache {
  Tensor<T> pooled;      // (1, C)
  Tensor<T> hidden_pre;  // (1, C) before activation
  Tensor<T> hidden_act;  // (1, C)
  int64_t n = 0;
};

template <typename T>
Tensor<T> fpc_forward(const Tensor<T>& x, const BlockParams<T>& p,
                      const BlockConfig& cfg,
                      FpcCache<std::type_identity_t<T>>* cache = nullptr) {
  const int64_t n = x.dim(0), c = x.dim(1);
  Tensor<T> pooled = mean_pool_rows(x);
  Tensor<T> hidden_pre = linear_forward(pooled, p.fpc_w1, p.fpc_b1);
  Tensor<T> hidden_act =
      cfg.fpc_identity_act ? hidden_pre : gelu(hidden_pre);
  Tensor<T> vec = linear_forward(hidden_act, p.fpc_w2, p.fpc_b2);
  Tensor<T> out({n, c});
  for (int64_t r = 0; r < n; ++r)
    std::copy(vec.row(0), vec.row(0) + c, out.row(r));
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden_act = std::move(hidden_act);
    cache->n = n;
  }
  return out;
}

template <typename T>
Tensor<T> fpc_backward(const Tensor<T>& dout, const FpcCache<T>& cache,
                       const BlockParams<T>& p, const BlockConfig& cfg,
                       BlockParams<T>& g) {
  const int64_t c = dout.dim(1);
  Tensor<T> dvec({int64_t(1), c});
  for (int64_t r = 0; r < dout.dim(0); ++r) {
    const T* row = dout.row(r);
    for (int64_t j = 0; j < c; ++j) dvec[j] += row[j];
  }
  Tensor<T> dact =
      linear_backward(dvec, cache.hidden_act, p.fpc_w2, g.fpc_w2, g.fpc_b2);
  Tensor<T> dpre =
      cfg.fpc_identity_act ? dact : gelu_backward(dact, cache.hidden_pre);
  Tensor<T> dpooled =
      linear_backward(dpre, cache.pooled, p.fpc_w1, g.fpc_w1, g.fpc_b1);
  return mean_pool_rows_backward(dpooled, cache.n);
}

// ---------------------------------------------------------------------------
// The full transformer block.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCache {
  LayerNormCache<T> norm1, norm2;
  Tensor<T> branch_in;   // input to attention/FPC branches
  MultiHeadCache<T> mha;
  FpcCache<T> fpc;
  Tensor<T> mid;         // pre-norm: y after first residual; post-norm: x+A+F
  Tensor<T> normed_mid;  // input to the FFN
  Tensor<T> ffn_pre;     // (N, E*C)
  Tensor<T> ffn_act;
  Tensor<T> drop_attn, drop_ffn;  // dropout masks when active
  bool dropout_active = false;
};

/// Pre-norm (default): y = x + Att(LN1(x)) + FPC(LN1(x)); z = y + FFN(LN2(y)).
/// Post-norm ablation:  y = LN1(x + Att(x) + FPC(x));     z = LN2(y + FFN(y)).
template <typename T>
Tensor<T> block_forward_one(const Tensor<T>& x, const PositionGrid& grid,
                            const BlockParams<T>& p, const BlockConfig& cfg,
                            BlockCache<std::type_identity_t<T>>* cache = nullptr,
                            const ForwardCtx& ctx = {},
                            std::type_identity_t<T> eps = 1e-6,
                            bool reference_attention = false) {
  cfg.validate();
  VVT_CHECK(x.rank() == 2 && x.dim(1) == cfg.dim && x.dim(0) == grid.tokens(),
            "block input must be (N, C) matching the grid");
  const int64_t n = x.dim(0), c = cfg.dim;
  const bool use_dropout = ctx.training && ctx.drop_rate > 0.0 && ctx.rng;

  Tensor<T> branch_in =
      cfg.post_norm
          ? x
          : layer_norm(x, p.norm1_gamma, p.norm1_beta,
                       cache ? &cache->norm1 : nullptr);
  Tensor<T> attn = multi_head_vicinity(branch_in, grid, p, cfg, eps,
                                       cache ? &cache->mha : nullptr,
                                       reference_attention);
  if (use_dropout) {
    Tensor<T> mask = make_dropout_mask<T>(n, c, ctx.drop_rate, *ctx.rng);
    apply_mask(attn, mask);
    if (cache) cache->drop_attn = std::move(mask);
  }
  Tensor<T> fpc_out;
  if (cfg.fpc_enabled)
    fpc_out = fpc_forward(branch_in, p, cfg, cache ? &cache->fpc : nullptr);

  Tensor<T> mid({n, c});
  for (int64_t i = 0; i < mid.numel(); ++i) {
    T v = x[i] + attn[i];
    if (cfg.fpc_enabled) v += fpc_out[i];
    mid[i] = v;
  }
  if (cfg.post_norm)
    mid = layer_norm(mid, p.norm1_gamma, p.norm1_beta,
                     cache ? &cache->norm1 : nullptr);

  Tensor<T> normed_mid =
      cfg.post_norm ? mid
                    : layer_norm(mid, p.norm2_gamma, p.norm2_beta,
                                 cache ? &cache->norm2 : nullptr);
  Tensor<T> ffn_pre = linear_forward(normed_mid, p.ffn_w1, p.ffn_b1);
  Tensor<T> ffn_act = gelu(ffn_pre);
  Tensor<T> ffn_out = linear_forward(ffn_act, p.ffn_w2, p.ffn_b2);
  if (use_dropout) {
    Tensor<T> mask = make_dropout_mask<T>(n, c, ctx.drop_rate, *ctx.rng);
    apply_mask(ffn_out, mask);
    if (cache) cache->drop_ffn = std::move(mask);
  }

  Tensor<T> z({n, c});
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = mid[i] + ffn_out[i];
  if (cfg.post_norm)
    z = layer_norm(z, p.norm2_gamma, p.norm2_beta,
                   cache ? &cache->norm2 : nullptr);

  if (cache) {
    cache->branch_in = std::move(branch_in);
    cache->mid = std::move(mid);
    cache->normed_mid = std::move(normed_mid);
    cache->ffn_pre = std::move(ffn_pre);
    cache->ffn_act = std::move(ffn_act);
    cache->dropout_active = use_dropout;
  }
  return z;
}

template <typename T>
Tensor<T> block_backward_one(const Tensor<T>& dz_in, const BlockCache<T>& cache,
                             const BlockParams<T>& p, const BlockConfig& cfg,
                             BlockParams<T>& g,
                             BackwardFault fault = BackwardFault::none) {
  VVT_CHECK(!cfg.post_norm,
            "backward is implemented for the pre-norm wiring only");
  Tensor<T> dz = dz_in;

  // FFN branch: z = mid + drop(lin2(gelu(lin1(normed_mid))))
  Tensor<T> dffn_out = dz;
  if (cache.dropout_active) apply_mask(dffn_out, cache.drop_ffn);
  Tensor<T> dact =
      linear_backward(dffn_out, cache.ffn_act, p.ffn_w2, g.ffn_w2, g.ffn_b2);
  Tensor<T> dpre = gelu_backward(dact, cache.ffn_pre);
  Tensor<T> dnormed_mid =
      linear_backward(dpre, cache.normed_mid, p.ffn_w1, g.ffn_w1, g.ffn_b1);
  Tensor<T> dmid = layer_norm_backward(dnormed_mid, cache.norm2, p.norm2_gamma,
                                       g.norm2_gamma, g.norm2_beta);
  for (int64_t i = 0; i < dmid.numel(); ++i) dmid[i] += dz[i];

  // Attention + FPC branches off the shared normalized input.
  Tensor<T> dattn = dmid;
  if (cache.dropout_active) apply_mask(dattn, cache.drop_attn);
  ProjectedQkv<T> dqkv =
      multi_head_attention_backward(dattn, cache.mha, p, cfg, g, fault);
  Tensor<T> dbranch =
      fra_project_backward(dqkv, cache.branch_in, p, g);
  if (cfg.fpc_enabled) {
    Tensor<T> dfpc = fpc_backward(dmid, cache.fpc, p, cfg, g);
    for (int64_t i = 0; i < dbranch.numel(); ++i) dbranch[i] += dfpc[i];
  }
  Tensor<T> dx = layer_norm_backward(dbranch, cache.norm1, p.norm1_gamma,
                                     g.norm1_gamma, g.norm1_beta);
  for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dmid[i];
  return dx;
}

/// Batched wrapper over the per-sequence block.
template <typename T>
TokenGrid<T> block_forward(const TokenGrid<T>& x, const BlockParams<T>& p,
                           const BlockConfig& cfg,
                           std::type_identity_t<T> eps = 1e-6,
                           const ForwardCtx& ctx = {}) {
  x.check();
  TokenGrid<T> out;
  out.grid = x.grid;
  out.data = Tensor<T>({x.batch(), x.tokens(), x.channels()});
  for (int64_t b = 0; b < x.batch(); ++b) {
    Tensor<T> sample({x.tokens(), x.channels()});
    std::copy(&x.data(b, 0, 0), &x.data(b, 0, 0) + sample.numel(),
              sample.data());
    Tensor<T> z = block_forward_one(sample, x.grid, p, cfg, nullptr, ctx, eps);
    std::copy(z.data(), z.data() + z.numel(), &out.data(b, 0, 0));
  }
  return out;
}

}  // namespace vvt
