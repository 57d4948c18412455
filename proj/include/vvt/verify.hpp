#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "vvt/attention.hpp"
#include "vvt/backbone.hpp"
#include "vvt/block.hpp"
#include "vvt/grad_check.hpp"
#include "vvt/grid.hpp"

namespace vvt {

struct SuiteCheck {
  std::string name;
  bool pass = false;
  double value = 0.0;  // measured extremum (max error, min margin, ...)
  double limit = 0.0;
  std::string note;
};

struct SuiteResult {
  std::string suite;
  std::vector<SuiteCheck> checks;

  bool passed() const {
    for (const SuiteCheck& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

namespace detail {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) -
                             static_cast<double>(b[i])));
  return m;
}

}  // namespace detail

/// Randomized linear-vs-quadratic equivalence: `cases` draws over batches up
/// to 4, grids up to 16x16, widths up to 32, cycling the non-softmax modes.
/// `inject_fault` perturbs one output to prove the suite catches mismatches.
template <typename T>
SuiteResult oracle_equivalence_suite(int cases, uint64_t seed, double tol,
                                     bool inject_fault = false) {
  Rng rng(seed);
  const AttentionMode modes[3] = {AttentionMode::vicinity2d,
                                  AttentionMode::locality1d,
                                  AttentionMode::no_locality};
  double max_err[3] = {0.0, 0.0, 0.0};
  int counted[3] = {0, 0, 0};
  for (int c = 0; c < cases; ++c) {
    const AttentionMode mode = modes[c % 3];
    const PositionGrid grid{1 + rng.integer(16), 1 + rng.integer(16)};
    const int64_t n = grid.tokens();
    const int64_t d = 1 + rng.integer(32), dv = 1 + rng.integer(32);
    const int64_t batch = 1 + rng.integer(4);
    for (int64_t b = 0; b < batch; ++b) {
      Tensor<T> q({n, d}), k({n, d}), v({n, dv});
      fill_normal(q, rng);
      fill_normal(k, rng);
      fill_normal(v, rng);
      Tensor<T> lin = linear_attention(q, k, v, grid, mode, T(1e-6));
      Tensor<T> ora = quadratic_oracle(q, k, v, grid, mode, T(1e-6));
      if (inject_fault && c == 0 && b == 0) lin[0] += T(1);
      max_err[c % 3] = std::max(max_err[c % 3], detail::max_abs_diff(lin, ora));
      ++counted[c % 3];
    }
  }
  SuiteResult res;
  res.suite = "oracle-equivalence";
  for (int m = 0; m < 3; ++m) {
    SuiteCheck chk;
    chk.name = mode_name(modes[m]);
    chk.value = max_err[m];
    chk.limit = tol;
    chk.pass = max_err[m] <= tol;
    chk.note = std::to_string(counted[m]) + " sequences";
    res.checks.push_back(chk);
  }
  return res;
}

/// Structural invariants: re-weight bounds, row-stochasticity over random
/// cases (zero-query rows included), locality monotonicity, permutation
/// equivariance, and the expansion norm identity.
inline SuiteResult invariant_suite(uint64_t seed) {
  SuiteResult res;
  res.suite = "invariants";
  Rng rng(seed);

  {  // re-weight bounds, self weight, symmetry on an 8x8 grid
    PositionGrid g{8, 8};
    double worst = 0.0;
    for (int64_t i = 0; i < g.tokens(); ++i) {
      worst = std::max(worst, std::abs(reweight_factor(i, i, g) - 2.0));
      for (int64_t j = 0; j < g.tokens(); ++j) {
        const double w = reweight_factor(i, j, g);
        worst = std::max(worst, std::max(-w, w - 2.0));
        worst = std::max(worst, std::abs(w - reweight_factor(j, i, g)));
      }
    }
    res.checks.push_back({"reweight-bounds", worst <= 1e-12, worst, 1e-12, ""});
  }

  {  // oracle rows: non-negative, sum to 1 when the clamp is inactive
    double worst_sum = 0.0, worst_neg = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
      const PositionGrid g{1 + rng.integer(8), 1 + rng.integer(8)};
      const int64_t n = g.tokens(), d = 1 + rng.integer(8);
      Tensor<double> q({n, d}), k({n, d});
      fill_normal(q, rng);
      fill_normal(k, rng);
      if (rep % 5 == 0)
        for (int64_t c = 0; c < d; ++c) q(rng.integer(n), c) = 0.0;
      const AttentionMode mode =
          rep % 3 == 0   ? AttentionMode::vicinity2d
          : rep % 3 == 1 ? AttentionMode::locality1d
                         : AttentionMode::no_locality;
      Tensor<double> w = oracle_weight_matrix(q, k, g, mode, 1e-6);
      Tensor<double> qr = q, kr = k;
      for (auto& x : qr.flat()) x = std::max(x, 0.0);
      for (auto& x : kr.flat()) x = std::max(x, 0.0);
      for (int64_t i = 0; i < n; ++i) {
        double sum = 0.0, raw = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          worst_neg = std::max(worst_neg, -w(i, j));
          sum += w(i, j);
          double dot = 0.0;
          for (int64_t c = 0; c < d; ++c) dot += qr(i, c) * kr(j, c);
          raw += dot * oracle_locality_weight(i, j, g, mode);
        }
        if (raw > 1e-6) worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
    }
    res.checks.push_back(
        {"row-stochastic", worst_sum <= 1e-9, worst_sum, 1e-9, "50 cases"});
    res.checks.push_back(
        {"non-negative", worst_neg <= 0.0, worst_neg, 0.0, ""});
  }

  {  // locality: self-argmax and monotone rays with identical positive rows
    PositionGrid g{8, 8};
    const int64_t n = g.tokens();
    Tensor<double> q({n, 4}), k({n, 4});
    q.fill(1.0);
    k.fill(1.0);
    Tensor<double> w =
        oracle_weight_matrix(q, k, g, AttentionMode::vicinity2d, 1e-6);
    bool ok = true;
    for (int64_t i = 0; i < n && ok; ++i) {
      auto [u0, r0] = unflatten_index(i, g);
      for (int64_t j = 0; j < n; ++j)
        if (j != i && w(i, j) >= w(i, i)) ok = false;
      const int64_t dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& dir : dirs) {
        double prev = w(i, i);
        for (int64_t s = 1;; ++s) {
          const int64_t u = u0 + dir[0] * s, r = r0 + dir[1] * s;
          if (u < 0 || u >= g.rows || r < 0 || r >= g.cols) break;
          const double cur = w(i, flatten_index(u, r, g));
          if (cur > prev + 1e-15) ok = false;
          prev = cur;
        }
      }
    }
    res.checks.push_back(
        {"locality-monotone", ok, ok ? 0.0 : 1.0, 0.0, "8x8 exhaustive"});
  }

  {  // permutation equivariance through explicit angle codes
    PositionGrid g{4, 5};
    const int64_t n = g.tokens();
    Tensor<double> q({n, 6}), k({n, 6}), v({n, 3});
    fill_normal(q, rng);
    fill_normal(k, rng);
    fill_normal(v, rng);
    AngleCodes codes = angle_encode(g);
    Tensor<double> base = linear_attention_with_codes(
        q, k, v, codes, AttentionMode::vicinity2d, 1e-6);
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Tensor<double> qp({n, 6}), kp({n, 6}), vp({n, 3});
    AngleCodes cp;
    cp.row.resize(static_cast<size_t>(n));
    cp.col.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const int64_t s = perm[static_cast<size_t>(i)];
      std::copy(q.row(s), q.row(s) + 6, qp.row(i));
      std::copy(k.row(s), k.row(s) + 6, kp.row(i));
      std::copy(v.row(s), v.row(s) + 3, vp.row(i));
      cp.row[static_cast<size_t>(i)] = codes.row[static_cast<size_t>(s)];
      cp.col[static_cast<size_t>(i)] = codes.col[static_cast<size_t>(s)];
    }
    Tensor<double> permuted = linear_attention_with_codes(
        qp, kp, vp, cp, AttentionMode::vicinity2d, 1e-6);
    double worst = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < 3; ++c)
        worst = std::max(
            worst, std::abs(permuted(i, c) - base(perm[static_cast<size_t>(i)], c)));
    res.checks.push_back(
        {"permutation-equivariance", worst <= 1e-12, worst, 1e-12, ""});
  }

  {  // expansion preserves per-row norms blockwise
    PositionGrid g{3, 3};
    Tensor<double> x({9, 5});
    fill_normal(x, rng);
    Tensor<double> ex =
        expand_with_angles(x, angle_encode(g), AttentionMode::vicinity2d);
    double worst = 0.0;
    for (int64_t i = 0; i < 9; ++i) {
      double nx = 0, nca = 0, nsa = 0;
      for (int64_t c = 0; c < 5; ++c) {
        nx += x(i, c) * x(i, c);
        nca += ex(i, c) * ex(i, c);
        nsa += ex(i, 5 + c) * ex(i, 5 + c);
      }
      worst = std::max(worst, std::abs(nca + nsa - nx));
    }
    res.checks.push_back(
        {"expansion-pythagoras", worst <= 1e-12, worst, 1e-12, ""});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checks for composite modules.
// ---------------------------------------------------------------------------

inline constexpr double kKinkGuard = 1e-4;

template <typename T>
bool attention_kink_risk(const MultiHeadCache<T>& mha, double guard) {
  for (const Tensor<T>* t : {&mha.qkv.q, &mha.qkv.k})
    for (T v : t->flat())
      if (std::abs(static_cast<double>(v)) < guard) return true;
  return false;
}

/// Gradient check of one block (input and every parameter) against central
/// differences. Seeds whose projected Q/K land near the ReLU kink are skipped
/// and counted as resamples.
inline GradCheckReport grad_check_block(uint64_t seed, AttentionMode mode,
                                        double step = 1e-5) {
  BlockConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.fr_ratio = 2;
  cfg.expansion = 2;
  cfg.mode = mode;
  const PositionGrid grid{2, 2};

  for (uint64_t attempt = 0;; ++attempt) {
    VVT_CHECK(attempt < 32, "no kink-free seed found for the block check");
    Rng rng(seed + attempt * 1000003);
    BlockParams<double> params = make_block_params<double>(cfg);
    init_block_params(params, rng, 0.5);
    Tensor<double> x({grid.tokens(), cfg.dim});
    fill_normal(x, rng);
    Tensor<double> probe({grid.tokens(), cfg.dim});
    fill_normal(probe, rng);

    BlockCache<double> cache;
    block_forward_one(x, grid, params, cfg, &cache);
    if (mode != AttentionMode::softmax_oracle &&
        attention_kink_risk(cache.mha, kKinkGuard)) {
      continue;
    }

    BlockParams<double> grads = make_block_params<double>(cfg);
    Tensor<double> dx = block_backward_one(probe, cache, params, cfg, grads);

    std::vector<Tensor<double>*> inputs = {&x};
    std::vector<const Tensor<double>*> analytic = {&dx};
    for_each_param(params, "", [&](const std::string&, Tensor<double>& t) {
      inputs.push_back(&t);
    });
    for_each_param(grads, "", [&](const std::string&, Tensor<double>& t) {
      analytic.push_back(&t);
    });

    auto loss = [&]() {
      return weighted_sum(block_forward_one(x, grid, params, cfg), probe);
    };
    GradCheckReport rep =
        finite_difference_check<double>(inputs, analytic, loss, step);
    rep.name = "block/" + mode_name(mode);
    rep.resampled = static_cast<int64_t>(attempt);
    return rep;
  }
}

template <typename T>
bool model_kink_risk(const SampleCache<T>& cache, double guard) {
  for (const StageCache<T>& sc : cache.stages)
    for (const BlockCache<T>& bc : sc.blocks)
      if (attention_kink_risk(bc.mha, guard)) return true;
  return false;
}

/// Two-block miniature pyramid (depths 1,1,0,0 at 1/8 width) checked end to
/// end: classifier head included, every parameter tensor subsampled.
inline GradCheckReport grad_check_mini_backbone(uint64_t seed,
                                                AttentionMode mode,
                                                double step = 1e-5,
                                                int64_t coords_per_tensor = 160) {
  ModelConfig cfg;
  cfg.spec = scale_variant(make_variant("tiny"), 8,
                           std::array<int64_t, 4>{1, 1, 0, 0});
  cfg.class_count = 4;
  cfg.mode = mode;

  for (uint64_t attempt = 0;; ++attempt) {
    VVT_CHECK(attempt < 32, "no kink-free seed found for the backbone check");
    Model<double> model = build_model<double>(cfg, seed + attempt * 7919);
    Rng rng(seed + attempt * 104729 + 1);
    Tensor<double> img({int64_t(3), int64_t(32), int64_t(32)});
    fill_uniform(img, rng, -1.0, 1.0);
    Tensor<double> probe({int64_t(1), cfg.class_count});
    fill_normal(probe, rng);

    SampleCache<double> cache;
    model_forward_one(img, model, &cache);
    if (mode != AttentionMode::softmax_oracle &&
        model_kink_risk(cache, kKinkGuard)) {
      continue;
    }

    ModelParams<double> grads = make_model_params<double>(cfg);
    model_backward_one(probe, cache, model, grads);

    std::vector<Tensor<double>*> inputs;
    std::vector<const Tensor<double>*> analytic;
    for_each_param(model.params, [&](const std::string&, Tensor<double>& t) {
      inputs.push_back(&t);
    });
    for_each_param(grads, [&](const std::string&, Tensor<double>& t) {
      analytic.push_back(&t);
    });

    auto loss = [&]() {
      return weighted_sum(model_forward_one(img, model), probe);
    };
    GradCheckReport rep = finite_difference_check<double>(
        inputs, analytic, loss, step, coords_per_tensor, seed);
    rep.name = "mini-backbone/" + mode_name(mode);
    rep.resampled = static_cast<int64_t>(attempt);
    return rep;
  }
}

/// Attention-level, block-level and backbone-level gradient checks at the
/// given tolerance, three seeds each.
inline SuiteResult gradient_suite(uint64_t seed, double tol = 1e-5,
                                  BackwardFault fault = BackwardFault::none) {
  SuiteResult res;
  res.suite = "gradients";

  for (AttentionMode mode :
       {AttentionMode::vicinity2d, AttentionMode::locality1d,
        AttentionMode::no_locality}) {
    double worst = 0.0;
    for (uint64_t s = 0; s < 3; ++s) {
      Rng rng(seed + s);
      const PositionGrid grid{4, 4};
      int64_t resampled = 0;
      Tensor<double> q =
          sample_smooth_gaussian<double>(16, 4, rng, kKinkGuard, &resampled);
      Tensor<double> k =
          sample_smooth_gaussian<double>(16, 4, rng, kKinkGuard, &resampled);
      Tensor<double> v({16, 4}), probe({16, 4});
      fill_normal(v, rng);
      fill_normal(probe, rng);
      LinearAttentionCache<double> cache;
      linear_attention(q, k, v, grid, mode, 1e-6, &cache);
      AttentionGrads<double> grads =
          linear_attention_backward(probe, cache, fault);
      auto loss = [&]() {
        return weighted_sum(linear_attention(q, k, v, grid, mode, 1e-6),
                            probe);
      };
      GradCheckReport rep = finite_difference_check<double>(
          {&q, &k, &v}, {&grads.dq, &grads.dk, &grads.dv}, loss);
      worst = std::max(worst, rep.max_rel_err);
    }
    res.checks.push_back({"linear/" + mode_name(mode), worst <= tol, worst,
                          tol, "3 seeds"});
  }

  {
    Rng rng(seed + 11);
    Tensor<double> q({8, 4}), k({8, 4}), v({8, 4}), probe({8, 4});
    fill_normal(q, rng);
    fill_normal(k, rng);
    fill_normal(v, rng);
    fill_normal(probe, rng);
    SoftmaxAttentionCache<double> cache;
    softmax_attention(q, k, v, &cache);
    AttentionGrads<double> grads = softmax_attention_backward(probe, cache);
    auto loss = [&]() {
      return weighted_sum(softmax_attention(q, k, v), probe);
    };
    GradCheckReport rep = finite_difference_check<double>(
        {&q, &k, &v}, {&grads.dq, &grads.dk, &grads.dv}, loss);
    res.checks.push_back(
        {"softmax", rep.max_rel_err <= tol, rep.max_rel_err, tol, ""});
  }

  {
    double worst = 0.0;
    for (uint64_t s = 0; s < 3; ++s)
      worst = std::max(
          worst,
          grad_check_block(seed + s, AttentionMode::vicinity2d).max_rel_err);
    res.checks.push_back({"block", worst <= tol, worst, tol, "3 seeds"});
  }

  {
    double worst = 0.0;
    for (uint64_t s = 0; s < 3; ++s)
      worst = std::max(worst, grad_check_mini_backbone(
                                  seed + s, AttentionMode::vicinity2d)
                                  .max_rel_err);
    res.checks.push_back(
        {"mini-backbone", worst <= tol, worst, tol, "3 seeds, subsampled"});
  }
  return res;
}

}  // namespace vvt
