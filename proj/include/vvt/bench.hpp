#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vvt/backbone.hpp"
#include "vvt/flops.hpp"

namespace vvt {

struct CurvePoint {
  std::string mode;
  int64_t resolution = 0;
  double gflops = 0.0;       // full-model analytic cost
  double attn_gflops = 0.0;  // attention-contraction analytic cost
  double wall_ms = std::numeric_limits<double>::quiet_NaN();  // NaN = OOM/skipped
  double peak_bytes = 0.0;   // estimated activation footprint
};

struct SweepOptions {
  int repeats = 3;
  double mem_budget_bytes = 8.0 * 1024.0 * 1024.0 * 1024.0;
  uint64_t seed = 0;
  bool measure = true;  // analytic-only sweeps skip the forward passes
};

/// Rough single-sample activation footprint: per stage, a handful of (N, C)
/// token buffers plus the widest FFN intermediate, plus the attention
/// workspace (expanded features for the kernelized modes, one N x N score
/// matrix for softmax), plus the input image.
inline double estimate_peak_bytes(const ModelConfig& cfg, int64_t res,
                                  int64_t dtype_bytes = 4) {
  double peak = 3.0 * static_cast<double>(res) * static_cast<double>(res);
  int64_t side = res;
  double worst_stage = 0.0;
  for (int k = 0; k < 4; ++k) {
    const StageSpec& s = cfg.spec.stages[static_cast<size_t>(k)];
    side /= cfg.conv_spec(k).stride;
    const double n = static_cast<double>(side * side);
    const double c = static_cast<double>(s.channels);
    const double cr = c / static_cast<double>(s.fr_ratio);
    double stage = n * c * 4.0 + n * c * static_cast<double>(s.expansion);
    if (cfg.mode == AttentionMode::softmax_oracle)
      stage += n * n;  // one head's scores at a time
    else
      stage += 2.0 * n * cr * static_cast<double>(expanded_width(1, cfg.mode));
    worst_stage = std::max(worst_stage, stage);
  }
  return (peak + worst_stage) * static_cast<double>(dtype_bytes);
}

/// Least-squares slope of ln(y) against ln(x).
inline double fit_loglog_slope(const std::vector<double>& x,
                               const std::vector<double>& y) {
  VVT_CHECK(x.size() == y.size() && x.size() >= 2,
            "slope fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    VVT_CHECK(x[i] > 0 && y[i] > 0, "slope fit needs positive samples");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Median wall time of `repeats` forward passes after one discarded warmup.
template <typename T>
double time_forward_ms(const Model<T>& m, int64_t res, int repeats,
                       uint64_t seed) {
  Rng rng(seed);
  Tensor<T> img({int64_t(3), res, res});
  fill_uniform(img, rng, -1.0, 1.0);
  std::array<PositionGrid, 4> grids;
  auto run = [&]() {
    auto feats = backbone_forward_one(img, m, grids);
    Tensor<T> logits = classify_one(feats[3], m);
    return logits[0];
  };
  volatile T sink = run();  // warmup
  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = run();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  (void)sink;
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

/// Resolution sweep: analytic costs always, wall-time medians when the
/// estimated footprint fits the budget and the explicit path's token cap is
/// respected. Over-budget quadratic points become sentinel rows (wall NaN)
/// instead of failing the sweep. Timed sections run strictly one at a time.
inline std::vector<CurvePoint> sweep(const ModelConfig& base,
                                     const std::vector<AttentionMode>& modes,
                                     std::vector<int64_t> resolutions,
                                     const SweepOptions& opts = {}) {
  VVT_CHECK(opts.repeats >= 3, "sweep needs repeats >= 3");
  VVT_CHECK(!modes.empty() && !resolutions.empty(),
            "sweep needs at least one mode and resolution");
  std::sort(resolutions.begin(), resolutions.end());
  for (int64_t r : resolutions)
    VVT_CHECK(r >= 32 && r % 32 == 0,
              "resolution " + std::to_string(r) + " not divisible by 32");

  std::vector<CurvePoint> points;
  for (AttentionMode mode : modes) {
    ModelConfig cfg = base;
    cfg.mode = mode;
    Model<float> model;
    if (opts.measure) model = build_model<float>(cfg, opts.seed);
    for (int64_t res : resolutions) {
      CurvePoint p;
      p.mode = mode_name(mode);
      p.resolution = res;
      const FlopReport rep = flop_model(cfg, res, res);
      p.gflops = rep.gflops();
      p.attn_gflops = rep.attention_macs() / 1e9;
      p.peak_bytes = estimate_peak_bytes(cfg, res);

      const int64_t stage1_tokens = (res / 4) * (res / 4);
      const bool over_cap = mode == AttentionMode::softmax_oracle &&
                            stage1_tokens > kQuadraticTokenCap;
      const bool over_budget = p.peak_bytes > opts.mem_budget_bytes;
      if (opts.measure && !over_cap && !over_budget)
        p.wall_ms = time_forward_ms(model, res, opts.repeats, opts.seed + 1);
      points.push_back(std::move(p));
    }
  }
  return points;
}

inline void write_sweep_csv(const std::string& path,
                            const std::vector<CurvePoint>& points) {
  std::ofstream out(path);
  VVT_CHECK(out.good(), "cannot open '" + path + "' for writing");
  out << "mode,resolution,gflops,wall_ms,peak_bytes\n";
  char buf[64];
  for (const CurvePoint& p : points) {
    out << p.mode << ',' << p.resolution << ',';
    std::snprintf(buf, sizeof buf, "%.6f", p.gflops);
    out << buf << ',';
    if (std::isnan(p.wall_ms)) {
      out << "NA";
    } else {
      std::snprintf(buf, sizeof buf, "%.3f", p.wall_ms);
      out << buf;
    }
    out << ',' << static_cast<int64_t>(p.peak_bytes) << '\n';
  }
}

struct ModeSlopes {
  std::string mode;
  double attention_vs_tokens = 0.0;  // analytic, all points
  double wall_vs_tokens = std::numeric_limits<double>::quiet_NaN();  // top 3
};

/// Log-log slopes per mode against stage-1 token count.
inline std::vector<ModeSlopes> sweep_slopes(
    const std::vector<CurvePoint>& points) {
  std::vector<ModeSlopes> out;
  std::vector<std::string> seen;
  for (const CurvePoint& p : points)
    if (std::find(seen.begin(), seen.end(), p.mode) == seen.end())
      seen.push_back(p.mode);
  for (const std::string& mode : seen) {
    std::vector<double> tokens, attn, wall_tokens, wall;
    for (const CurvePoint& p : points) {
      if (p.mode != mode) continue;
      const double n =
          static_cast<double>((p.resolution / 4) * (p.resolution / 4));
      tokens.push_back(n);
      attn.push_back(p.attn_gflops);
      if (!std::isnan(p.wall_ms)) {
        wall_tokens.push_back(n);
        wall.push_back(p.wall_ms);
      }
    }
    ModeSlopes s;
    s.mode = mode;
    s.attention_vs_tokens = fit_loglog_slope(tokens, attn);
    if (wall.size() >= 3) {
      std::vector<double> t3(wall_tokens.end() - 3, wall_tokens.end());
      std::vector<double> w3(wall.end() - 3, wall.end());
      s.wall_vs_tokens = fit_loglog_slope(t3, w3);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vvt
