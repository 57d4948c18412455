#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "vvt/backbone.hpp"

namespace vvt {

// Counting convention: one multiply-accumulate = 1 FLOP (the convention
// behind commonly reported backbone GFLOPs); normalizations, activations,
// bias adds and residual adds are tallied separately at 1 FLOP per element.
struct FlopEntry {
  double macs = 0.0;
  double elementwise = 0.0;

  double total() const { return macs + elementwise; }
  FlopEntry& operator+=(const FlopEntry& o) {
    macs += o.macs;
    elementwise += o.elementwise;
    return *this;
  }
};

struct StageFlops {
  int64_t tokens = 0;
  FlopEntry embed;      // patch embedding conv + its norm
  FlopEntry qkv;        // FRA projections, all blocks
  FlopEntry attention;  // attention contractions, all blocks of the stage
  FlopEntry out_proj;   // W_O
  FlopEntry fpc;        // feature preserving connection
  FlopEntry ffn;        // feed-forward
  FlopEntry glue;       // norms, residual adds

  FlopEntry total() const {
    FlopEntry t;
    t += embed;
    t += qkv;
    t += attention;
    t += out_proj;
    t += fpc;
    t += ffn;
    t += glue;
    return t;
  }
};

struct FlopReport {
  std::string variant;
  AttentionMode mode = AttentionMode::vicinity2d;
  bool fpc_enabled = true;
  int64_t height = 0, width = 0;
  std::array<StageFlops, 4> stages;
  FlopEntry head;

  double total_macs() const {
    double t = head.macs;
    for (const auto& s : stages) t += s.total().macs;
    return t;
  }
  double total_elementwise() const {
    double t = head.elementwise;
    for (const auto& s : stages) t += s.total().elementwise;
    return t;
  }
  double total_flops() const { return total_macs() + total_elementwise(); }
  double gflops() const { return total_flops() / 1e9; }

  /// Attention-contraction MACs only: exactly linear in token count for the
  /// kernelized modes and exactly quadratic for the softmax mode.
  double attention_macs() const {
    double t = 0.0;
    for (const auto& s : stages) t += s.attention.macs;
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["variant"] = variant;
    j["mode"] = mode_name(mode);
    j["fpc"] = fpc_enabled;
    j["input"] = {height, width};
    j["convention"] =
        "1 FLOP per multiply-add; elementwise ops 1 FLOP per element";
    auto entry = [](const FlopEntry& e) {
      return nlohmann::json{{"macs", e.macs}, {"elementwise", e.elementwise}};
    };
    for (int k = 0; k < 4; ++k) {
      const StageFlops& s = stages[static_cast<size_t>(k)];
      nlohmann::json js;
      js["tokens"] = s.tokens;
      js["embed"] = entry(s.embed);
      js["qkv"] = entry(s.qkv);
      js["attention"] = entry(s.attention);
      js["out_proj"] = entry(s.out_proj);
      js["fpc"] = entry(s.fpc);
      js["ffn"] = entry(s.ffn);
      js["glue"] = entry(s.glue);
      j["stages"].push_back(js);
    }
    j["head"] = entry(head);
    j["total_macs"] = total_macs();
    j["total_elementwise"] = total_elementwise();
    j["gflops"] = gflops();
    j["attention_macs"] = attention_macs();
    return j;
  }
};

/// Closed-form multiply-add and elementwise counts for one forward pass at
/// the given input size, per stage and submodule.
inline FlopReport flop_model(const ModelConfig& cfg, int64_t height,
                             int64_t width) {
  cfg.validate();
  VVT_CHECK(height >= 32 && width >= 32 && height % 32 == 0 && width % 32 == 0,
            "flop model input must be >= 32 and divisible by 32");
  FlopReport rep;
  rep.variant = cfg.spec.name;
  rep.mode = cfg.mode;
  rep.fpc_enabled = cfg.fpc_enabled;
  rep.height = height;
  rep.width = width;

  int64_t h = height, w = width;
  for (int k = 0; k < 4; ++k) {
    const StageSpec& s = cfg.spec.stages[static_cast<size_t>(k)];
    const ConvSpec cs = cfg.conv_spec(k);
    h /= cs.stride;
    w /= cs.stride;
    const double n = static_cast<double>(h * w);
    const double c = static_cast<double>(s.channels);
    const double cr = c / static_cast<double>(s.fr_ratio);
    const double heads = static_cast<double>(s.heads);
    const double dh = cr / heads;
    const double ec = static_cast<double>(s.expansion) * c;
    const double depth = static_cast<double>(s.depth);
    StageFlops& sf = rep.stages[static_cast<size_t>(k)];
    sf.tokens = h * w;

    sf.embed.macs = n * c * static_cast<double>(cs.in_ch) *
                    static_cast<double>(cs.kernel * cs.kernel);
    sf.embed.elementwise = n * c /*bias*/ + n * c /*norm*/;

    sf.qkv.macs = depth * 3.0 * n * c * cr;
    sf.qkv.elementwise = depth * 3.0 * n * cr;

    if (cfg.mode == AttentionMode::softmax_oracle) {
      // per head: Q K^T (N^2 dh) + P V (N^2 dh); softmax rows ~3 ops/entry
      sf.attention.macs = depth * heads * 2.0 * n * n * dh;
      sf.attention.elementwise = depth * heads * 4.0 * n * n;
    } else {
      const double dp =
          dh * static_cast<double>(expanded_width(1, cfg.mode));
      // per head: K'^T V summary + Q' summary + the denominator dot
      sf.attention.macs = depth * heads * (2.0 * n * dp * dh + n * dp);
      // expansion multiplies for Q' and K', the key total, the divide
      sf.attention.elementwise =
          depth * heads * (2.0 * n * dp + n * dp + n * dh);
    }

    sf.out_proj.macs = depth * n * cr * c;
    sf.out_proj.elementwise = depth * n * c;

    if (cfg.fpc_enabled) {
      sf.fpc.macs = depth * 2.0 * c * c;
      sf.fpc.elementwise = depth * (n * c /*pool*/ + 3.0 * c /*bias+act*/);
    }

    sf.ffn.macs = depth * 2.0 * n * ec * c;
    sf.ffn.elementwise = depth * (2.0 * n * ec /*bias+gelu*/ + n * c /*bias*/);

    const double residuals = cfg.fpc_enabled ? 3.0 : 2.0;
    sf.glue.elementwise = depth * (2.0 * n * c /*norms*/ + residuals * n * c);
  }

  const double n4 = static_cast<double>(rep.stages[3].tokens);
  const double c4 = static_cast<double>(cfg.spec.stages[3].channels);
  rep.head.macs = c4 * static_cast<double>(cfg.class_count);
  rep.head.elementwise = n4 * c4 /*norm*/ + n4 * c4 /*pool*/ +
                         static_cast<double>(cfg.class_count) /*bias*/;
  return rep;
}

}  // namespace vvt
