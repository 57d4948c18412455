#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "vvt/block.hpp"
#include "vvt/grid.hpp"
#include "vvt/layers.hpp"
#include "vvt/tensor.hpp"

namespace vvt {

struct StageSpec {
  int64_t channels = 0;   // C_k
  int64_t patch = 2;      // P_k (embedding stride)
  int64_t fr_ratio = 2;   // R_k
  int64_t heads = 1;      // H_k
  int64_t expansion = 4;  // E_k
  int64_t depth = 1;      // L_k
};

struct VariantSpec {
  std::string name;
  std::array<StageSpec, 4> stages;
};

/// Four-stage pyramid descriptions: channels (96,160,320,512), patch sizes
/// (4,2,2,2), heads (1,2,5,8), R = 2 everywhere; depths and expansions vary
/// per variant.
inline VariantSpec make_variant(const std::string& name) {
  static constexpr int64_t kChannels[4] = {96, 160, 320, 512};
  static constexpr int64_t kPatch[4] = {4, 2, 2, 2};
  static constexpr int64_t kHeads[4] = {1, 2, 5, 8};
  std::array<int64_t, 4> depths, expansions;
  if (name == "tiny") {
    depths = {2, 2, 2, 2};
    expansions = {8, 8, 4, 4};
  } else if (name == "small") {
    depths = {3, 3, 9, 3};
    expansions = {8, 8, 4, 4};
  } else if (name == "medium") {
    depths = {3, 3, 27, 3};
    expansions = {8, 8, 4, 4};
  } else if (name == "large") {
    depths = {4, 4, 36, 4};
    expansions = {4, 4, 4, 4};
  } else {
    fail("unknown variant '" + name +
         "' (expected tiny, small, medium, large)");
  }
  VariantSpec spec;
  spec.name = name;
  for (int k = 0; k < 4; ++k)
    spec.stages[k] = {kChannels[k], kPatch[k], 2,
                      kHeads[k],    expansions[k], depths[k]};
  return spec;
}

/// Shrinks a variant for desk-scale runs: divides channel widths and
/// optionally overrides depths or the FR ratio everywhere.
inline VariantSpec scale_variant(
    VariantSpec spec, int64_t channel_div,
    std::optional<std::array<int64_t, 4>> depths = std::nullopt,
    std::optional<int64_t> fr_ratio = std::nullopt) {
  VVT_CHECK(channel_div >= 1, "channel divisor must be >= 1");
  if (channel_div > 1) spec.name += "/" + std::to_string(channel_div);
  for (int k = 0; k < 4; ++k) {
    StageSpec& s = spec.stages[k];
    VVT_CHECK(s.channels % channel_div == 0,
              "stage channels not divisible by " + std::to_string(channel_div));
    s.channels /= channel_div;
    if (depths) s.depth = (*depths)[k];
    if (fr_ratio) s.fr_ratio = *fr_ratio;
    VVT_CHECK(s.channels % (s.fr_ratio * s.heads) == 0,
              "scaled stage " + std::to_string(k + 1) +
                  " violates C mod (R*H) = 0");
  }
  return spec;
}

enum class PatchMode {
  overlap,  // conv stem: stage 1 kernel 7/stride 4/pad 3, later stages 3/2/1
  point,    // ablation: 1x1 kernel at the patch stride (plain sampling)
};

struct ModelConfig {
  VariantSpec spec;
  int64_t class_count = 1000;
  AttentionMode mode = AttentionMode::vicinity2d;
  bool fpc_enabled = true;
  bool post_norm = false;
  PatchMode patch_mode = PatchMode::overlap;

  BlockConfig block_config(int stage) const {
    const StageSpec& s = spec.stages[static_cast<size_t>(stage)];
    BlockConfig cfg;
    cfg.dim = s.channels;
    cfg.heads = s.heads;
    cfg.fr_ratio = s.fr_ratio;
    cfg.expansion = s.expansion;
    cfg.mode = mode;
    cfg.fpc_enabled = fpc_enabled;
    cfg.post_norm = post_norm;
    return cfg;
  }

  ConvSpec conv_spec(int stage) const {
    const StageSpec& s = spec.stages[static_cast<size_t>(stage)];
    ConvSpec cs;
    cs.in_ch = stage == 0 ? 3 : spec.stages[static_cast<size_t>(stage - 1)].channels;
    cs.out_ch = s.channels;
    if (patch_mode == PatchMode::point) {
      cs.kernel = 1;
      cs.stride = s.patch;
      cs.pad = 0;
    } else if (stage == 0) {
      cs.kernel = 7;
      cs.stride = 4;
      cs.pad = 3;
    } else {
      cs.kernel = 3;
      cs.stride = 2;
      cs.pad = 1;
    }
    return cs;
  }

  void validate() const {
    VVT_CHECK(class_count >= 2, "need at least two classes");
    for (int k = 0; k < 4; ++k) block_config(k).validate();
  }
};

template <typename T>
struct StageParams {
  Tensor<T> embed_w;  // (Cin*k*k, C)
  Tensor<T> embed_b;  // (C)
  Tensor<T> embed_gamma, embed_beta;
  std::vector<BlockParams<T>> blocks;
};

template <typename T>
struct ModelParams {
  std::array<StageParams<T>, 4> stages;
  Tensor<T> head_gamma, head_beta;  // final norm over stage-4 channels
  Tensor<T> cls_w;                  // (C4, classes)
  Tensor<T> cls_b;                  // (classes)
};

template <typename T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;
};

template <typename T, typename F>
void for_each_param(ModelParams<T>& p, F&& f) {
  for (int k = 0; k < 4; ++k) {
    StageParams<T>& s = p.stages[static_cast<size_t>(k)];
    const std::string prefix = "stage" + std::to_string(k + 1) + ".";
    f(prefix + "embed.w", s.embed_w);
    f(prefix + "embed.b", s.embed_b);
    f(prefix + "embed.gamma", s.embed_gamma);
    f(prefix + "embed.beta", s.embed_beta);
    for (size_t b = 0; b < s.blocks.size(); ++b)
      for_each_param(s.blocks[b], prefix + "block" + std::to_string(b) + ".",
                     f);
  }
  f("head.gamma", p.head_gamma);
  f("head.beta", p.head_beta);
  f("head.cls_w", p.cls_w);
  f("head.cls_b", p.cls_b);
}

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  for (int k = 0; k < 4; ++k) {
    const StageSpec& s = cfg.spec.stages[static_cast<size_t>(k)];
    const ConvSpec cs = cfg.conv_spec(k);
    StageParams<T>& sp = p.stages[static_cast<size_t>(k)];
    sp.embed_w = Tensor<T>({cs.in_ch * cs.kernel * cs.kernel, cs.out_ch});
    sp.embed_b = Tensor<T>({cs.out_ch});
    sp.embed_gamma = Tensor<T>({cs.out_ch});
    sp.embed_beta = Tensor<T>({cs.out_ch});
    sp.blocks.reserve(static_cast<size_t>(s.depth));
    for (int64_t b = 0; b < s.depth; ++b)
      sp.blocks.push_back(make_block_params<T>(cfg.block_config(k)));
  }
  const int64_t c4 = cfg.spec.stages[3].channels;
  p.head_gamma = Tensor<T>({c4});
  p.head_beta = Tensor<T>({c4});
  p.cls_w = Tensor<T>({c4, cfg.class_count});
  p.cls_b = Tensor<T>({cfg.class_count});
  return p;
}

/// Truncated normal (sigma 0.02) for weights, zeros for biases, ones for
/// normalization scales.
template <typename T>
void init_model_params(ModelParams<T>& p, Rng& rng) {
  for (int k = 0; k < 4; ++k) {
    StageParams<T>& sp = p.stages[static_cast<size_t>(k)];
    fill_trunc_normal(sp.embed_w, rng);
    sp.embed_b.fill(T(0));
    sp.embed_gamma.fill(T(1));
    sp.embed_beta.fill(T(0));
    for (auto& bp : sp.blocks) init_block_params(bp, rng);
  }
  p.head_gamma.fill(T(1));
  p.head_beta.fill(T(0));
  fill_trunc_normal(p.cls_w, rng);
  p.cls_b.fill(T(0));
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  Model<T> m;
  m.config = cfg;
  m.params = make_model_params<T>(cfg);
  Rng rng(seed);
  init_model_params(m.params, rng);
  return m;
}

template <typename T>
Model<T> build_variant(const std::string& name, int64_t class_count,
                       AttentionMode mode = AttentionMode::vicinity2d,
                       bool fpc_enabled = true, uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.spec = make_variant(name);
  cfg.class_count = class_count;
  cfg.mode = mode;
  cfg.fpc_enabled = fpc_enabled;
  return build_model<T>(cfg, seed);
}

/// Closed-form parameter count; the materialized tally must match exactly.
inline int64_t count_params(const ModelConfig& cfg) {
  int64_t total = 0;
  for (int k = 0; k < 4; ++k) {
    const StageSpec& s = cfg.spec.stages[static_cast<size_t>(k)];
    const ConvSpec cs = cfg.conv_spec(k);
    total += cs.in_ch * cs.kernel * cs.kernel * cs.out_ch + cs.out_ch;  // conv
    total += 2 * cs.out_ch;                                            // norm
    const int64_t c = s.channels, cr = c / s.fr_ratio,
                  ec = s.expansion * c;
    int64_t per_block = 0;
    per_block += 3 * (c * cr + cr);  // Q, K, V projections
    per_block += cr * c + c;         // W_O
    per_block += 2 * (c * c + c);    // FPC linears
    per_block += c * ec + ec + ec * c + c;  // FFN
    per_block += 4 * c;                     // two norms
    total += s.depth * per_block;
  }
  const int64_t c4 = cfg.spec.stages[3].channels;
  total += 2 * c4;                                // head norm
  total += c4 * cfg.class_count + cfg.class_count;  // classifier
  return total;
}

template <typename T>
int64_t param_tally(ModelParams<T>& p) {
  int64_t total = 0;
  for_each_param(p, [&](const std::string&, Tensor<T>& t) { total += t.numel(); });
  return total;
}

// ---------------------------------------------------------------------------
// Forward / backward over one (3, H, W) sample.
// ---------------------------------------------------------------------------

template <typename T>
struct StageCache {
  ConvCache<T> conv;
  LayerNormCache<T> embed_norm;
  Tensor<T> embed_tokens;  // conv output, input to the embed norm
  std::vector<BlockCache<T>> blocks;
  PositionGrid grid;
};

template <typename T>
struct SampleCache {
  std::array<StageCache<T>, 4> stages;
  LayerNormCache<T> head_norm;
  Tensor<T> stage4_tokens;  // input to the head norm
  Tensor<T> head_normed;    // (N4, C4)
  Tensor<T> pooled;         // (1, C4)
};

template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& tokens, const PositionGrid& grid) {
  const int64_t c = tokens.dim(1);
  Tensor<T> img({c, grid.rows, grid.cols});
  for (int64_t u = 0; u < grid.rows; ++u)
    for (int64_t r = 0; r < grid.cols; ++r) {
      const T* row = tokens.row(u * grid.cols + r);
      for (int64_t ch = 0; ch < c; ++ch) img(ch, u, r) = row[ch];
    }
  return img;
}

template <typename T>
Tensor<T> image_to_tokens(const Tensor<T>& img) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> tokens({h * w, c});
  for (int64_t u = 0; u < h; ++u)
    for (int64_t r = 0; r < w; ++r) {
      T* row = tokens.row(u * w + r);
      for (int64_t ch = 0; ch < c; ++ch) row[ch] = img(ch, u, r);
    }
  return tokens;
}

/// Overlapping convolutional embedding followed by layer norm. The input
/// spatial extent must be divisible by the stage stride so the token grid is
/// exactly (h/P, w/P).
template <typename T>
Tensor<T> patch_embed_one(const Tensor<T>& img, const ModelConfig& cfg,
                          int stage, const StageParams<T>& sp,
                          PositionGrid& grid_out,
                          StageCache<std::type_identity_t<T>>* cache = nullptr) {
  const ConvSpec cs = cfg.conv_spec(stage);
  const int64_t h = img.dim(1), w = img.dim(2);
  VVT_CHECK(h % cs.stride == 0 && w % cs.stride == 0,
            "stage " + std::to_string(stage + 1) + " input " +
                std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by stride " + std::to_string(cs.stride));
  Tensor<T> tokens =
      conv2d_tokens(img, sp.embed_w, sp.embed_b, cs, cache ? &cache->conv : nullptr);
  grid_out = PositionGrid{h / cs.stride, w / cs.stride};
  if (cache) cache->embed_tokens = tokens;
  Tensor<T> normed = layer_norm(tokens, sp.embed_gamma, sp.embed_beta,
                                cache ? &cache->embed_norm : nullptr);
  if (cache) cache->grid = grid_out;
  return normed;
}

/// Runs the pyramid over one sample; returns per-stage token features.
template <typename T>
std::array<Tensor<T>, 4> backbone_forward_one(
    const Tensor<T>& image, const Model<T>& m,
    std::array<PositionGrid, 4>& grids,
    SampleCache<std::type_identity_t<T>>* cache = nullptr,
    const ForwardCtx& ctx = {}, std::type_identity_t<T> eps = 1e-6) {
  VVT_CHECK(image.rank() == 3 && image.dim(0) == 3,
            "backbone input must be (3, H, W)");
  VVT_CHECK(all_finite(image), "backbone input contains non-finite values");
  const int64_t h = image.dim(1), w = image.dim(2);
  VVT_CHECK(h >= 32 && w >= 32 && h % 32 == 0 && w % 32 == 0,
            "input spatial dims must be >= 32 and divisible by 32, got " +
                std::to_string(h) + "x" + std::to_string(w));

  std::array<Tensor<T>, 4> features;
  Tensor<T> current = image;
  for (int k = 0; k < 4; ++k) {
    StageCache<T>* sc = cache ? &cache->stages[static_cast<size_t>(k)] : nullptr;
    PositionGrid grid;
    Tensor<T> tokens = patch_embed_one(current, m.config, k,
                                       m.params.stages[static_cast<size_t>(k)],
                                       grid, sc);
    const BlockConfig bc = m.config.block_config(k);
    const auto& bps = m.params.stages[static_cast<size_t>(k)].blocks;
    if (sc) sc->blocks.resize(bps.size());
    for (size_t b = 0; b < bps.size(); ++b)
      tokens = block_forward_one(tokens, grid, bps[b], bc,
                                 sc ? &sc->blocks[b] : nullptr, ctx, eps);
    grids[static_cast<size_t>(k)] = grid;
    features[static_cast<size_t>(k)] = tokens;
    if (k < 3) current = tokens_to_image(tokens, grid);
  }
  return features;
}

/// Classification head: final layer norm, global average pool, linear.
template <typename T>
Tensor<T> classify_one(const Tensor<T>& stage4_tokens, const Model<T>& m,
                       SampleCache<std::type_identity_t<T>>* cache = nullptr) {
  Tensor<T> normed = layer_norm(stage4_tokens, m.params.head_gamma,
                                m.params.head_beta,
                                cache ? &cache->head_norm : nullptr);
  Tensor<T> pooled = mean_pool_rows(normed);
  Tensor<T> logits = linear_forward(pooled, m.params.cls_w, m.params.cls_b);
  if (cache) {
    cache->stage4_tokens = stage4_tokens;
    cache->head_normed = std::move(normed);
    cache->pooled = std::move(pooled);
  }
  return logits;  // (1, classes)
}

template <typename T>
Tensor<T> model_forward_one(const Tensor<T>& image, const Model<T>& m,
                            SampleCache<std::type_identity_t<T>>* cache = nullptr,
                            const ForwardCtx& ctx = {},
                            std::type_identity_t<T> eps = 1e-6) {
  std::array<PositionGrid, 4> grids;
  auto features = backbone_forward_one(image, m, grids, cache, ctx, eps);
  return classify_one(features[3], m, cache);
}

/// Accumulates parameter gradients for one sample given dlogits (1, classes).
template <typename T>
void model_backward_one(const Tensor<T>& dlogits, const SampleCache<T>& cache,
                        const Model<T>& m, ModelParams<T>& g) {
  Tensor<T> dpooled = linear_backward(dlogits, cache.pooled, m.params.cls_w,
                                      g.cls_w, g.cls_b);
  Tensor<T> dnormed =
      mean_pool_rows_backward(dpooled, cache.head_normed.dim(0));
  Tensor<T> dtokens = layer_norm_backward(dnormed, cache.head_norm,
                                          m.params.head_gamma, g.head_gamma,
                                          g.head_beta);

  for (int k = 3; k >= 0; --k) {
    const StageCache<T>& sc = cache.stages[static_cast<size_t>(k)];
    const StageParams<T>& sp = m.params.stages[static_cast<size_t>(k)];
    StageParams<T>& sg = g.stages[static_cast<size_t>(k)];
    const BlockConfig bc = m.config.block_config(k);
    for (int64_t b = static_cast<int64_t>(sc.blocks.size()) - 1; b >= 0; --b)
      dtokens = block_backward_one(dtokens, sc.blocks[static_cast<size_t>(b)],
                                   sp.blocks[static_cast<size_t>(b)], bc,
                                   sg.blocks[static_cast<size_t>(b)]);
    // embed norm, then the convolution
    Tensor<T> dconv_tokens =
        layer_norm_backward(dtokens, sc.embed_norm, sp.embed_gamma,
                            sg.embed_gamma, sg.embed_beta);
    Tensor<T> dimg =
        conv2d_tokens_backward(dconv_tokens, sc.conv, sp.embed_w,
                               m.config.conv_spec(k), sg.embed_w, sg.embed_b);
    if (k > 0) dtokens = image_to_tokens(dimg);
  }
}

/// Batched wrapper matching the multi-scale interface: four TokenGrids.
template <typename T>
std::array<TokenGrid<T>, 4> backbone_forward(const Tensor<T>& images,
                                             const Model<T>& m,
                                             const ForwardCtx& ctx = {},
                                             std::type_identity_t<T> eps = 1e-6) {
  VVT_CHECK(images.rank() == 4 && images.dim(1) == 3,
            "backbone batch input must be (B, 3, H, W)");
  const int64_t batch = images.dim(0);
  std::array<TokenGrid<T>, 4> out;
  for (int64_t s = 0; s < batch; ++s) {
    Tensor<T> img({int64_t(3), images.dim(2), images.dim(3)});
    std::copy(&images(s, 0, 0, 0), &images(s, 0, 0, 0) + img.numel(),
              img.data());
    std::array<PositionGrid, 4> grids;
    auto feats = backbone_forward_one(img, m, grids, nullptr, ctx, eps);
    for (int k = 0; k < 4; ++k) {
      auto& tg = out[static_cast<size_t>(k)];
      if (s == 0) {
        tg.grid = grids[static_cast<size_t>(k)];
        tg.data = Tensor<T>({batch, feats[static_cast<size_t>(k)].dim(0),
                             feats[static_cast<size_t>(k)].dim(1)});
      }
      std::copy(feats[static_cast<size_t>(k)].data(),
                feats[static_cast<size_t>(k)].data() +
                    feats[static_cast<size_t>(k)].numel(),
                &tg.data(s, 0, 0));
    }
  }
  return out;
}

/// Batched logits (B, classes).
template <typename T>
Tensor<T> classify(const Tensor<T>& images, const Model<T>& m,
                   const ForwardCtx& ctx = {},
                   std::type_identity_t<T> eps = 1e-6) {
  const int64_t batch = images.dim(0);
  Tensor<T> logits({batch, m.config.class_count});
  for (int64_t s = 0; s < batch; ++s) {
    Tensor<T> img({int64_t(3), images.dim(2), images.dim(3)});
    std::copy(&images(s, 0, 0, 0), &images(s, 0, 0, 0) + img.numel(),
              img.data());
    Tensor<T> row = model_forward_one(img, m, nullptr, ctx, eps);
    std::copy(row.data(), row.data() + row.numel(), logits.row(s));
  }
  return logits;
}

}  // namespace vvt
