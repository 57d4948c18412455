#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vvt/backbone.hpp"
#include "vvt/checkpoint.hpp"
#include "vvt/dataset.hpp"

namespace vvt {

struct TrainConfig {
  // model
  std::string variant = "tiny";
  int64_t channel_div = 1;
  std::optional<std::array<int64_t, 4>> depths;
  AttentionMode mode = AttentionMode::vicinity2d;
  bool fpc_enabled = true;
  int64_t fr_ratio = 0;  // 0 keeps the per-table default (2)
  // optimization
  double lr = 5e-4;
  double weight_decay = 0.05;
  double warmup_epochs = 1.0;
  int64_t total_epochs = 5;
  int64_t batch_size = 32;
  uint64_t seed = 42;
  double drop_rate = 0.0;
  bool augment_crop = false;
  bool augment_flip = false;
  // dataset
  std::string source = "synthetic";  // synthetic | cifar10 | cifar100
  std::string data_path;
  int64_t class_count = 8;
  int64_t side = 32;
  int64_t train_count = 512;
  int64_t val_count = 256;
  int64_t upscale = 0;  // target side in pixels; 0 feeds images natively
  // output
  std::string out_dir = "runs/run";

  void validate() const {
    // lr = 0 is allowed: the frozen-weights null-optimizer check relies on it
    VVT_CHECK(lr >= 0.0, "learning rate must be non-negative");
    VVT_CHECK(warmup_epochs >= 0.0 &&
                  warmup_epochs < static_cast<double>(total_epochs),
              "warmup_epochs must be in [0, total_epochs)");
    VVT_CHECK(total_epochs >= 1 && batch_size >= 1, "epochs/batch must be >= 1");
    VVT_CHECK(drop_rate >= 0.0 && drop_rate < 1.0, "drop_rate must be in [0, 1)");
    VVT_CHECK(source == "synthetic" || source == "cifar10" ||
                  source == "cifar100",
              "dataset source must be synthetic, cifar10 or cifar100");
    VVT_CHECK(class_count >= 2, "need at least two classes");
    if (upscale > 0)
      VVT_CHECK(upscale % 32 == 0,
                "upscale target side must be divisible by 32");
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.spec = scale_variant(
        make_variant(variant), channel_div, depths,
        fr_ratio > 0 ? std::optional<int64_t>(fr_ratio) : std::nullopt);
    mc.class_count = class_count;
    mc.mode = mode;
    mc.fpc_enabled = fpc_enabled;
    return mc;
  }
};

/// Linear warmup to `lr`, then cosine decay to zero.
inline double lr_at_step(const TrainConfig& cfg, int64_t step,
                         int64_t steps_per_epoch) {
  const int64_t total = cfg.total_epochs * steps_per_epoch;
  const int64_t warmup = static_cast<int64_t>(
      cfg.warmup_epochs * static_cast<double>(steps_per_epoch));
  if (warmup > 0 && step < warmup)
    return cfg.lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  const double progress =
      total == warmup
          ? 1.0
          : static_cast<double>(step - warmup) /
                static_cast<double>(total - warmup);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decoupled-weight-decay Adam. Decay applies to matrix-shaped parameters
/// (projections, convolutions); biases and norm parameters are exempt.
template <typename T>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  int64_t t = 0;
  std::vector<Tensor<T>> m, v;

  void init(ModelParams<T>& params) {
    m.clear();
    v.clear();
    for_each_param(params, [&](const std::string&, Tensor<T>& p) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    });
  }

  void step(ModelParams<T>& params, ModelParams<T>& grads, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    size_t idx = 0;
    std::vector<Tensor<T>*> gptrs;
    for_each_param(grads,
                   [&](const std::string&, Tensor<T>& g) { gptrs.push_back(&g); });
    for_each_param(params, [&](const std::string&, Tensor<T>& p) {
      Tensor<T>& g = *gptrs[idx];
      Tensor<T>& mi = m[idx];
      Tensor<T>& vi = v[idx];
      const bool decayed = p.rank() >= 2;
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mn = beta1 * static_cast<double>(mi[i]) + (1.0 - beta1) * gi;
        const double vn =
            beta2 * static_cast<double>(vi[i]) + (1.0 - beta2) * gi * gi;
        mi[i] = static_cast<T>(mn);
        vi[i] = static_cast<T>(vn);
        double update = (mn / bc1) / (std::sqrt(vn / bc2) + eps);
        if (decayed) update += weight_decay * static_cast<double>(p[i]);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * update);
      }
      ++idx;
    });
  }
};

struct EpochLog {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
};

inline void write_log_jsonl(const std::string& path,
                            const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  VVT_CHECK(out.good(), "cannot open '" + path + "' for writing");
  for (const EpochLog& e : log) {
    nlohmann::json j = {{"epoch", e.epoch},
                        {"lr", e.lr},
                        {"train_loss", e.train_loss},
                        {"val_top1", e.val_top1}};
    out << j.dump() << '\n';
  }
}

template <typename T>
double evaluate_top1(const Model<T>& model, const Dataset& ds) {
  VVT_CHECK(ds.count() > 0, "empty dataset");
  int64_t correct = 0;
  for (int64_t i = 0; i < ds.count(); ++i) {
    Tensor<T> img({int64_t(3), ds.side(), ds.side()});
    for (int64_t j = 0; j < img.numel(); ++j)
      img[j] = static_cast<T>(ds.images[i * img.numel() + j]);
    Tensor<T> logits = model_forward_one(img, model);
    int64_t arg = 0;
    for (int64_t c = 1; c < logits.numel(); ++c)
      if (logits[c] > logits[arg]) arg = c;
    if (static_cast<int>(arg) == ds.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.count());
}

namespace detail {

// Zero-pad by 4 and crop back at a random offset; optionally mirror.
inline Tensor<float> augment_image(const Tensor<float>& img, bool crop,
                                   bool flip, Rng& rng) {
  Tensor<float> out = img;
  const int64_t side = img.dim(1);
  if (crop) {
    const int64_t pad = 4;
    const int64_t oy = rng.integer(2 * pad + 1) - pad;
    const int64_t ox = rng.integer(2 * pad + 1) - pad;
    Tensor<float> shifted({int64_t(3), side, side});
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
          const int64_t sy = y + oy, sx = x + ox;
          shifted(c, y, x) = (sy >= 0 && sy < side && sx >= 0 && sx < side)
                                 ? out(c, sy, sx)
                                 : 0.0f;
        }
    out = std::move(shifted);
  }
  if (flip && rng.integer(2) == 1) {
    Tensor<float> mirrored({int64_t(3), side, side});
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x)
          mirrored(c, y, x) = out(c, y, side - 1 - x);
    out = std::move(mirrored);
  }
  return out;
}

template <typename T>
void zero_params(ModelParams<T>& g) {
  for_each_param(g, [](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config files. Unknown keys are hard errors so ablation typos cannot pass
// silently.
// ---------------------------------------------------------------------------

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const std::string& k : allowed) known = known || k == it.key();
    if (!known) {
      std::string keys;
      for (const std::string& k : allowed) {
        if (!keys.empty()) keys += ", ";
        keys += k;
      }
      fail("unknown " + where + " key '" + it.key() + "'; valid keys: " + keys);
    }
  }
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  reject_unknown_keys(
      j,
      {"variant", "channel_div", "depths", "mode", "fpc", "fr_ratio", "lr",
       "weight_decay", "warmup_epochs", "total_epochs", "batch_size", "seed",
       "drop_rate", "augment", "dataset", "out_dir"},
      "config");
  TrainConfig cfg;
  if (j.contains("variant")) cfg.variant = j["variant"].get<std::string>();
  if (j.contains("channel_div")) cfg.channel_div = j["channel_div"].get<int64_t>();
  if (j.contains("depths")) {
    const auto d = j["depths"].get<std::vector<int64_t>>();
    VVT_CHECK(d.size() == 4, "depths must list four stages");
    cfg.depths = std::array<int64_t, 4>{d[0], d[1], d[2], d[3]};
  }
  if (j.contains("mode")) cfg.mode = parse_mode(j["mode"].get<std::string>());
  if (j.contains("fpc")) cfg.fpc_enabled = j["fpc"].get<bool>();
  if (j.contains("fr_ratio")) cfg.fr_ratio = j["fr_ratio"].get<int64_t>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("weight_decay"))
    cfg.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("warmup_epochs"))
    cfg.warmup_epochs = j["warmup_epochs"].get<double>();
  if (j.contains("total_epochs"))
    cfg.total_epochs = j["total_epochs"].get<int64_t>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int64_t>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("drop_rate")) cfg.drop_rate = j["drop_rate"].get<double>();
  if (j.contains("augment")) {
    reject_unknown_keys(j["augment"], {"crop", "flip"}, "augment");
    if (j["augment"].contains("crop"))
      cfg.augment_crop = j["augment"]["crop"].get<bool>();
    if (j["augment"].contains("flip"))
      cfg.augment_flip = j["augment"]["flip"].get<bool>();
  }
  if (j.contains("dataset")) {
    const nlohmann::json& d = j["dataset"];
    reject_unknown_keys(d,
                        {"source", "path", "class_count", "side",
                         "train_count", "val_count", "upscale"},
                        "dataset");
    if (d.contains("source")) cfg.source = d["source"].get<std::string>();
    if (d.contains("path")) cfg.data_path = d["path"].get<std::string>();
    if (d.contains("class_count"))
      cfg.class_count = d["class_count"].get<int64_t>();
    if (d.contains("side")) cfg.side = d["side"].get<int64_t>();
    if (d.contains("train_count"))
      cfg.train_count = d["train_count"].get<int64_t>();
    if (d.contains("val_count")) cfg.val_count = d["val_count"].get<int64_t>();
    if (d.contains("upscale")) cfg.upscale = d["upscale"].get<int64_t>();
  }
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  VVT_CHECK(in.good(), "cannot open config file '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in);
  return parse_train_config(j);
}

/// Builds the train/val splits described by the config. Synthetic data draws
/// train+val from one seeded stream (shared template set) and slices;
/// CIFAR paths resolve against VVT_DATA_DIR when relative.
inline std::pair<Dataset, Dataset> build_datasets(const TrainConfig& cfg) {
  auto apply_upscale = [&cfg](Dataset& ds) {
    if (cfg.upscale <= 0) return;
    VVT_CHECK(cfg.upscale % ds.side() == 0,
              "upscale target " + std::to_string(cfg.upscale) +
                  " is not a multiple of the native side " +
                  std::to_string(ds.side()));
    ds = upscale_dataset(ds, cfg.upscale / ds.side());
  };
  if (cfg.source == "synthetic") {
    Dataset full = synthetic_locality_dataset(
        cfg.seed ^ 0xda3e39cb94b95bdbull, cfg.train_count + cfg.val_count,
        cfg.side, cfg.class_count);
    Dataset train_ds = slice_dataset(full, 0, cfg.train_count);
    Dataset val_ds = slice_dataset(full, cfg.train_count, cfg.val_count);
    apply_upscale(train_ds);
    apply_upscale(val_ds);
    return {std::move(train_ds), std::move(val_ds)};
  }

  std::string root = cfg.data_path;
  if (!root.empty() && root[0] != '/') {
    if (const char* base = std::getenv("VVT_DATA_DIR"))
      root = std::string(base) + "/" + root;
  } else if (root.empty()) {
    if (const char* base = std::getenv("VVT_DATA_DIR")) root = base;
  }
  VVT_CHECK(!root.empty(),
            "CIFAR source needs dataset.path or VVT_DATA_DIR");

  std::vector<std::string> train_files, val_files;
  CifarKind kind;
  if (cfg.source == "cifar10") {
    kind = CifarKind::cifar10;
    for (int i = 1; i <= 5; ++i)
      train_files.push_back(root + "/data_batch_" + std::to_string(i) +
                            ".bin");
    val_files.push_back(root + "/test_batch.bin");
  } else {
    kind = CifarKind::cifar100;
    train_files.push_back(root + "/train.bin");
    val_files.push_back(root + "/test.bin");
  }
  Dataset train_ds = load_cifar_binary(train_files, kind);
  Dataset val_ds = load_cifar_binary(val_files, kind);
  VVT_CHECK(cfg.class_count == train_ds.class_count,
            "config class_count does not match the CIFAR kind");
  const ChannelStats stats = channel_stats(train_ds);
  normalize_dataset(train_ds, stats);
  normalize_dataset(val_ds, stats);
  if (cfg.train_count > 0 && cfg.train_count < train_ds.count())
    train_ds = slice_dataset(train_ds, 0, cfg.train_count);
  if (cfg.val_count > 0 && cfg.val_count < val_ds.count())
    val_ds = slice_dataset(val_ds, 0, cfg.val_count);
  apply_upscale(train_ds);
  apply_upscale(val_ds);
  return {std::move(train_ds), std::move(val_ds)};
}

/// Single-worker training loop: shuffled epochs, per-step warmup + cosine
/// learning rate, AdamW updates. Deterministic for a fixed seed (sequential
/// sample order inside each batch, fixed reduction order throughout).
/// Divergence (non-finite loss) aborts with a diagnostic.
inline std::vector<EpochLog> train(Model<float>& model, const Dataset& train_ds,
                                   const Dataset& val_ds,
                                   const TrainConfig& cfg) {
  cfg.validate();
  VVT_CHECK(train_ds.count() > 0 && val_ds.count() > 0, "empty dataset split");
  const int64_t spe =
      (train_ds.count() + cfg.batch_size - 1) / cfg.batch_size;

  AdamW<float> opt;
  opt.weight_decay = cfg.weight_decay;
  opt.init(model.params);
  ModelParams<float> grads = make_model_params<float>(model.config);

  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Rng aug_rng(cfg.seed ^ 0x517cc1b727220a95ull);
  Rng drop_rng(cfg.seed ^ 0x2545f4914f6cdd1dull);
  std::vector<int64_t> indices(static_cast<size_t>(train_ds.count()));
  for (int64_t i = 0; i < train_ds.count(); ++i)
    indices[static_cast<size_t>(i)] = i;

  std::vector<EpochLog> log;
  int64_t step = 0;
  for (int64_t epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    order_rng.shuffle(indices.begin(), indices.end());
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (int64_t start = 0; start < train_ds.count();
         start += cfg.batch_size) {
      const int64_t bsz =
          std::min(cfg.batch_size, train_ds.count() - start);
      detail::zero_params(grads);
      double batch_loss = 0.0;
      for (int64_t bi = 0; bi < bsz; ++bi) {
        const int64_t idx = indices[static_cast<size_t>(start + bi)];
        Tensor<float> img = dataset_image(train_ds, idx);
        if (cfg.augment_crop || cfg.augment_flip)
          img = detail::augment_image(img, cfg.augment_crop, cfg.augment_flip,
                                      aug_rng);
        ForwardCtx ctx;
        ctx.training = true;
        ctx.drop_rate = cfg.drop_rate;
        ctx.rng = &drop_rng;
        SampleCache<float> cache;
        Tensor<float> logits;
        try {
          logits = model_forward_one(img, model, &cache, ctx);
        } catch (const std::invalid_argument& e) {
          // shapes are fixed by construction here; a data-driven failure
          // means the optimizer blew the activations up
          throw std::runtime_error("training diverged at epoch " +
                                   std::to_string(epoch) + " step " +
                                   std::to_string(step) + ": " + e.what());
        }
        Tensor<float> dlogits;
        const double loss = softmax_cross_entropy(
            logits, {train_ds.labels[static_cast<size_t>(idx)]}, &dlogits);
        if (!std::isfinite(loss))
          throw std::runtime_error(
              "training diverged: non-finite loss at epoch " +
              std::to_string(epoch) + " step " + std::to_string(step));
        batch_loss += loss;
        for (float& v : dlogits.flat()) v /= static_cast<float>(bsz);
        model_backward_one(dlogits, cache, model, grads);
      }
      lr = lr_at_step(cfg, step, spe);
      opt.step(model.params, grads, lr);
      epoch_loss += batch_loss;
      ++step;
    }
    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.train_loss = epoch_loss / static_cast<double>(train_ds.count());
    e.val_top1 = evaluate_top1(model, val_ds);
    log.push_back(e);
  }
  return log;
}

}  // namespace vvt
