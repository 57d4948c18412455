#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vvt/tensor.hpp"

namespace vvt {

struct Dataset {
  Tensor<float> images;  // (count, 3, side, side)
  std::vector<int> labels;
  int64_t class_count = 0;

  int64_t count() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int64_t side() const { return images.dim(2); }
};

enum class CifarKind { cifar10, cifar100 };

/// Parses the standard CIFAR binary layout. CIFAR-10 records are 3073 bytes
/// (1 label + 3x1024 channel-planar pixels); CIFAR-100 records are 3074 bytes
/// (1 coarse + 1 fine label + 3072 pixels). Pixels map to [0, 1].
inline Dataset load_cifar_binary(const std::vector<std::string>& files,
                                 CifarKind kind) {
  const int64_t record =
      kind == CifarKind::cifar10 ? 3073 : 3074;
  const int64_t label_bytes = kind == CifarKind::cifar10 ? 1 : 2;
  const int64_t classes = kind == CifarKind::cifar10 ? 10 : 100;

  std::vector<unsigned char> bytes;
  for (const std::string& path : files) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in.good())
      throw std::runtime_error("cannot open CIFAR file '" + path + "'");
    const std::streamsize size = in.tellg();
    if (size <= 0 || size % record != 0)
      throw std::runtime_error("CIFAR file '" + path + "' is truncated: " +
                               std::to_string(size) +
                               " bytes is not a multiple of " +
                               std::to_string(record));
    in.seekg(0);
    const size_t old = bytes.size();
    bytes.resize(old + static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data() + old), size);
  }

  const int64_t count = static_cast<int64_t>(bytes.size()) / record;
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor<float>({count, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    const int label = rec[label_bytes - 1];  // fine label for CIFAR-100
    if (label >= classes)
      throw std::runtime_error("label " + std::to_string(label) +
                               " out of range in record " + std::to_string(i));
    ds.labels[static_cast<size_t>(i)] = label;
    const unsigned char* px = rec + label_bytes;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x)
          ds.images(i, c, y, x) =
              static_cast<float>(px[(c * 32 + y) * 32 + x]) / 255.0f;
  }
  return ds;
}

struct ChannelStats {
  std::array<double, 3> mean{}, stdev{};
};

/// Per-channel statistics; compute on the training split, apply everywhere.
inline ChannelStats channel_stats(const Dataset& ds) {
  ChannelStats st;
  const int64_t per_ch = ds.count() * ds.side() * ds.side();
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int64_t i = 0; i < ds.count(); ++i)
      for (int64_t y = 0; y < ds.side(); ++y)
        for (int64_t x = 0; x < ds.side(); ++x)
          sum += ds.images(i, c, y, x);
    st.mean[static_cast<size_t>(c)] = sum / static_cast<double>(per_ch);
    double var = 0.0;
    for (int64_t i = 0; i < ds.count(); ++i)
      for (int64_t y = 0; y < ds.side(); ++y)
        for (int64_t x = 0; x < ds.side(); ++x) {
          const double d =
              ds.images(i, c, y, x) - st.mean[static_cast<size_t>(c)];
          var += d * d;
        }
    st.stdev[static_cast<size_t>(c)] =
        std::sqrt(var / static_cast<double>(per_ch));
  }
  return st;
}

inline void normalize_dataset(Dataset& ds, const ChannelStats& st) {
  for (int64_t c = 0; c < 3; ++c) {
    const float m = static_cast<float>(st.mean[static_cast<size_t>(c)]);
    const float s = static_cast<float>(
        st.stdev[static_cast<size_t>(c)] > 0 ? st.stdev[static_cast<size_t>(c)]
                                             : 1.0);
    for (int64_t i = 0; i < ds.count(); ++i)
      for (int64_t y = 0; y < ds.side(); ++y)
        for (int64_t x = 0; x < ds.side(); ++x)
          ds.images(i, c, y, x) = (ds.images(i, c, y, x) - m) / s;
  }
}

inline uint64_t dataset_checksum(const Dataset& ds) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const unsigned char* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(reinterpret_cast<const unsigned char*>(ds.images.data()),
      static_cast<size_t>(ds.images.numel()) * sizeof(float));
  mix(reinterpret_cast<const unsigned char*>(ds.labels.data()),
      ds.labels.size() * sizeof(int));
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic locality task: the label is the identity of a 3x3 stamp placed at
// a random position. Stamp cells are exactly +/-2 while the background stays
// inside (-0.01, 0.01), so any window touching background differs from every
// template by >= 1.99 per cell: a template scan recovers every label, and a
// model must use local structure to classify.
// ---------------------------------------------------------------------------

inline std::vector<Tensor<float>> locality_templates(uint64_t seed,
                                                     int64_t class_count) {
  VVT_CHECK(class_count >= 2 && class_count <= 512,
            "template set supports 2..512 classes");
  Rng rng(seed * 2654435761ull + 17);
  std::vector<Tensor<float>> templates;
  std::vector<uint32_t> signatures;
  while (static_cast<int64_t>(templates.size()) < class_count) {
    Tensor<float> t({int64_t(3), int64_t(3)});
    uint32_t sig = 0;
    for (int64_t i = 0; i < 9; ++i) {
      const bool up = rng.integer(2) == 1;
      t[i] = up ? 2.0f : -2.0f;
      sig = (sig << 1) | (up ? 1u : 0u);
    }
    bool dup = false;
    for (uint32_t s : signatures) dup = dup || s == sig;
    if (!dup) {
      templates.push_back(std::move(t));
      signatures.push_back(sig);
    }
  }
  return templates;
}

inline Dataset synthetic_locality_dataset(uint64_t seed, int64_t count,
                                          int64_t side, int64_t class_count) {
  VVT_CHECK(side >= 32 && side % 32 == 0,
            "synthetic image side must be >= 32 and divisible by 32");
  VVT_CHECK(count >= 1, "need at least one sample");
  auto templates = locality_templates(seed, class_count);

  Dataset ds;
  ds.class_count = class_count;
  ds.images = Tensor<float>({count, 3, side, side});
  ds.labels.resize(static_cast<size_t>(count));
  // round-robin labels shuffled: exactly balanced per class
  std::vector<int> labels(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    labels[static_cast<size_t>(i)] = static_cast<int>(i % class_count);
  Rng rng(seed);
  rng.shuffle(labels.begin(), labels.end());

  for (int64_t i = 0; i < count; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    ds.labels[static_cast<size_t>(i)] = label;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x)
          ds.images(i, c, y, x) =
              static_cast<float>(rng.uniform(-0.01, 0.01));
    const int64_t py = rng.integer(side - 2);
    const int64_t px = rng.integer(side - 2);
    const Tensor<float>& t = templates[static_cast<size_t>(label)];
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t dy = 0; dy < 3; ++dy)
        for (int64_t dx = 0; dx < 3; ++dx)
          ds.images(i, c, py + dy, px + dx) = t(dy, dx);
  }
  return ds;
}

/// Non-learned oracle: exhaustive template scan by sum of squared differences.
/// Recovers the generator's label exactly (the stamp is the unique zero-SSD
/// window).
inline int match_template_label(const Tensor<float>& image,
                                const std::vector<Tensor<float>>& templates) {
  const int64_t side = image.dim(1);
  int best_label = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int64_t py = 0; py + 3 <= side; ++py)
    for (int64_t px = 0; px + 3 <= side; ++px)
      for (size_t c = 0; c < templates.size(); ++c) {
        double ssd = 0.0;
        for (int64_t ch = 0; ch < 3; ++ch)
          for (int64_t dy = 0; dy < 3; ++dy)
            for (int64_t dx = 0; dx < 3; ++dx) {
              const double d = image(ch, py + dy, px + dx) -
                               templates[c](dy, dx);
              ssd += d * d;
            }
        if (ssd < best) {
          best = ssd;
          best_label = static_cast<int>(c);
        }
      }
  return best_label;
}

/// Nearest-neighbour integer upscale (e.g. 32 -> 64 for richer stage grids).
inline Dataset upscale_dataset(const Dataset& ds, int64_t factor) {
  VVT_CHECK(factor >= 1, "upscale factor must be >= 1");
  if (factor == 1) return ds;
  Dataset out;
  out.class_count = ds.class_count;
  out.labels = ds.labels;
  const int64_t side = ds.side() * factor;
  out.images = Tensor<float>({ds.count(), 3, side, side});
  for (int64_t i = 0; i < ds.count(); ++i)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x)
          out.images(i, c, y, x) = ds.images(i, c, y / factor, x / factor);
  return out;
}

/// Contiguous sub-range [start, start+n) as its own dataset.
inline Dataset slice_dataset(const Dataset& ds, int64_t start, int64_t n) {
  VVT_CHECK(start >= 0 && n >= 1 && start + n <= ds.count(),
            "dataset slice out of range");
  Dataset out;
  out.class_count = ds.class_count;
  out.images = Tensor<float>({n, 3, ds.side(), ds.side()});
  const int64_t per = 3 * ds.side() * ds.side();
  std::copy(ds.images.data() + start * per, ds.images.data() + (start + n) * per,
            out.images.data());
  out.labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + n);
  return out;
}

/// One sample as a (3, side, side) tensor.
inline Tensor<float> dataset_image(const Dataset& ds, int64_t i) {
  Tensor<float> img({int64_t(3), ds.side(), ds.side()});
  std::copy(&ds.images(i, 0, 0, 0), &ds.images(i, 0, 0, 0) + img.numel(),
            img.data());
  return img;
}

}  // namespace vvt
