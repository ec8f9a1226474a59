#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

struct SyntheticConfig {
  std::size_t n = 200;
  std::size_t size = 128;
  std::uint64_t seed = 42;
  std::size_t min_bumps = 6;
  std::size_t max_bumps = 12;
  /// Bump widths as a fraction of the image size.
  double min_width = 6.0 / 128.0;
  double max_width = 20.0 / 128.0;
  /// Two images closer than this in every pixel count as a collision.
  double min_difference = 0.01;
};

struct SyntheticCorpus {
  std::vector<ImageSlice> train;
  std::vector<ImageSlice> test;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Sum of random Gaussian bumps, min-max normalized and quantized to 16-bit
/// levels so that a PGM round trip is lossless.
inline ImageSlice generate_blob_image(Rng& rng, const SyntheticConfig& cfg) {
  const std::size_t s = cfg.size;
  std::vector<double> acc(s * s, 0.0);
  const std::size_t bumps = cfg.min_bumps + static_cast<std::size_t>(rng.below(cfg.max_bumps - cfg.min_bumps + 1));
  for (std::size_t b = 0; b < bumps; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(s));
    const double cx = rng.uniform(0.0, static_cast<double>(s));
    const double width = rng.uniform(cfg.min_width, cfg.max_width) * static_cast<double>(s);
    const double amp = rng.uniform(0.3, 1.0);
    const double inv = 1.0 / (2.0 * width * width);
    for (std::size_t y = 0; y < s; ++y) {
      const double dy2 = (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
      for (std::size_t x = 0; x < s; ++x) {
        const double dx = static_cast<double>(x) - cx;
        acc[y * s + x] += amp * std::exp(-(dy2 + dx * dx) * inv);
      }
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(acc.begin(), acc.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  ImageSlice img(s, s);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = range > 0.0 ? (acc[i] - lo) / range : 0.0;
    img.pixels[i] = static_cast<float>(std::lround(v * 65535.0)) / 65535.0f;
  }
  return img;
}

inline bool images_differ(const ImageSlice& a, const ImageSlice& b, double min_difference) {
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    if (std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]) > min_difference) return true;
  }
  return false;
}

/// Generates n distinct images and splits them into disjoint halves: the
/// first n - n/2 are train, the rest test. Any image too close to an earlier
/// one is redrawn.
inline SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n < 2) throw ValidationError("synthetic corpus: n must be >= 2");
  if (cfg.size < 4) throw ValidationError("synthetic corpus: size must be >= 4");
  if (cfg.min_bumps < 1 || cfg.max_bumps < cfg.min_bumps) throw ValidationError("synthetic corpus: bad bump range");
  Rng rng(derive_seed(cfg.seed, {0x73796e74ULL}));
  std::vector<ImageSlice> images;
  images.reserve(cfg.n);
  std::size_t attempts = 0;
  while (images.size() < cfg.n) {
    if (++attempts > cfg.n * 100) throw Error("synthetic corpus: too many collisions");
    ImageSlice img = generate_blob_image(rng, cfg);
    const bool distinct = std::all_of(images.begin(), images.end(), [&](const ImageSlice& other) {
      return images_differ(img, other, cfg.min_difference);
    });
    if (distinct) images.push_back(std::move(img));
  }
  SyntheticCorpus corpus;
  const std::size_t n_train = cfg.n - cfg.n / 2;
  char buf[32];
  for (std::size_t i = 0; i < cfg.n; ++i) {
    std::snprintf(buf, sizeof(buf), "img_%04zu", i);
    if (i < n_train) {
      corpus.train.push_back(std::move(images[i]));
      corpus.train_ids.emplace_back(buf);
    } else {
      corpus.test.push_back(std::move(images[i]));
      corpus.test_ids.emplace_back(buf);
    }
  }
  return corpus;
}

}  // namespace memaudit
