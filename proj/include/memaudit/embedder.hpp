#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memaudit/error.hpp"
#include "memaudit/linalg.hpp"
#include "memaudit/parallel.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

/// One layer's spatial feature map, channels-first and row-major.
struct FeatureMap {
  int layer_id = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

/// Per-layer feature matrices, one row per manifest sample (manifest order).
struct FeatureSet {
  DatasetManifest manifest;
  std::map<int, Matrix> layers;

  std::size_t n_samples() const {
    return layers.empty() ? manifest.samples.size()
                          : static_cast<std::size_t>(layers.begin()->second.rows());
  }

  std::vector<int> layer_ids() const {
    std::vector<int> ids;
    for (const auto& [k, _] : layers) ids.push_back(k);
    return ids;
  }

  void validate() const {
    if (layers.empty()) throw ValidationError("feature set '" + manifest.name + "' has no layers");
    const auto n = manifest.samples.size();
    for (const auto& [k, m] : layers) {
      if (static_cast<std::size_t>(m.rows()) != n) {
        throw ValidationError("feature set '" + manifest.name + "': layer " + std::to_string(k) +
                              " has " + std::to_string(m.rows()) + " rows, manifest lists " +
                              std::to_string(n) + " samples");
      }
      if (!all_finite(m)) {
        throw ValidationError("feature set '" + manifest.name + "': layer " + std::to_string(k) +
                              " contains non-finite values");
      }
    }
  }

  /// Rows selected by index, in the given order.
  FeatureSet subset(const std::vector<std::size_t>& rows) const {
    FeatureSet out;
    out.manifest = manifest;
    out.manifest.samples.clear();
    out.manifest.features.clear();
    for (auto r : rows) out.manifest.samples.push_back(manifest.samples.at(r));
    for (const auto& [k, m] : layers) {
      Matrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
      out.layers.emplace(k, std::move(sub));
    }
    return out;
  }
};

/// Global average pooling of a C x h x w map to a length-C vector.
inline std::vector<double> pool_features(const FeatureMap& fm) {
  if (fm.height == 0 || fm.width == 0) {
    throw ValidationError("pool_features: empty spatial extent");
  }
  if (fm.channels * fm.height * fm.width != fm.values.size()) {
    throw ValidationError("pool_features: channels*height*width != value count");
  }
  const std::size_t area = fm.height * fm.width;
  std::vector<double> out(fm.channels, 0.0);
  for (std::size_t c = 0; c < fm.channels; ++c) {
    const double* plane = fm.values.data() + c * area;
    double sum = 0.0;
    for (std::size_t i = 0; i < area; ++i) {
      if (!std::isfinite(plane[i])) throw ValidationError("pool_features: non-finite value");
      sum += plane[i];
    }
    out[c] = sum / static_cast<double>(area);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference embedder

struct PoolingGrid {
  std::size_t rows = 1;
  std::size_t cols = 1;
  int layer_id = 0;

  bool operator==(const PoolingGrid&) const = default;
};

/// Multi-scale pooled-statistics embedder. Finer grids carry smaller layer
/// ids so that the id order runs from texture to coarse structure.
///
/// The gradient channel is computed on the image after averaging
/// `gradient_block` x `gradient_block` pixel blocks; 1 gives plain per-pixel
/// forward differences.
struct ReferenceEmbedderConfig {
  std::vector<PoolingGrid> grids{{16, 16, 3}, {8, 8, 7}, {4, 4, 11}};
  bool include_gradient_channel = true;
  std::size_t gradient_block = 2;

  void validate() const {
    if (grids.empty()) throw ValidationError("embedder config: grid list is empty");
    std::set<int> ids;
    for (const auto& g : grids) {
      if (g.rows < 1 || g.cols < 1) throw ValidationError("embedder config: grid sizes must be >= 1");
      if (!ids.insert(g.layer_id).second) {
        throw ValidationError("embedder config: duplicate layer id " + std::to_string(g.layer_id));
      }
    }
    if (gradient_block < 1) throw ValidationError("embedder config: gradient_block must be >= 1");
  }

  std::vector<int> layer_ids() const {
    std::vector<int> ids;
    for (const auto& g : grids) ids.push_back(g.layer_id);
    return ids;
  }

  std::size_t dimension(const PoolingGrid& g) const {
    return g.rows * g.cols * (include_gradient_channel ? 2 : 1);
  }
};

inline nlohmann::json embedder_config_to_json(const ReferenceEmbedderConfig& cfg) {
  nlohmann::json grids = nlohmann::json::array();
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& g : cfg.grids) {
    grids.push_back({g.rows, g.cols});
    ids.push_back(g.layer_id);
  }
  return {{"grids", grids},
          {"layer_ids", ids},
          {"include_gradient_channel", cfg.include_gradient_channel},
          {"gradient_block", cfg.gradient_block}};
}

/// Missing keys keep their defaults. Without "layer_ids", grids are ranked
/// by cell count (finest first) and given ids 3, 7, 11, 15, ...
inline ReferenceEmbedderConfig embedder_config_from_json(const nlohmann::json& j) {
  ReferenceEmbedderConfig cfg;
  try {
    if (j.contains("grids")) {
      cfg.grids.clear();
      for (const auto& g : j.at("grids")) {
        cfg.grids.push_back({g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), 0});
      }
      if (j.contains("layer_ids")) {
        const auto ids = j.at("layer_ids").get<std::vector<int>>();
        if (ids.size() != cfg.grids.size()) {
          throw ValidationError("embedder config: layer_ids and grids differ in length");
        }
        for (std::size_t i = 0; i < ids.size(); ++i) cfg.grids[i].layer_id = ids[i];
      } else {
        std::vector<std::size_t> order(cfg.grids.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
          return cfg.grids[a].rows * cfg.grids[a].cols > cfg.grids[b].rows * cfg.grids[b].cols;
        });
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
          cfg.grids[order[rank]].layer_id = 3 + 4 * static_cast<int>(rank);
        }
      }
    }
    if (j.contains("include_gradient_channel")) {
      cfg.include_gradient_channel = j.at("include_gradient_channel").get<bool>();
    }
    if (j.contains("gradient_block")) cfg.gradient_block = j.at("gradient_block").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("embedder config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace detail {

// Boundaries of `cells` equal ranges over `extent`; the last range absorbs
// the remainder.
inline std::vector<std::size_t> cell_edges(std::size_t extent, std::size_t cells) {
  std::vector<std::size_t> edges(cells + 1);
  const std::size_t step = extent / cells;
  for (std::size_t i = 0; i < cells; ++i) edges[i] = i * step;
  edges[cells] = extent;
  return edges;
}

// Per-pixel forward-difference gradient magnitude of the block-averaged
// image, broadcast back to full resolution.
inline std::vector<double> gradient_magnitude(const ImageSlice& img, std::size_t block) {
  const std::size_t bh = std::max<std::size_t>(1, img.height / block);
  const std::size_t bw = std::max<std::size_t>(1, img.width / block);
  const auto ye = cell_edges(img.height, bh);
  const auto xe = cell_edges(img.width, bw);

  std::vector<double> blocks(bh * bw, 0.0);
  for (std::size_t by = 0; by < bh; ++by) {
    for (std::size_t bx = 0; bx < bw; ++bx) {
      double sum = 0.0;
      for (std::size_t y = ye[by]; y < ye[by + 1]; ++y)
        for (std::size_t x = xe[bx]; x < xe[bx + 1]; ++x) sum += img.at(y, x);
      blocks[by * bw + bx] = sum / static_cast<double>((ye[by + 1] - ye[by]) * (xe[bx + 1] - xe[bx]));
    }
  }

  std::vector<double> mag(bh * bw, 0.0);
  for (std::size_t by = 0; by < bh; ++by) {
    for (std::size_t bx = 0; bx < bw; ++bx) {
      const double v = blocks[by * bw + bx];
      const double gx = bx + 1 < bw ? blocks[by * bw + bx + 1] - v : 0.0;
      const double gy = by + 1 < bh ? blocks[(by + 1) * bw + bx] - v : 0.0;
      mag[by * bw + bx] = std::sqrt(gx * gx + gy * gy);
    }
  }

  std::vector<double> full(img.height * img.width);
  for (std::size_t by = 0; by < bh; ++by)
    for (std::size_t y = ye[by]; y < ye[by + 1]; ++y)
      for (std::size_t bx = 0; bx < bw; ++bx)
        for (std::size_t x = xe[bx]; x < xe[bx + 1]; ++x) full[y * img.width + x] = mag[by * bw + bx];
  return full;
}

template <class Pixel>
std::vector<double> cell_means(const Pixel& pixel, std::size_t height, std::size_t width,
                               const PoolingGrid& g) {
  const auto ye = cell_edges(height, g.rows);
  const auto xe = cell_edges(width, g.cols);
  std::vector<double> out(g.rows * g.cols);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      double sum = 0.0;
      for (std::size_t y = ye[r]; y < ye[r + 1]; ++y)
        for (std::size_t x = xe[c]; x < xe[c + 1]; ++x) sum += pixel(y, x);
      out[r * g.cols + c] = sum / static_cast<double>((ye[r + 1] - ye[r]) * (xe[c + 1] - xe[c]));
    }
  }
  return out;
}

}  // namespace detail

/// Embeds one image. Per grid: the cell-mean intensities (row-major), then,
/// if enabled, the cell-mean gradient magnitudes.
inline std::map<int, std::vector<double>> embed_reference(const ImageSlice& img,
                                                          const ReferenceEmbedderConfig& cfg = {}) {
  cfg.validate();
  img.validate();
  for (const auto& g : cfg.grids) {
    if (img.height < g.rows || img.width < g.cols) {
      throw ValidationError("embed_reference: image " + std::to_string(img.height) + "x" +
                            std::to_string(img.width) + " is smaller than grid " +
                            std::to_string(g.rows) + "x" + std::to_string(g.cols));
    }
  }
  std::vector<double> grad;
  if (cfg.include_gradient_channel) grad = detail::gradient_magnitude(img, cfg.gradient_block);

  std::map<int, std::vector<double>> out;
  for (const auto& g : cfg.grids) {
    auto vec = detail::cell_means(
        [&](std::size_t y, std::size_t x) { return static_cast<double>(img.at(y, x)); },
        img.height, img.width, g);
    if (cfg.include_gradient_channel) {
      const auto gm = detail::cell_means(
          [&](std::size_t y, std::size_t x) { return grad[y * img.width + x]; }, img.height,
          img.width, g);
      vec.insert(vec.end(), gm.begin(), gm.end());
    }
    out.emplace(g.layer_id, std::move(vec));
  }
  return out;
}

/// Embeds a list of images into a FeatureSet; rows follow the manifest.
inline FeatureSet embed_images(const std::vector<ImageSlice>& images, DatasetManifest manifest,
                               const ReferenceEmbedderConfig& cfg = {}, std::size_t threads = 1) {
  cfg.validate();
  if (images.size() != manifest.samples.size()) {
    throw ValidationError("embed_images: image count does not match manifest");
  }
  std::vector<std::map<int, std::vector<double>>> rows(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) { rows[i] = embed_reference(images[i], cfg); });

  FeatureSet fs;
  manifest.layers = cfg.layer_ids();
  fs.manifest = std::move(manifest);
  for (const auto& g : cfg.grids) {
    Matrix m(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(cfg.dimension(g)));
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& v = rows[i].at(g.layer_id);
      for (std::size_t c = 0; c < v.size(); ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[c];
    }
    fs.layers.emplace(g.layer_id, std::move(m));
  }
  return fs;
}

/// Loads externally extracted per-layer matrices (one MATF per layer).
inline FeatureSet load_external_features(const DatasetManifest& manifest) {
  manifest.validate();
  if (manifest.layers.empty()) {
    throw ValidationError("manifest '" + manifest.name + "' lists no layers");
  }
  FeatureSet fs;
  fs.manifest = manifest;
  for (int k : manifest.layers) {
    const auto path = manifest.feature_path(k);
    if (!fs::exists(path)) {
      throw ValidationError("manifest '" + manifest.name + "': missing feature file for layer " +
                            std::to_string(k) + " (" + path.string() + ")");
    }
    Tensor t = read_tensor(path);
    if (t.shape.size() != 2) {
      throw FormatError(FormatError::Kind::bad_rank, path.string() + ": feature tensor must be rank 2");
    }
    if (t.shape[0] != manifest.samples.size()) {
      throw ValidationError(path.string() + ": " + std::to_string(t.shape[0]) +
                            " rows but manifest lists " + std::to_string(manifest.samples.size()) +
                            " samples");
    }
    fs.layers.emplace(k, tensor_to_matrix(t));
  }
  fs.validate();
  return fs;
}

/// Writes one MATF per layer next to `manifest_path` and the manifest with
/// its `features` map filled in.
inline void write_feature_set(const fs::path& manifest_path, const FeatureSet& features) {
  DatasetManifest m = features.manifest;
  m.layers = features.layer_ids();
  m.features.clear();
  const auto dir = manifest_path.parent_path();
  for (auto& sample : m.samples) {
    sample.path = fs::proximate(m.resolve(sample.path), dir.empty() ? fs::path(".") : dir).generic_string();
  }
  m.base_dir = dir;
  const auto stem = manifest_path.stem().string();
  for (const auto& [k, mat] : features.layers) {
    const std::string file = stem + "_layer_" + std::to_string(k) + ".matf";
    write_tensor(dir / file, matrix_to_tensor(mat));
    m.features[k] = file;
  }
  write_manifest(manifest_path, m);
}

}  // namespace memaudit
