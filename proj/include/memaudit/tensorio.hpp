#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "memaudit/error.hpp"

/**
 * @file tensorio.hpp
 *
 * @brief Portable file formats: MATF tensors, PGM images and dataset manifests.
 *
 * MATF layout (all integers little-endian, no padding):
 *
 *     "MATF" | version u8 (0x01) | dtype u8 | ndim u8 | dims u64 x ndim | payload
 *
 * The only registered dtype is 0x01, IEEE-754 float32.
 */

namespace memaudit {

namespace fs = std::filesystem;

inline constexpr std::string_view kMatfMagic = "MATF";
inline constexpr std::uint8_t kMatfVersion = 0x01;

enum class DType : std::uint8_t { float32 = 0x01 };

struct Tensor {
  DType dtype = DType::float32;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                           std::multiplies<>());
  }

  void validate() const {
    if (dtype != DType::float32) {
      throw ValidationError("tensor: unregistered dtype");
    }
    if (shape.size() > 255) {
      throw ValidationError("tensor: rank above 255 is not representable");
    }
    if (element_count() != data.size()) {
      throw ValidationError("tensor: shape product " +
                            std::to_string(element_count()) +
                            " does not match element count " +
                            std::to_string(data.size()));
    }
  }

  bool operator==(const Tensor&) const = default;
};

/// One grayscale slice, row-major, intensities in [0, 1].
struct ImageSlice {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  ImageSlice() = default;
  ImageSlice(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), pixels(h * w, fill) {}
  ImageSlice(std::size_t h, std::size_t w, std::vector<float> values)
      : height(h), width(w), pixels(std::move(values)) {}

  float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  float at(std::size_t row, std::size_t col) const {
    return pixels[row * width + col];
  }

  void validate() const {
    if (height < 1 || width < 1) {
      throw ValidationError("image: height and width must be >= 1");
    }
    if (pixels.size() != height * width) {
      throw ValidationError("image: pixel count does not match height*width");
    }
    for (float v : pixels) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("image: pixel outside [0,1]");
      }
    }
  }

  bool operator==(const ImageSlice&) const = default;
};

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("manifest: split must be 'train' or 'test', got '" +
                        std::string(s) + "'");
}

struct SampleEntry {
  std::string id;
  std::string path;

  bool operator==(const SampleEntry&) const = default;
};

/// Ordered list of samples; the order defines the row order of every
/// per-layer feature matrix. `features` maps a layer id to its MATF file and
/// may be empty for image-only manifests. Relative paths are resolved
/// against `base_dir` (the manifest's directory when loaded from disk).
struct DatasetManifest {
  std::string name;
  Split split = Split::train;
  std::vector<SampleEntry> samples;
  std::vector<int> layers;
  std::map<int, std::string> features;
  fs::path base_dir;

  void validate() const {
    std::set<std::string_view> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.id).second) {
        throw ValidationError("manifest '" + name + "': duplicate sample id '" +
                              s.id + "'");
      }
    }
    std::set<int> seen;
    for (int k : layers) {
      if (!seen.insert(k).second) {
        throw ValidationError("manifest '" + name + "': duplicate layer id " +
                              std::to_string(k));
      }
    }
  }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  /// Feature file for a layer: the explicit entry, else `layer_<k>.matf`.
  fs::path feature_path(int layer) const {
    auto it = features.find(layer);
    if (it != features.end()) return resolve(it->second);
    return base_dir / ("layer_" + std::to_string(layer) + ".matf");
  }
};

// ---------------------------------------------------------------------------
// Small file helpers

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string(), "read failed");
  return bytes;
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
inline void atomic_write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string(), ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string(), "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(path.string(), "rename failed");
  }
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// MATF

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
  t.validate();
  std::string out;
  out.reserve(7 + 8 * t.shape.size() + 4 * t.data.size());
  out.append(kMatfMagic);
  out.push_back(static_cast<char>(kMatfVersion));
  out.push_back(static_cast<char>(t.dtype));
  out.push_back(static_cast<char>(t.shape.size()));
  for (auto d : t.shape) detail::put_u64_le(out, d);
  for (float f : t.data) detail::put_f32_le(out, f);
  return out;
}

inline Tensor decode_tensor(std::string_view bytes, const std::string& origin = "<memory>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 4 || bytes.substr(0, 4) != kMatfMagic) {
    throw FormatError(FormatError::Kind::bad_magic, origin + ": not a MATF file (bad magic)");
  }
  if (n < 7) {
    throw FormatError(FormatError::Kind::truncated, origin + ": truncated MATF header");
  }
  if (p[4] != kMatfVersion) {
    throw FormatError(FormatError::Kind::unsupported_version,
                      origin + ": unsupported MATF version " + std::to_string(p[4]));
  }
  if (p[5] != static_cast<unsigned char>(DType::float32)) {
    throw FormatError(FormatError::Kind::unknown_dtype,
                      origin + ": unknown MATF dtype code " + std::to_string(p[5]));
  }
  const std::size_t ndim = p[6];
  std::size_t offset = 7;
  if (n < offset + 8 * ndim) {
    throw FormatError(FormatError::Kind::truncated, origin + ": truncated MATF shape");
  }
  Tensor t;
  t.shape.resize(ndim);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    t.shape[i] = detail::get_u64_le(p + offset);
    offset += 8;
    if (t.shape[i] != 0 && count > (std::uint64_t{1} << 61) / t.shape[i]) {
      throw FormatError(FormatError::Kind::bad_header, origin + ": MATF shape overflows");
    }
    count *= t.shape[i];
  }
  const std::uint64_t payload = n - offset;
  if (payload < count * 4) {
    throw FormatError(FormatError::Kind::truncated,
                      origin + ": MATF payload holds " + std::to_string(payload / 4) +
                          " elements, shape needs " + std::to_string(count));
  }
  if (payload > count * 4) {
    throw FormatError(FormatError::Kind::trailing_data,
                      origin + ": MATF payload longer than shape");
  }
  t.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.data[i] = detail::get_f32_le(p + offset + 4 * i);
  }
  return t;
}

inline void write_tensor(const fs::path& path, const Tensor& t) {
  atomic_write_file(path, encode_tensor(t));
}

inline Tensor read_tensor(const fs::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Images

namespace detail {

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
inline std::string pgm_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return std::string(bytes.substr(start, pos - start));
}

inline std::uint64_t pgm_number(const std::string& tok, const std::string& origin) {
  std::uint64_t v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw FormatError(FormatError::Kind::bad_header, origin + ": malformed PGM header");
  }
  return v;
}

}  // namespace detail

inline ImageSlice decode_pgm(std::string_view bytes, const std::string& origin) {
  std::size_t pos = 2;
  const auto width = detail::pgm_number(detail::pgm_token(bytes, pos), origin);
  const auto height = detail::pgm_number(detail::pgm_token(bytes, pos), origin);
  const auto maxval = detail::pgm_number(detail::pgm_token(bytes, pos), origin);
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError(FormatError::Kind::bad_header, origin + ": invalid PGM dimensions or maxval");
  }
  ++pos;  // single whitespace byte before the raster
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height;
  if (pos > bytes.size() || bytes.size() - pos < count * bps) {
    throw FormatError(FormatError::Kind::truncated, origin + ": truncated PGM raster");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  ImageSlice img(height, width);
  const float scale = static_cast<float>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = bps == 2 ? (std::uint32_t{p[2 * i]} << 8) | p[2 * i + 1] : p[i];
    img.pixels[i] = std::min(1.0f, static_cast<float>(v) / scale);
  }
  return img;
}

/// Reads a binary PGM (P5) or a rank-2 MATF tensor as an image.
inline ImageSlice read_image(const fs::path& path) {
  const std::string bytes = read_file_bytes(path);
  const std::string origin = path.string();
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    return decode_pgm(bytes, origin);
  }
  if (bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == kMatfMagic) {
    Tensor t = decode_tensor(bytes, origin);
    if (t.shape.size() != 2) {
      throw FormatError(FormatError::Kind::bad_rank,
                        origin + ": image tensor must be rank 2, got rank " +
                            std::to_string(t.shape.size()));
    }
    if (t.shape[0] < 1 || t.shape[1] < 1) {
      throw FormatError(FormatError::Kind::bad_rank, origin + ": empty image tensor");
    }
    ImageSlice img(t.shape[0], t.shape[1]);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const float v = t.data[i];
      img.pixels[i] = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    }
    return img;
  }
  throw FormatError(FormatError::Kind::unsupported_format,
                    origin + ": unsupported image format (expected P5 PGM or MATF)");
}

/// Quantizes to maxval levels (255 or 65535). 16-bit samples are big-endian.
inline std::string encode_pgm(const ImageSlice& img, std::uint32_t maxval = 65535) {
  img.validate();
  if (maxval != 255 && maxval != 65535) {
    throw ValidationError("pgm: maxval must be 255 or 65535");
  }
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n" + std::to_string(maxval) + "\n";
  for (float v : img.pixels) {
    const auto q = static_cast<std::uint32_t>(std::lround(static_cast<double>(v) * maxval));
    if (maxval > 255) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

inline void write_pgm(const fs::path& path, const ImageSlice& img, std::uint32_t maxval = 65535) {
  atomic_write_file(path, encode_pgm(img, maxval));
}

/// Stores an image losslessly as a rank-2 MATF tensor.
inline void write_image_matf(const fs::path& path, const ImageSlice& img) {
  img.validate();
  write_tensor(path, Tensor{DType::float32, {img.height, img.width}, img.pixels});
}

// ---------------------------------------------------------------------------
// Manifests

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["name"] = m.name;
  j["split"] = to_string(m.split);
  j["layers"] = m.layers;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : m.samples) j["samples"].push_back({{"id", s.id}, {"path", s.path}});
  if (!m.features.empty()) {
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [k, p] : m.features) f[std::to_string(k)] = p;
    j["features"] = f;
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir = {}) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.split = parse_split(j.at("split").get<std::string>());
    if (j.contains("layers")) m.layers = j.at("layers").get<std::vector<int>>();
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("path").get<std::string>()});
    }
    if (j.contains("features")) {
      for (const auto& [k, p] : j.at("features").items()) {
        int layer = 0;
        const auto res = std::from_chars(k.data(), k.data() + k.size(), layer);
        if (res.ec != std::errc() || res.ptr != k.data() + k.size()) {
          throw ValidationError("manifest: features key '" + k + "' is not a layer id");
        }
        m.features[layer] = p.get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.base_dir = std::move(base_dir);
  m.validate();
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  m.validate();
  atomic_write_file(path, manifest_to_json(m).dump(2) + "\n");
}

}  // namespace memaudit
