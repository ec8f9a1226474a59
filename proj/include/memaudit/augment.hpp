#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "memaudit/error.hpp"
#include "memaudit/rng.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

enum class AugmentationKind { clean, noise, rotate, flip_h, flip_v, intensity };

/// One perturbation applied to an injected duplicate.
///
/// Rotations carry a magnitude; the sign is drawn per sample unless
/// `fixed_sign` is set.
struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::clean;
  double sigma = 0.0;
  double degrees = 0.0;
  double lo = 1.0;
  double hi = 1.0;
  bool fixed_sign = false;

  void validate() const {
    switch (kind) {
      case AugmentationKind::noise:
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("noise sigma must be > 0");
        break;
      case AugmentationKind::rotate:
        if (!std::isfinite(degrees) || std::abs(degrees) >= 90.0) {
          throw ValidationError("rotation must be finite and below 90 degrees");
        }
        break;
      case AugmentationKind::intensity:
        if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi) || lo < 0.0) {
          throw ValidationError("intensity range must satisfy 0 <= lo <= hi");
        }
        break;
      default:
        break;
    }
  }

  bool operator==(const AugmentationSpec&) const = default;
};

inline AugmentationSpec clean_spec() { return {}; }
inline AugmentationSpec noise_spec(double sigma) { return {AugmentationKind::noise, sigma}; }
inline AugmentationSpec rotation_spec(double degrees) {
  return {AugmentationKind::rotate, 0.0, degrees};
}
inline AugmentationSpec flip_h_spec() { return {AugmentationKind::flip_h}; }
inline AugmentationSpec flip_v_spec() { return {AugmentationKind::flip_v}; }
inline AugmentationSpec intensity_spec(double lo = 0.9, double hi = 1.1) {
  return {AugmentationKind::intensity, 0.0, 0.0, lo, hi};
}

/// The eight conditions of the duplication experiments, in report order.
inline std::vector<AugmentationSpec> standard_augmentations() {
  return {clean_spec(),       noise_spec(0.01), noise_spec(0.02), rotation_spec(3.0),
          rotation_spec(5.0), flip_h_spec(),    flip_v_spec(),    intensity_spec()};
}

namespace detail {

inline std::string short_number(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, std::string_view tag) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError("unknown augmentation tag '" + std::string(tag) + "'");
  }
  return v;
}

}  // namespace detail

/// Short tag used in reports and on the command line, e.g. "noise_0.01",
/// "rot_5", "flip_h", "intensity", "clean".
inline std::string to_tag(const AugmentationSpec& a) {
  switch (a.kind) {
    case AugmentationKind::clean: return "clean";
    case AugmentationKind::noise: return "noise_" + detail::short_number(a.sigma);
    case AugmentationKind::rotate:
      return (a.fixed_sign ? "rotfixed_" : "rot_") + detail::short_number(a.degrees);
    case AugmentationKind::flip_h: return "flip_h";
    case AugmentationKind::flip_v: return "flip_v";
    case AugmentationKind::intensity:
      if (a.lo == 0.9 && a.hi == 1.1) return "intensity";
      return "intensity_" + detail::short_number(a.lo) + "_" + detail::short_number(a.hi);
  }
  return "clean";
}

inline AugmentationSpec parse_augmentation(std::string_view tag) {
  AugmentationSpec a;
  auto starts = [&](std::string_view p) { return tag.substr(0, p.size()) == p; };
  if (tag == "clean") {
    a = clean_spec();
  } else if (tag == "flip_h") {
    a = flip_h_spec();
  } else if (tag == "flip_v") {
    a = flip_v_spec();
  } else if (tag == "intensity") {
    a = intensity_spec();
  } else if (starts("intensity_")) {
    const auto rest = tag.substr(10);
    const auto us = rest.find('_');
    if (us == std::string_view::npos) throw ValidationError("unknown augmentation tag '" + std::string(tag) + "'");
    a = intensity_spec(detail::parse_number(rest.substr(0, us), tag),
                       detail::parse_number(rest.substr(us + 1), tag));
  } else if (starts("noise_")) {
    a = noise_spec(detail::parse_number(tag.substr(6), tag));
  } else if (starts("rotfixed_")) {
    a = rotation_spec(detail::parse_number(tag.substr(9), tag));
    a.fixed_sign = true;
  } else if (starts("rot_")) {
    a = rotation_spec(detail::parse_number(tag.substr(4), tag));
  } else {
    throw ValidationError("unknown augmentation tag '" + std::string(tag) + "'");
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Primitive operations

/// Adds i.i.d. N(0, sigma^2) to every pixel, then clamps to [0, 1].
inline ImageSlice add_gaussian_noise(const ImageSlice& img, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ValidationError("add_gaussian_noise: sigma must be > 0");
  Rng rng(seed);
  ImageSlice out = img;
  for (auto& p : out.pixels) {
    const double v = static_cast<double>(p) + sigma * rng.normal();
    p = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

/// Rotates about the image center by `degrees` (counter-clockwise as
/// displayed) with bilinear interpolation; samples outside the source are 0.
inline ImageSlice rotate(const ImageSlice& img, double degrees) {
  if (!std::isfinite(degrees) || std::abs(degrees) >= 90.0) {
    throw ValidationError("rotate: |degrees| must be below 90");
  }
  if (degrees == 0.0) return img;
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  auto px = [&](long y, long x) -> double {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  ImageSlice out(img.height, img.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double sx = c * dx - s * dy + cx;
      const double sy = s * dx + c * dy + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const double fx = sx - fx0, fy = sy - fy0;
      const double v = px(y0, x0) * (1 - fx) * (1 - fy) + px(y0, x0 + 1) * fx * (1 - fy) +
                       px(y0 + 1, x0) * (1 - fx) * fy + px(y0 + 1, x0 + 1) * fx * fy;
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

inline ImageSlice flip_h(const ImageSlice& img) {
  ImageSlice out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
  return out;
}

inline ImageSlice flip_v(const ImageSlice& img) {
  ImageSlice out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(img.height - 1 - y, x);
  return out;
}

/// Multiplies by a fixed factor and clamps.
inline ImageSlice scale_intensity_by(const ImageSlice& img, double factor) {
  ImageSlice out = img;
  for (auto& p : out.pixels) p = static_cast<float>(std::clamp(static_cast<double>(p) * factor, 0.0, 1.0));
  return out;
}

/// Multiplies by one factor drawn uniformly from [lo, hi].
inline ImageSlice scale_intensity(const ImageSlice& img, double lo, double hi, std::uint64_t seed) {
  if (!(lo <= hi)) throw ValidationError("scale_intensity: lo must not exceed hi");
  if (lo == hi) return scale_intensity_by(img, lo);
  Rng rng(seed);
  return scale_intensity_by(img, rng.uniform(lo, hi));
}

/// Applies a spec deterministically given `seed`. Every random choice
/// (noise field, rotation sign, intensity factor) comes from one stream, so
/// two rotation specs with the same seed share a sign.
inline ImageSlice apply_augmentation(const ImageSlice& img, const AugmentationSpec& spec,
                                     std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case AugmentationKind::clean: return img;
    case AugmentationKind::noise: return add_gaussian_noise(img, spec.sigma, seed);
    case AugmentationKind::rotate: {
      if (spec.fixed_sign) return rotate(img, spec.degrees);
      Rng rng(seed);
      return rotate(img, rng.coin() ? spec.degrees : -spec.degrees);
    }
    case AugmentationKind::flip_h: return flip_h(img);
    case AugmentationKind::flip_v: return flip_v(img);
    case AugmentationKind::intensity: return scale_intensity(img, spec.lo, spec.hi, seed);
  }
  return img;
}

}  // namespace memaudit
