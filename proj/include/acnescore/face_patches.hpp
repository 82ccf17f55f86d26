#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acnescore/core.hpp"
#include "acnescore/image.hpp"
#include "acnescore/io.hpp"

namespace acnescore {

/// Ten facial points in image coordinates. "Left" is the viewer's left.
struct NamedLandmarks {
  Point left_eye_center;
  Point right_eye_center;
  Point nose_tip;
  Point mouth_left;
  Point mouth_right;
  Point chin_bottom;
  Point left_brow_top;
  Point right_brow_top;
  Point face_left;
  Point face_right;

  static constexpr std::array<std::string_view, 10> kNames = {
      "left_eye_center", "right_eye_center", "nose_tip",      "mouth_left", "mouth_right",
      "chin_bottom",     "left_brow_top",    "right_brow_top", "face_left", "face_right"};

  std::array<Point*, 10> fields() {
    return {&left_eye_center, &right_eye_center, &nose_tip,      &mouth_left, &mouth_right,
            &chin_bottom,     &left_brow_top,    &right_brow_top, &face_left,  &face_right};
  }
  std::array<const Point*, 10> fields() const {
    return {&left_eye_center, &right_eye_center, &nose_tip,      &mouth_left, &mouth_right,
            &chin_bottom,     &left_brow_top,    &right_brow_top, &face_left,  &face_right};
  }

  double inter_eye_distance() const { return distance(left_eye_center, right_eye_center); }

  /// Throws BackendError(InvalidLandmarks) when a point lies outside the
  /// image, the eyes are swapped, or they coincide.
  void validate(int width, int height) const {
    const auto f = fields();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const Point& p = *f[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.y < 0 || p.x > width - 1 ||
          p.y > height - 1) {
        throw Error(ErrorCode::BackendError,
                    "InvalidLandmarks: " + std::string(kNames[i]) + " outside image bounds");
      }
    }
    if (!(inter_eye_distance() > 0.0)) {
      throw Error(ErrorCode::BackendError, "InvalidLandmarks: inter-eye distance is zero");
    }
    if (!(left_eye_center.x < right_eye_center.x)) {
      throw Error(ErrorCode::BackendError, "InvalidLandmarks: left eye is not left of right eye");
    }
  }

  friend bool operator==(const NamedLandmarks&, const NamedLandmarks&) = default;
};

struct EyeBox {
  Rect rect;
  friend bool operator==(const EyeBox&, const EyeBox&) = default;
};

struct EyeCandidate {
  Rect rect;
  double confidence = 1.0;
};

enum class ExtractionPath { Landmarks, SingleEye };

constexpr std::string_view to_string(ExtractionPath p) {
  return p == ExtractionPath::Landmarks ? "landmarks" : "single_eye";
}

struct SkinPatch {
  PatchKind kind = PatchKind::Forehead;
  Rect source_rect;
  ImageBuffer pixels;
  std::optional<SeverityLabel> label;
  ExtractionPath path = ExtractionPath::Landmarks;
  int shift = 0;  // roll offset applied by augmentation, 0 for originals
};

// ---------------------------------------------------------------------------
// Backends

class LandmarkBackend {
 public:
  virtual ~LandmarkBackend() = default;
  /// `key` names the image for file-backed lookups; model backends ignore it.
  virtual std::optional<NamedLandmarks> landmarks(const ImageBuffer& img, std::string_view key) const = 0;
  virtual bool concurrent_safe() const { return true; }
};

class EyeBackend {
 public:
  virtual ~EyeBackend() = default;
  virtual std::vector<EyeCandidate> eyes(const ImageBuffer& img, std::string_view key) const = 0;
  virtual bool concurrent_safe() const { return true; }
};

/// Reads annotations from `<dir>/<key>.landmarks` and `<dir>/<key>.eye`,
/// falling back to the image content digest as key.
class SidecarBackend final : public LandmarkBackend, public EyeBackend {
 public:
  explicit SidecarBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<NamedLandmarks> landmarks(const ImageBuffer& img, std::string_view key) const override {
    const auto file = find(img, key, ".landmarks");
    if (!file) return std::nullopt;
    return parse_landmarks(*file);
  }

  std::vector<EyeCandidate> eyes(const ImageBuffer& img, std::string_view key) const override {
    const auto file = find(img, key, ".eye");
    if (!file) return {};
    return parse_eyes(*file);
  }

  static NamedLandmarks parse_landmarks(const std::filesystem::path& file) {
    NamedLandmarks lm;
    auto slots = lm.fields();
    std::array<bool, 10> seen{};
    for (const auto& line : io::read_lines(file)) {
      const auto t = io::split_ws(line);
      if (t.empty() || t[0].starts_with('#')) continue;
      const auto* name = std::find(NamedLandmarks::kNames.begin(), NamedLandmarks::kNames.end(), t[0]);
      const auto x = t.size() == 3 ? io::parse_number<double>(t[1]) : std::nullopt;
      const auto y = t.size() == 3 ? io::parse_number<double>(t[2]) : std::nullopt;
      if (name == NamedLandmarks::kNames.end() || !x || !y) {
        throw Error(ErrorCode::BackendError, "InvalidLandmarks: bad line '" + line + "' in " + file.string());
      }
      const auto i = static_cast<std::size_t>(name - NamedLandmarks::kNames.begin());
      *slots[i] = Point{*x, *y};
      seen[i] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) {
        throw Error(ErrorCode::BackendError, "InvalidLandmarks: " + file.string() + " lacks " +
                                                 std::string(NamedLandmarks::kNames[i]));
      }
    }
    return lm;
  }

  static std::vector<EyeCandidate> parse_eyes(const std::filesystem::path& file) {
    std::vector<EyeCandidate> out;
    for (const auto& line : io::read_lines(file)) {
      const auto t = io::split_ws(line);
      if (t.empty() || t[0].starts_with('#')) continue;
      if (t[0] != "eye" || (t.size() != 5 && t.size() != 6)) {
        throw Error(ErrorCode::BackendError, "bad eye line '" + line + "' in " + file.string());
      }
      std::array<std::optional<int>, 4> v;
      for (std::size_t i = 0; i < 4; ++i) v[i] = io::parse_number<int>(t[i + 1]);
      const auto conf = t.size() == 6 ? io::parse_number<double>(t[5]) : std::optional<double>(1.0);
      if (!v[0] || !v[1] || !v[2] || !v[3] || !conf) {
        throw Error(ErrorCode::BackendError, "bad eye line '" + line + "' in " + file.string());
      }
      out.push_back({Rect{*v[0], *v[1], *v[2], *v[3]}, *conf});
    }
    return out;
  }

 private:
  std::optional<std::filesystem::path> find(const ImageBuffer& img, std::string_view key,
                                            std::string_view ext) const {
    if (!key.empty()) {
      auto p = dir_ / (std::string(key) + std::string(ext));
      if (std::filesystem::exists(p)) return p;
    }
    auto p = dir_ / (image_digest(img) + std::string(ext));
    if (std::filesystem::exists(p)) return p;
    return std::nullopt;
  }

  std::filesystem::path dir_;
};

inline std::optional<NamedLandmarks> detect_landmarks(const LandmarkBackend& backend, const ImageBuffer& img,
                                                      std::string_view key = {}) {
  auto lm = backend.landmarks(img, key);
  if (lm) lm->validate(img.width(), img.height());
  return lm;
}

/// Highest-confidence eye; ties keep the earliest candidate.
inline std::optional<EyeBox> detect_single_eye(const EyeBackend& backend, const ImageBuffer& img,
                                               std::string_view key = {}) {
  const auto candidates = backend.eyes(img, key);
  const EyeCandidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!std::isfinite(c.confidence)) {
      throw Error(ErrorCode::BackendError, "eye candidate with non-finite confidence");
    }
    if (best == nullptr || c.confidence > best->confidence) best = &c;
  }
  if (best == nullptr) return std::nullopt;
  if (best->rect.w > 0 && best->rect.h > 0 && !best->rect.contained_in(img.width(), img.height())) {
    throw Error(ErrorCode::BackendError, "eye box outside image");
  }
  return EyeBox{best->rect};
}

// ---------------------------------------------------------------------------
// Geometry

/// Patch placement ratios, in units of inter-eye distance D.
struct LandmarkGeometry {
  double forehead_top = 0.9;     // above the higher brow
  double forehead_bottom = 0.1;
  double cheek_outer_inset = 0.05;
  double cheek_inner_gap = 0.1;  // gap from the eye center toward the nose
  double cheek_top = 0.4;        // below the eye center
  double chin_top = 0.15;        // below the lower mouth corner
};

struct EyeFallbackGeometry {
  double eye_width_to_d = 2.2;
  double forehead_half_width = 0.5;
  double forehead_top = 1.1;
  double forehead_bottom = 0.35;
  double cheek_half_width = 0.35;
  double cheek_top = 0.4;
  double cheek_bottom = 1.1;
  double chin_center = 2.8;      // below the eye line
  double chin_half_height = 0.3;
  double chin_half_width = 0.4;
  double chin_toward_center = 0.6;  // horizontal offset toward the face middle
};

struct GeometryConfig {
  LandmarkGeometry landmarks;
  EyeFallbackGeometry eye;
  double min_area_fraction = 0.5;
};

namespace detail {

struct NominalPatch {
  PatchKind kind;
  double x0, y0, x1, y1;
};

inline Rect nominal_rect(const NominalPatch& n) {
  const auto x0 = static_cast<int>(std::lround(n.x0));
  const auto y0 = static_cast<int>(std::lround(n.y0));
  const auto x1 = static_cast<int>(std::lround(n.x1));
  const auto y1 = static_cast<int>(std::lround(n.y1));
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

inline std::vector<SkinPatch> clip_and_crop(std::span<const NominalPatch> nominal, const ImageBuffer& img,
                                            double min_fraction, ExtractionPath path) {
  std::vector<SkinPatch> out;
  const Rect bounds{0, 0, img.width(), img.height()};
  for (const auto& n : nominal) {
    const Rect r = nominal_rect(n);
    if (r.w <= 0 || r.h <= 0) continue;
    const Rect clipped = r.intersect(bounds);
    if (clipped.area() == 0 ||
        static_cast<double>(clipped.area()) < min_fraction * static_cast<double>(r.area())) {
      continue;
    }
    out.push_back(SkinPatch{n.kind, clipped, crop(img, clipped), std::nullopt, path, 0});
  }
  if (out.size() < 2) {
    throw Error(ErrorCode::GeometryError,
                "InsufficientSkinArea: only " + std::to_string(out.size()) + " viable patch(es)");
  }
  return out;
}

}  // namespace detail

inline std::vector<SkinPatch> patches_from_landmarks(const NamedLandmarks& lm, const ImageBuffer& img,
                                                     const GeometryConfig& cfg = {}) {
  lm.validate(img.width(), img.height());
  const auto& g = cfg.landmarks;
  const double d = lm.inter_eye_distance();
  const double brow_y = std::min(lm.left_brow_top.y, lm.right_brow_top.y);
  const double mouth_y = std::max(lm.mouth_left.y, lm.mouth_right.y);

  const std::array<detail::NominalPatch, 4> nominal = {{
      {PatchKind::Forehead, lm.left_brow_top.x, brow_y - g.forehead_top * d, lm.right_brow_top.x,
       brow_y - g.forehead_bottom * d},
      {PatchKind::LeftCheek, lm.face_left.x + g.cheek_outer_inset * d, lm.left_eye_center.y + g.cheek_top * d,
       lm.left_eye_center.x - g.cheek_inner_gap * d, lm.mouth_left.y},
      {PatchKind::RightCheek, lm.right_eye_center.x + g.cheek_inner_gap * d,
       lm.right_eye_center.y + g.cheek_top * d, lm.face_right.x - g.cheek_outer_inset * d, lm.mouth_right.y},
      {PatchKind::Chin, lm.mouth_left.x, mouth_y + g.chin_top * d, lm.mouth_right.x, lm.chin_bottom.y},
  }};
  return detail::clip_and_crop(nominal, img, cfg.min_area_fraction, ExtractionPath::Landmarks);
}

/// Single-eye fallback. The eye's image half decides which cheek is visible.
inline std::vector<SkinPatch> patches_from_eye(const EyeBox& eye, const ImageBuffer& img,
                                               const GeometryConfig& cfg = {}) {
  if (eye.rect.w <= 0 || eye.rect.h <= 0) {
    throw Error(ErrorCode::GeometryError, "degenerate eye box");
  }
  const auto& g = cfg.eye;
  const double d = g.eye_width_to_d * eye.rect.w;
  const double cx = eye.rect.x + eye.rect.w / 2.0;
  const double cy = eye.rect.y + eye.rect.h / 2.0;
  const bool viewer_left = cx < img.width() / 2.0;
  const double toward_center = viewer_left ? g.chin_toward_center * d : -g.chin_toward_center * d;
  const double chin_cx = cx + toward_center;

  const std::array<detail::NominalPatch, 3> nominal = {{
      {PatchKind::Forehead, cx - g.forehead_half_width * d, cy - g.forehead_top * d,
       cx + g.forehead_half_width * d, cy - g.forehead_bottom * d},
      {viewer_left ? PatchKind::LeftCheek : PatchKind::RightCheek, cx - g.cheek_half_width * d,
       cy + g.cheek_top * d, cx + g.cheek_half_width * d, cy + g.cheek_bottom * d},
      {PatchKind::Chin, chin_cx - g.chin_half_width * d, cy + (g.chin_center - g.chin_half_height) * d,
       chin_cx + g.chin_half_width * d, cy + (g.chin_center + g.chin_half_height) * d},
  }};
  return detail::clip_and_crop(nominal, img, cfg.min_area_fraction, ExtractionPath::SingleEye);
}

/// Landmarks first, then the single-eye model, else NoFaceFound.
inline std::vector<SkinPatch> extract_patches(const LandmarkBackend& landmark_backend, const EyeBackend& eye_backend,
                                              const ImageBuffer& img, std::string_view key = {},
                                              std::optional<SeverityLabel> label = std::nullopt,
                                              const GeometryConfig& cfg = {}) {
  std::vector<SkinPatch> patches;
  if (const auto lm = detect_landmarks(landmark_backend, img, key)) {
    patches = patches_from_landmarks(*lm, img, cfg);
  } else if (const auto eye = detect_single_eye(eye_backend, img, key)) {
    patches = patches_from_eye(*eye, img, cfg);
  } else {
    throw Error(ErrorCode::NoFaceFound, "no face landmarks and no eye detected");
  }
  for (auto& p : patches) p.label = label;
  return patches;
}

/// Debug overlay: the source image with one colored outline per patch.
inline ImageBuffer draw_patch_overlay(const ImageBuffer& img, std::span<const SkinPatch> patches) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 4> kColors = {
      {{255, 64, 64}, {64, 200, 64}, {64, 128, 255}, {255, 200, 0}}};
  ImageBuffer out = img;
  const int thickness = std::max(1, std::min(img.width(), img.height()) / 200);
  for (const auto& p : patches) {
    draw_rect(out, p.source_rect, kColors[static_cast<std::size_t>(p.kind)], thickness);
  }
  return out;
}

}  // namespace acnescore
