#pragma once

// Procedural stand-ins for selfies and skin patches: flat-shaded faces with
// known landmark positions, and skin squares with a controlled number of
// lesion disks.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <vector>

#include "acnescore/core.hpp"
#include "acnescore/face_patches.hpp"
#include "acnescore/io.hpp"

namespace acnescore::synthetic {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kSkin = {224, 180, 150};
inline constexpr Rgb kLesion = {150, 45, 50};
inline constexpr Rgb kBackground = {92, 112, 138};

inline void fill_disk(ImageBuffer& img, double cx, double cy, double r, Rgb color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img.set(x, y, color);
    }
  }
}

inline void fill_ellipse(ImageBuffer& img, double cx, double cy, double rx, double ry, Rgb color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double u = (x - cx) / rx;
      const double v = (y - cy) / ry;
      if (u * u + v * v <= 1.0) img.set(x, y, color);
    }
  }
}

inline void fill_rect(ImageBuffer& img, const Rect& r, Rgb color) {
  const Rect c = r.intersect(Rect{0, 0, img.width(), img.height()});
  for (int y = c.y; y < c.y + c.h; ++y) {
    for (int x = c.x; x < c.x + c.w; ++x) img.set(x, y, color);
  }
}

struct FaceFixture {
  ImageBuffer image;
  NamedLandmarks landmarks;
  std::vector<Point> lesions;
};

/// Frontal face centred in a square image of side `side`; all coordinates
/// scale with side/512. Lesions land on the forehead, cheeks and chin.
inline FaceFixture frontal_face(int side = 512, int lesion_count = 0, std::uint64_t seed = 1) {
  const double s = side / 512.0;
  FaceFixture f{ImageBuffer(side, side), {}, {}};
  fill_rect(f.image, Rect{0, 0, side, side}, kBackground);
  fill_ellipse(f.image, 256 * s, 270 * s, 150 * s, 200 * s, kSkin);

  auto& lm = f.landmarks;
  lm.left_eye_center = {196 * s, 220 * s};
  lm.right_eye_center = {316 * s, 220 * s};
  lm.nose_tip = {256 * s, 300 * s};
  lm.mouth_left = {216 * s, 370 * s};
  lm.mouth_right = {296 * s, 370 * s};
  lm.chin_bottom = {256 * s, 462 * s};
  lm.left_brow_top = {196 * s, 192 * s};
  lm.right_brow_top = {316 * s, 192 * s};
  lm.face_left = {106 * s, 280 * s};
  lm.face_right = {406 * s, 280 * s};

  const Rgb eye_white = {240, 240, 236};
  const Rgb iris = {60, 40, 30};
  const Rgb brow = {90, 60, 40};
  const Rgb lip = {180, 90, 90};
  for (const auto& e : {lm.left_eye_center, lm.right_eye_center}) {
    fill_ellipse(f.image, e.x, e.y, 26 * s, 12 * s, eye_white);
    fill_disk(f.image, e.x, e.y, 9 * s, iris);
  }
  for (const auto& b : {lm.left_brow_top, lm.right_brow_top}) fill_ellipse(f.image, b.x, b.y + 5 * s, 30 * s, 6 * s, brow);
  fill_ellipse(f.image, 256 * s, 370 * s, 40 * s, 10 * s, lip);
  fill_ellipse(f.image, 256 * s, 300 * s, 10 * s, 8 * s, {200, 150, 125});

  // Lesion sites: forehead, both cheeks, chin, cycled.
  const std::array<std::array<double, 4>, 4> regions = {{
      {205, 100, 310, 175}, {120, 275, 180, 360}, {332, 275, 392, 360}, {226, 395, 286, 450}}};
  std::mt19937_64 rng(seed);
  for (int i = 0; i < lesion_count; ++i) {
    const auto& r = regions[static_cast<std::size_t>(i) % regions.size()];
    std::uniform_real_distribution<double> ux(r[0] * s, r[2] * s);
    std::uniform_real_distribution<double> uy(r[1] * s, r[3] * s);
    const Point p{ux(rng), uy(rng)};
    fill_disk(f.image, p.x, p.y, 4 * s, kLesion);
    f.lesions.push_back(p);
  }
  return f;
}

/// A face turned so only one eye shows; returns the image and the eye box.
inline std::pair<ImageBuffer, Rect> profile_face(int side = 512) {
  ImageBuffer img(side, side);
  const double s = side / 512.0;
  fill_rect(img, Rect{0, 0, side, side}, kBackground);
  fill_ellipse(img, 220 * s, 270 * s, 130 * s, 200 * s, kSkin);
  const Rect eye{static_cast<int>(150 * s), static_cast<int>(190 * s), static_cast<int>(40 * s),
                 static_cast<int>(20 * s)};
  fill_ellipse(img, eye.x + eye.w / 2.0, eye.y + eye.h / 2.0, eye.w / 2.0, eye.h / 2.0, {240, 240, 236});
  fill_disk(img, eye.x + eye.w / 2.0, eye.y + eye.h / 2.0, 7 * s, {60, 40, 30});
  return {img, eye};
}

inline ImageBuffer blank(int side = 512, Rgb color = {128, 128, 128}) {
  ImageBuffer img(side, side);
  fill_rect(img, Rect{0, 0, side, side}, color);
  return img;
}

inline std::string landmark_sidecar_text(const NamedLandmarks& lm) {
  std::ostringstream os;
  os.precision(17);
  const auto f = lm.fields();
  for (std::size_t i = 0; i < f.size(); ++i) os << NamedLandmarks::kNames[i] << ' ' << f[i]->x << ' ' << f[i]->y << '\n';
  return os.str();
}

inline void write_landmark_sidecar(const std::filesystem::path& path, const NamedLandmarks& lm) {
  io::write_atomic(path, landmark_sidecar_text(lm));
}

inline void write_eye_sidecar(const std::filesystem::path& path, std::span<const EyeCandidate> eyes) {
  std::ostringstream os;
  for (const auto& e : eyes) {
    os << "eye " << e.rect.x << ' ' << e.rect.y << ' ' << e.rect.w << ' ' << e.rect.h << ' ' << e.confidence << '\n';
  }
  io::write_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Lesion patches for controlled experiments

/// Severity is a function of lesion count only: 0-1 -> 1, 2-3 -> 2, ... 8-9 -> 5.
constexpr int severity_for_count(int count) { return std::min(5, 1 + count / 2); }

struct LesionPatch {
  ImageBuffer image;
  int lesion_count = 0;
  SeverityLabel label{1};
};

struct LesionPatchOptions {
  int side = 64;
  double radius = 3.5;
  double x_min_fraction = 0.0;  // lesion centres restricted to
  double x_max_fraction = 1.0;  // [x_min, x_max) of the width
  int texture_amplitude = 6;    // uniform per-pixel skin texture, +/-
};

/// Draws `count` non-overlapping lesion disks on textured skin.
inline LesionPatch lesion_patch(int count, std::mt19937_64& rng, const LesionPatchOptions& opt = {}) {
  ImageBuffer img(opt.side, opt.side);
  std::uniform_int_distribution<int> tex(-opt.texture_amplitude, opt.texture_amplitude);
  for (int y = 0; y < opt.side; ++y) {
    for (int x = 0; x < opt.side; ++x) {
      const int t = tex(rng);
      img.set(x, y, {static_cast<std::uint8_t>(kSkin[0] + t), static_cast<std::uint8_t>(kSkin[1] + t),
                     static_cast<std::uint8_t>(kSkin[2] + t)});
    }
  }
  const double margin = opt.radius + 1.0;
  const double lo = std::max(margin, opt.x_min_fraction * opt.side);
  const double hi = std::min(opt.side - margin, opt.x_max_fraction * opt.side);
  std::uniform_real_distribution<double> ux(lo, hi);
  std::uniform_real_distribution<double> uy(margin, opt.side - margin);
  std::vector<Point> placed;
  for (int attempt = 0; static_cast<int>(placed.size()) < count && attempt < 10000; ++attempt) {
    const Point p{ux(rng), uy(rng)};
    bool clear = true;
    for (const auto& q : placed) clear = clear && distance(p, q) > 2.0 * opt.radius + 1.0;
    if (clear) placed.push_back(p);
  }
  for (const auto& p : placed) fill_disk(img, p.x, p.y, opt.radius, kLesion);
  const int drawn = static_cast<int>(placed.size());
  return {std::move(img), drawn, SeverityLabel(severity_for_count(drawn))};
}

}  // namespace acnescore::synthetic
