#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace acnescore {

inline constexpr std::string_view kVersion = "1.0.0";

// Every failure the library reports carries one of these codes. Callers that
// need to distinguish (CLI exit codes, HTTP status) switch on code().
enum class ErrorCode {
  InvalidScore,
  InvalidLabel,
  InvalidImage,
  InvalidRect,
  IoError,
  ManifestError,
  GoldenFormatError,
  ConfigError,
  ImageDecodeError,
  BackendError,
  GeometryError,
  NoFaceFound,
  RollSpecError,
  EmptyDataset,
  MissingLabel,
  InputShapeError,
  DivergenceError,
  ModelFormatError,
  ShapeError,
  EmptyInput,
  UndefinedCorrelation,
  PanelError,
  EvaluationError,
  StoreError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidScore: return "InvalidScore";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::InvalidRect: return "InvalidRect";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::GoldenFormatError: return "GoldenFormatError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ImageDecodeError: return "ImageDecodeError";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::GeometryError: return "GeometryError";
    case ErrorCode::NoFaceFound: return "NoFaceFound";
    case ErrorCode::RollSpecError: return "RollSpecError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::InputShapeError: return "InputShapeError";
    case ErrorCode::DivergenceError: return "DivergenceError";
    case ErrorCode::ModelFormatError: return "ModelFormatError";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UndefinedCorrelation: return "UndefinedCorrelation";
    case ErrorCode::PanelError: return "PanelError";
    case ErrorCode::EvaluationError: return "EvaluationError";
    case ErrorCode::StoreError: return "StoreError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Decoded 8-bit RGB raster, row-major, channels interleaved R,G,B.
class ImageBuffer {
 public:
  ImageBuffer() = default;

  ImageBuffer(int width, int height, std::uint8_t fill = 0)
      : ImageBuffer(width, height,
                    std::vector<std::uint8_t>(checked_size(width, height), fill)) {}

  ImageBuffer(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (pixels_.size() != checked_size(width, height)) {
      throw Error(ErrorCode::InvalidImage,
                  "pixel array holds " + std::to_string(pixels_.size()) + " bytes, expected " +
                      std::to_string(checked_size(width, height)));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * 3;
  }

  std::uint8_t at(int x, int y, int channel) const noexcept {
    return pixels_[offset(x, y) + static_cast<std::size_t>(channel)];
  }

  void set(int x, int y, std::array<std::uint8_t, 3> rgb) noexcept {
    const auto o = offset(x, y);
    pixels_[o] = rgb[0];
    pixels_[o + 1] = rgb[1];
    pixels_[o + 2] = rgb[2];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  static std::size_t checked_size(int width, int height) {
    if (width < 1 || height < 1) {
      throw Error(ErrorCode::InvalidImage, "image dimensions must be >= 1, got " +
                                               std::to_string(width) + "x" + std::to_string(height));
    }
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Dermatologist grade 1 (Clear) .. 5 (Severe). Grade 0 is not a severity.
class SeverityLabel {
 public:
  explicit SeverityLabel(int value) : value_(value) {
    if (value == 0) {
      throw Error(ErrorCode::InvalidLabel, "label 0 (not acne) is excluded from severity grading");
    }
    if (value < 1 || value > 5) {
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(value) + " outside 1..5");
    }
  }

  int value() const noexcept { return value_; }
  std::size_t index() const noexcept { return static_cast<std::size_t>(value_ - 1); }

  friend auto operator<=>(const SeverityLabel&, const SeverityLabel&) = default;

 private:
  int value_;
};

inline constexpr std::array<std::string_view, 5> kSeverityNames = {
    "Clear", "Almost Clear", "Mild", "Moderate", "Severe"};

inline constexpr double kMinScore = 1.0;
inline constexpr double kMaxScore = 5.0;

/// A real-valued severity on the closed interval [1, 5].
class SeverityScore {
 public:
  SeverityScore() = default;

  static SeverityScore clamped(double raw) {
    if (!std::isfinite(raw)) {
      throw Error(ErrorCode::InvalidScore, "score must be finite");
    }
    return SeverityScore(std::clamp(raw, kMinScore, kMaxScore));
  }

  double value() const noexcept { return value_; }

  friend auto operator<=>(const SeverityScore&, const SeverityScore&) = default;

 private:
  explicit SeverityScore(double v) : value_(v) {}
  double value_ = kMinScore;
};

inline SeverityScore clamp_score(double raw) { return SeverityScore::clamped(raw); }

enum class PatchKind { Forehead, LeftCheek, RightCheek, Chin };

inline constexpr std::array<PatchKind, 4> kAllPatchKinds = {
    PatchKind::Forehead, PatchKind::LeftCheek, PatchKind::RightCheek, PatchKind::Chin};

constexpr std::string_view to_string(PatchKind kind) {
  switch (kind) {
    case PatchKind::Forehead: return "forehead";
    case PatchKind::LeftCheek: return "left_cheek";
    case PatchKind::RightCheek: return "right_cheek";
    case PatchKind::Chin: return "chin";
  }
  return "unknown";
}

inline PatchKind parse_patch_kind(std::string_view text) {
  for (auto kind : kAllPatchKinds) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(ErrorCode::ManifestError, "unknown patch kind '" + std::string(text) + "'");
}

/// Pixel rectangle, top-left origin, y grows downward.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const noexcept {
    return w > 0 && h > 0 ? static_cast<long long>(w) * h : 0;
  }
  bool contained_in(int width, int height) const noexcept {
    return w >= 1 && h >= 1 && x >= 0 && y >= 0 && x + w <= width && y + h <= height;
  }
  Rect intersect(const Rect& other) const noexcept {
    const int x0 = std::max(x, other.x);
    const int y0 = std::max(y, other.y);
    const int x1 = std::min(x + w, other.x + other.w);
    const int y1 = std::min(y + h, other.y + other.h);
    return Rect{x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(b.x - a.x, b.y - a.y); }

/// 64-bit FNV-1a; used for content digests (sidecar lookup, artifact versions).
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                            std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

/// Digest of dimensions plus pixels; identical rasters share a digest.
inline std::string image_digest(const ImageBuffer& img) {
  const std::array<std::uint8_t, 8> dims = {
      static_cast<std::uint8_t>(img.width() & 0xFF), static_cast<std::uint8_t>(img.width() >> 8),
      static_cast<std::uint8_t>(img.width() >> 16), static_cast<std::uint8_t>(img.width() >> 24),
      static_cast<std::uint8_t>(img.height() & 0xFF), static_cast<std::uint8_t>(img.height() >> 8),
      static_cast<std::uint8_t>(img.height() >> 16), static_cast<std::uint8_t>(img.height() >> 24)};
  return hex64(fnv1a64(img.pixels(), fnv1a64(dims)));
}

}  // namespace acnescore
