#pragma once

#include <array>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "acnescore/config.hpp"
#include "acnescore/core.hpp"
#include "acnescore/image.hpp"
#include "acnescore/io.hpp"

namespace acnescore {

inline constexpr std::size_t kPanelSize = 11;

struct LabeledImage {
  std::string image_id;
  std::filesystem::path path;
  std::string rater_id;
  SeverityLabel label;
};

enum class RejectReason { ExcludedClass, OutOfRange };

constexpr std::string_view to_string(RejectReason r) {
  return r == RejectReason::ExcludedClass ? "ExcludedClass" : "OutOfRange";
}

struct RejectedRow {
  std::size_t line = 0;
  std::string image_id;
  int label = 0;
  RejectReason reason = RejectReason::OutOfRange;
};

struct Manifest {
  std::vector<LabeledImage> accepted;
  std::vector<RejectedRow> rejected;

  std::size_t total_rows() const { return accepted.size() + rejected.size(); }
};

namespace detail {

inline std::filesystem::path resolve_relative(const std::filesystem::path& base_file,
                                              const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || !base_file.has_parent_path()) return path;
  return base_file.parent_path() / path;
}

inline Error manifest_error(std::size_t line, const std::string& cause) {
  return Error(ErrorCode::ManifestError, "line " + std::to_string(line) + ": " + cause);
}

}  // namespace detail

/// Reads a training manifest `image_id,path,rater_id,label`. Relative image
/// paths are resolved against the manifest's directory. Grade-0 and
/// out-of-range rows are returned in `rejected`, not thrown.
inline Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "no such manifest " + path.string());
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw detail::manifest_error(1, "missing header");
  const auto header = io::split_csv(lines.front());
  if (header != std::vector<std::string>{"image_id", "path", "rater_id", "label"}) {
    throw detail::manifest_error(1, "header must be image_id,path,rater_id,label");
  }

  Manifest out;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (io::trim(lines[i]).empty()) continue;
    const auto fields = io::split_csv(lines[i]);
    if (fields.size() != 4) {
      throw detail::manifest_error(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw detail::manifest_error(line_no, "empty image_id, path, or rater_id");
    }
    const auto label = io::parse_number<int>(fields[3]);
    if (!label) throw detail::manifest_error(line_no, "label '" + fields[3] + "' is not an integer");
    if (!seen.emplace(fields[0], fields[2]).second) {
      throw detail::manifest_error(line_no, "duplicate label for image " + fields[0] + " by rater " + fields[2]);
    }
    if (*label == 0) {
      out.rejected.push_back({line_no, fields[0], 0, RejectReason::ExcludedClass});
    } else if (*label < 1 || *label > 5) {
      out.rejected.push_back({line_no, fields[0], *label, RejectReason::OutOfRange});
    } else {
      out.accepted.push_back(
          {fields[0], detail::resolve_relative(path, fields[1]), fields[2], SeverityLabel(*label)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quality filter

struct QualityConfig {
  double luma_lo = 30.0;
  double luma_hi = 225.0;
  int min_side = 256;

  static QualityConfig from(const KeyValueConfig& kv) {
    QualityConfig cfg;
    cfg.luma_lo = kv.get_number<double>("luma_lo", cfg.luma_lo);
    cfg.luma_hi = kv.get_number<double>("luma_hi", cfg.luma_hi);
    cfg.min_side = kv.get_number<int>("min_side", cfg.min_side);
    return cfg;
  }

  static QualityConfig load(const std::filesystem::path& path) {
    return from(KeyValueConfig::load(path, {"luma_lo", "luma_hi", "min_side"}));
  }
};

enum class QualityReason { OK, Underexposed, Overexposed, LowResolution };

constexpr std::string_view to_string(QualityReason r) {
  switch (r) {
    case QualityReason::OK: return "OK";
    case QualityReason::Underexposed: return "Underexposed";
    case QualityReason::Overexposed: return "Overexposed";
    case QualityReason::LowResolution: return "LowResolution";
  }
  return "Unknown";
}

struct QualityVerdict {
  bool keep = true;
  QualityReason reason = QualityReason::OK;
};

inline QualityVerdict quality_filter(const ImageBuffer& img, const QualityConfig& cfg = {}) {
  const double mean = mean_luma(img);
  QualityReason reason = QualityReason::OK;
  if (mean < cfg.luma_lo) {
    reason = QualityReason::Underexposed;
  } else if (mean > cfg.luma_hi) {
    reason = QualityReason::Overexposed;
  } else if (std::min(img.width(), img.height()) < cfg.min_side) {
    reason = QualityReason::LowResolution;
  }
  return {reason == QualityReason::OK, reason};
}

// ---------------------------------------------------------------------------
// Class distribution

struct ClassHistogram {
  std::array<std::size_t, 5> counts{};

  std::size_t operator[](SeverityLabel label) const { return counts[label.index()]; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  friend bool operator==(const ClassHistogram&, const ClassHistogram&) = default;
};

inline ClassHistogram class_distribution(std::span<const SeverityLabel> items) {
  ClassHistogram h;
  for (const auto& label : items) ++h.counts[label.index()];
  return h;
}

// ---------------------------------------------------------------------------
// Golden set

struct GoldenRecord {
  std::string image_id;
  std::filesystem::path path;
  std::vector<std::pair<std::string, SeverityLabel>> labels;  // column order
  SeverityScore consensus;

  /// Validates 11 distinct raters and computes the unrounded mean.
  static GoldenRecord make(std::string image_id, std::filesystem::path path,
                           std::vector<std::pair<std::string, SeverityLabel>> labels) {
    if (labels.size() != kPanelSize) {
      throw Error(ErrorCode::GoldenFormatError, "image " + image_id + " has " +
                                                    std::to_string(labels.size()) + " labels, expected 11");
    }
    std::set<std::string> raters;
    double sum = 0.0;
    for (const auto& [rater, label] : labels) {
      if (!raters.insert(rater).second) {
        throw Error(ErrorCode::GoldenFormatError, "duplicate rater " + rater + " on image " + image_id);
      }
      sum += label.value();
    }
    GoldenRecord rec{std::move(image_id), std::move(path), std::move(labels), {}};
    rec.consensus = SeverityScore::clamped(sum / static_cast<double>(kPanelSize));
    return rec;
  }

  const SeverityLabel* label_of(const std::string& rater) const {
    for (const auto& [r, l] : labels) {
      if (r == rater) return &l;
    }
    return nullptr;
  }
};

/// Reads `image_id,path,label_1,...,label_11`; rater ids are the label column names.
inline std::vector<GoldenRecord> build_golden(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "no such golden file " + path.string());
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw Error(ErrorCode::GoldenFormatError, "missing header");
  const auto header = io::split_csv(lines.front());
  if (header.size() != 2 + kPanelSize || header[0] != "image_id" || header[1] != "path") {
    throw Error(ErrorCode::GoldenFormatError, "header must be image_id,path followed by 11 label columns");
  }
  const std::vector<std::string> raters(header.begin() + 2, header.end());

  std::vector<GoldenRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto fields = io::split_csv(lines[i]);
    const std::string where = "line " + std::to_string(i + 1) + ": ";
    if (fields.size() < 2 || fields.size() - 2 != kPanelSize) {
      throw Error(ErrorCode::GoldenFormatError,
                  where + "expected 11 labels, got " + std::to_string(fields.size() < 2 ? 0 : fields.size() - 2));
    }
    std::vector<std::pair<std::string, SeverityLabel>> labels;
    for (std::size_t k = 0; k < kPanelSize; ++k) {
      const auto v = io::parse_number<int>(fields[2 + k]);
      if (!v || *v < 1 || *v > 5) {
        throw Error(ErrorCode::GoldenFormatError, where + "label '" + fields[2 + k] + "' not in 1..5");
      }
      labels.emplace_back(raters[k], SeverityLabel(*v));
    }
    out.push_back(GoldenRecord::make(fields[0], detail::resolve_relative(path, fields[1]), std::move(labels)));
  }
  return out;
}

}  // namespace acnescore
