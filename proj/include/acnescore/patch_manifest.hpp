#pragma once

// CSV index of patch images on disk: patch_path,image_id,kind,shift,label.
// Paths are stored relative to the manifest's directory; label may be empty.

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acnescore/core.hpp"
#include "acnescore/dataset.hpp"
#include "acnescore/face_patches.hpp"
#include "acnescore/image.hpp"
#include "acnescore/io.hpp"

namespace acnescore {

struct PatchRow {
  std::filesystem::path patch_path;
  std::string image_id;
  PatchKind kind = PatchKind::Forehead;
  int shift = 0;
  std::optional<SeverityLabel> label;
};

inline constexpr std::string_view kPatchManifestHeader = "patch_path,image_id,kind,shift,label";

inline std::string patch_manifest_text(std::span<const PatchRow> rows) {
  std::ostringstream os;
  os << kPatchManifestHeader << '\n';
  for (const auto& r : rows) {
    os << r.patch_path.generic_string() << ',' << r.image_id << ',' << to_string(r.kind) << ',' << r.shift << ',';
    if (r.label) os << r.label->value();
    os << '\n';
  }
  return os.str();
}

/// Returned paths are resolved against the manifest's directory.
inline std::vector<PatchRow> load_patch_manifest(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || io::trim(lines[0]) != kPatchManifestHeader) {
    throw Error(ErrorCode::ManifestError, path.string() + ": expected header '" + std::string(kPatchManifestHeader) + "'");
  }
  std::vector<PatchRow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split_csv(lines[i]);
    if (f.size() != 5) throw detail::manifest_error(i + 1, "expected 5 fields, found " + std::to_string(f.size()));
    PatchRow row;
    row.patch_path = detail::resolve_relative(path, f[0]);
    row.image_id = f[1];
    row.kind = parse_patch_kind(f[2]);
    const auto shift = io::parse_number<int>(f[3]);
    if (!shift || *shift < 0) throw detail::manifest_error(i + 1, "bad shift '" + f[3] + "'");
    row.shift = *shift;
    if (!f[4].empty()) {
      const auto label = io::parse_number<int>(f[4]);
      if (!label || *label < 1 || *label > 5) throw detail::manifest_error(i + 1, "bad label '" + f[4] + "'");
      row.label = SeverityLabel(*label);
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline SkinPatch load_patch(const PatchRow& row) {
  SkinPatch p;
  p.kind = row.kind;
  p.pixels = read_image(row.patch_path);
  p.source_rect = Rect{0, 0, p.pixels.width(), p.pixels.height()};
  p.label = row.label;
  p.shift = row.shift;
  return p;
}

}  // namespace acnescore
