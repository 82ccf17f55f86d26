#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "acnescore/core.hpp"
#include "acnescore/dataset.hpp"
#include "acnescore/face_patches.hpp"

namespace acnescore {

enum class RollAxis { Horizontal, Vertical };

struct RollSpec {
  RollAxis axis = RollAxis::Horizontal;
  int roll_size = 0;
};

/// Step between rolled copies: X pixels along the rolling direction split
/// into N+1 positions, truncating.
constexpr int roll_size(int extent, int rolls) { return extent / (rolls + 1); }

/// Foreheads roll right-to-left; cheeks and chin roll bottom-to-top.
constexpr RollAxis roll_direction_for(PatchKind kind) {
  return kind == PatchKind::Forehead ? RollAxis::Horizontal : RollAxis::Vertical;
}

inline int extent_along(const ImageBuffer& img, RollAxis axis) {
  return axis == RollAxis::Horizontal ? img.width() : img.height();
}

/// Circular shift. Horizontal: out column j = in column (j + s) mod w.
/// Vertical: out row i = in row (i + s) mod h.
inline ImageBuffer roll_patch(const ImageBuffer& patch, const RollSpec& spec) {
  const int extent = extent_along(patch, spec.axis);
  if (spec.roll_size < 0 || spec.roll_size >= extent) {
    throw Error(ErrorCode::RollSpecError, "roll size " + std::to_string(spec.roll_size) +
                                              " not in [0, " + std::to_string(extent) + ")");
  }
  if (spec.roll_size == 0) return patch;

  ImageBuffer out(patch.width(), patch.height());
  const auto src = patch.pixels();
  auto dst = out.pixels();
  const auto s = static_cast<std::size_t>(spec.roll_size);
  const auto w = static_cast<std::size_t>(patch.width());
  const auto h = static_cast<std::size_t>(patch.height());
  const std::size_t row = w * 3;
  if (spec.axis == RollAxis::Horizontal) {
    for (std::size_t y = 0; y < h; ++y) {
      const auto* in = src.data() + y * row;
      auto* o = dst.data() + y * row;
      std::copy(in + s * 3, in + row, o);
      std::copy(in, in + s * 3, o + (w - s) * 3);
    }
  } else {
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(s * row), src.end(), dst.begin());
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(s * row),
              dst.begin() + static_cast<std::ptrdiff_t>((h - s) * row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class balancing

struct AugmentationPlan {
  std::array<int, 5> rolls_per_class{};
  std::array<int, 5> uncapped{};  // before applying the cap, for reporting
  int cap = 10;
  std::size_t target = 0;

  int rolls_for(SeverityLabel label) const { return rolls_per_class[label.index()]; }

  /// Patch count per class after augmentation for input histogram `h`.
  std::array<std::size_t, 5> achieved(const ClassHistogram& h) const {
    std::array<std::size_t, 5> out{};
    for (std::size_t c = 0; c < 5; ++c) out[c] = h.counts[c] * static_cast<std::size_t>(rolls_per_class[c] + 1);
    return out;
  }
};

/// Target T = (n_mild + 1) x count of the modal class (Mild when it is
/// modal or tied). Each class rolls ceil(T / count) - 1 times, capped at
/// n_max; Mild always rolls n_mild times.
inline AugmentationPlan balance_plan(const ClassHistogram& hist, int n_mild = 2, int n_max = 10) {
  if (hist.total() == 0) throw Error(ErrorCode::EmptyDataset, "class histogram is empty");
  if (n_mild < 0 || n_max < 0) throw Error(ErrorCode::RollSpecError, "roll counts must be non-negative");
  constexpr std::size_t kMild = 2;
  const std::size_t modal = *std::max_element(hist.counts.begin(), hist.counts.end());
  const std::size_t anchor = hist.counts[kMild] == modal ? hist.counts[kMild] : modal;

  AugmentationPlan plan;
  plan.cap = n_max;
  plan.target = static_cast<std::size_t>(n_mild + 1) * anchor;
  for (std::size_t c = 0; c < 5; ++c) {
    const std::size_t count = hist.counts[c];
    if (count == 0) continue;
    if (c == kMild) {
      plan.uncapped[c] = n_mild;
      plan.rolls_per_class[c] = n_mild;
      continue;
    }
    const std::size_t groups = (plan.target + count - 1) / count;
    const int wanted = groups == 0 ? 0 : static_cast<int>(groups - 1);
    plan.uncapped[c] = wanted;
    plan.rolls_per_class[c] = std::min(n_max, wanted);
  }
  return plan;
}

/// Each labeled patch becomes itself plus N rolled copies; copy k is shifted
/// by k x roll_size(extent, N) along the kind's axis. Order: input order,
/// then k ascending.
inline std::vector<SkinPatch> augment_patch_set(std::span<const SkinPatch> patches, const AugmentationPlan& plan) {
  std::vector<SkinPatch> out;
  for (const auto& p : patches) {
    if (!p.label) throw Error(ErrorCode::MissingLabel, "patch without label cannot be augmented");
  }
  for (const auto& p : patches) {
    const int n = plan.rolls_for(*p.label);
    const RollAxis axis = roll_direction_for(p.kind);
    const int step = roll_size(extent_along(p.pixels, axis), n);
    out.push_back(p);
    for (int k = 1; k <= n; ++k) {
      SkinPatch copy = p;
      copy.shift = k * step;
      copy.pixels = roll_patch(p.pixels, RollSpec{axis, copy.shift});
      out.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace acnescore
