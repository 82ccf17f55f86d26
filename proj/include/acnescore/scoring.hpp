#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "acnescore/core.hpp"
#include "acnescore/embedding.hpp"
#include "acnescore/face_patches.hpp"
#include "acnescore/head.hpp"
#include "acnescore/image.hpp"

namespace acnescore {

inline constexpr std::array<double, 4> kClassBoundaries = {1.5, 2.5, 3.5, 4.5};

/// Half-open cells [1,1.5) [1.5,2.5) [2.5,3.5) [3.5,4.5) [4.5,5]; a value on
/// a boundary goes to the upper class.
inline SeverityLabel discretize(SeverityScore s) {
  const auto it = std::upper_bound(kClassBoundaries.begin(), kClassBoundaries.end(), s.value());
  return SeverityLabel(1 + static_cast<int>(it - kClassBoundaries.begin()));
}

struct PatchScore {
  PatchKind kind = PatchKind::Forehead;
  Rect rect;
  double raw = 0.0;
  SeverityScore score;  // clamped raw
};

struct ImageScore {
  std::string image_id;
  std::vector<PatchScore> patch_scores;
  ExtractionPath path = ExtractionPath::Landmarks;
  SeverityScore final_score;
  SeverityLabel severity{1};
};

/// Mean of raw patch scores, then clamp. The values are summed in sorted
/// order so the result does not depend on patch order.
inline SeverityScore combine_patch_scores(std::vector<double> raw) {
  if (raw.empty()) throw Error(ErrorCode::EmptyInput, "no patch scores to combine");
  std::sort(raw.begin(), raw.end());
  double sum = 0.0;
  for (double r : raw) sum += r;
  return clamp_score(sum / static_cast<double>(raw.size()));
}

inline ImageScore make_image_score(std::string image_id, std::vector<PatchScore> patches, ExtractionPath path) {
  std::vector<double> raw;
  raw.reserve(patches.size());
  for (const auto& p : patches) raw.push_back(p.raw);
  ImageScore out;
  out.image_id = std::move(image_id);
  out.final_score = combine_patch_scores(std::move(raw));
  out.severity = discretize(out.final_score);
  out.patch_scores = std::move(patches);
  out.path = path;
  return out;
}

struct ScoringOptions {
  GeometryConfig geometry;
};

/// Everything needed to score a selfie. Calls into backends that do not
/// declare themselves concurrency-safe are serialized here.
class ScoringPipeline {
 public:
  ScoringPipeline(std::shared_ptr<const LandmarkBackend> landmarks, std::shared_ptr<const EyeBackend> eyes,
                  std::shared_ptr<const EmbeddingBackend> embedder, Head head, ScoringOptions opts = {})
      : landmarks_(std::move(landmarks)),
        eyes_(std::move(eyes)),
        embedder_(std::move(embedder)),
        head_(std::move(head)),
        opts_(opts),
        head_version_(head_version(head_)) {
    if (head_.input_dim() != embedder_->dimension()) {
      throw Error(ErrorCode::InputShapeError, "head expects d=" + std::to_string(head_.input_dim()) +
                                                  " but embedding backend produces d=" +
                                                  std::to_string(embedder_->dimension()));
    }
  }

  std::vector<SkinPatch> extract(const ImageBuffer& img, std::string_view key = {}) const {
    std::unique_lock<std::mutex> lm_lock(landmark_mutex_, std::defer_lock);
    std::unique_lock<std::mutex> eye_lock(eye_mutex_, std::defer_lock);
    if (!landmarks_->concurrent_safe()) lm_lock.lock();
    if (!eyes_->concurrent_safe()) eye_lock.lock();
    return extract_patches(*landmarks_, *eyes_, img, key, std::nullopt, opts_.geometry);
  }

  double raw_patch_score(const ImageBuffer& native_patch) const {
    const auto resized = resize_square(native_patch, embedder_->input_side());
    std::unique_lock<std::mutex> lock(embed_mutex_, std::defer_lock);
    if (!embedder_->concurrent_safe()) lock.lock();
    const auto e = embed(*embedder_, resized);
    lock = {};
    return static_cast<double>(head_.forward(e.values));
  }

  /// No augmentation: every extracted patch is scored once.
  ImageScore score(const ImageBuffer& img, std::string image_id = {}, std::string_view key = {}) const {
    const auto patches = extract(img, key.empty() ? std::string_view(image_id) : key);
    std::vector<PatchScore> scores;
    for (const auto& p : patches) {
      const double raw = raw_patch_score(p.pixels);
      scores.push_back({p.kind, p.source_rect, raw, clamp_score(raw)});
    }
    return make_image_score(std::move(image_id), std::move(scores), patches.front().path);
  }

  const Head& head() const { return head_; }
  const EmbeddingBackend& embedder() const { return *embedder_; }
  const std::string& version_of_head() const { return head_version_; }
  std::string version() const {
    return "acnescore-" + std::string(kVersion) + "+" + embedder_->name() + "+head-" + head_version_;
  }
  bool concurrent_safe() const {
    return landmarks_->concurrent_safe() && eyes_->concurrent_safe() && embedder_->concurrent_safe();
  }

 private:
  std::shared_ptr<const LandmarkBackend> landmarks_;
  std::shared_ptr<const EyeBackend> eyes_;
  std::shared_ptr<const EmbeddingBackend> embedder_;
  Head head_;
  ScoringOptions opts_;
  std::string head_version_;
  mutable std::mutex landmark_mutex_;
  mutable std::mutex eye_mutex_;
  mutable std::mutex embed_mutex_;
};

/// Free-function form of the whole-image scorer.
inline ImageScore score_image(const ImageBuffer& img, const LandmarkBackend& landmarks, const EyeBackend& eyes,
                              const EmbeddingBackend& embedder, const Head& head, std::string image_id = {},
                              const ScoringOptions& opts = {}) {
  if (head.input_dim() != embedder.dimension()) {
    throw Error(ErrorCode::InputShapeError, "head expects d=" + std::to_string(head.input_dim()) +
                                                " but embedding backend produces d=" +
                                                std::to_string(embedder.dimension()));
  }
  const auto patches = extract_patches(landmarks, eyes, img, image_id, std::nullopt, opts.geometry);
  std::vector<PatchScore> scores;
  for (const auto& p : patches) {
    const auto e = embed(embedder, resize_square(p.pixels, embedder.input_side()));
    const double raw = static_cast<double>(head.forward(e.values));
    scores.push_back({p.kind, p.source_rect, raw, clamp_score(raw)});
  }
  return make_image_score(std::move(image_id), std::move(scores), patches.front().path);
}

}  // namespace acnescore
