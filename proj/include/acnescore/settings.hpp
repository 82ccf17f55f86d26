#pragma once

// The key=value settings shared by the CLI and the service, and construction
// of a ScoringPipeline from them.

#include <filesystem>
#include <memory>
#include <set>
#include <string>

#include "acnescore/augmentation.hpp"
#include "acnescore/config.hpp"
#include "acnescore/cv_backends.hpp"
#include "acnescore/dataset.hpp"
#include "acnescore/embedding.hpp"
#include "acnescore/face_patches.hpp"
#include "acnescore/head.hpp"
#include "acnescore/scoring.hpp"

namespace acnescore {

inline const std::set<std::string>& known_setting_keys() {
  static const std::set<std::string> keys = {
      // service
      "listen_addr", "backbone_path", "head_path", "max_body_bytes", "store_path", "retain_images", "retain_dir",
      "strict_users", "max_concurrent",
      // detectors
      "landmark_dir", "face_cascade", "landmark_model", "eye_cascade",
      // embedding
      "test_backend", "embedding_dim", "projection_grid", "projection_seed", "patch_side", "backbone_output",
      // dataset quality filter
      "luma_lo", "luma_hi", "min_side",
      // training
      "learning_rate", "batch_size", "epochs", "seed", "validation_fraction",
      // augmentation
      "n_mild", "n_max"};
  return keys;
}

inline KeyValueConfig load_settings(const std::filesystem::path& path) {
  return KeyValueConfig::load(path, known_setting_keys());
}

struct DetectorBackends {
  std::shared_ptr<const LandmarkBackend> landmarks;
  std::shared_ptr<const EyeBackend> eyes;
};

/// Sidecar annotations when `landmark_dir` is set, otherwise OpenCV models.
inline DetectorBackends make_detectors(const KeyValueConfig& kv) {
  DetectorBackends out;
  if (kv.contains("landmark_dir")) {
    auto sidecar = std::make_shared<const SidecarBackend>(kv.get_string("landmark_dir"));
    out.landmarks = sidecar;
    out.eyes = sidecar;
    return out;
  }
  if (!kv.contains("face_cascade") || !kv.contains("landmark_model")) {
    throw Error(ErrorCode::BackendError, "no landmark backend configured (set landmark_dir, or face_cascade and landmark_model)");
  }
  if (!kv.contains("eye_cascade")) {
    throw Error(ErrorCode::BackendError, "no eye backend configured (set eye_cascade)");
  }
  out.landmarks =
      std::make_shared<const LbfLandmarkBackend>(kv.get_string("face_cascade"), kv.get_string("landmark_model"));
  out.eyes = std::make_shared<const HaarEyeBackend>(kv.get_string("eye_cascade"));
  return out;
}

inline std::shared_ptr<const EmbeddingBackend> make_embedder(const KeyValueConfig& kv) {
  const int side = kv.get_number<int>("patch_side", 224);
  if (kv.get_bool("test_backend", false)) {
    RandomProjectionBackend::Options opts;
    opts.dimension = kv.get_number<std::size_t>("embedding_dim", 256);
    opts.input_side = side;
    opts.grid = kv.get_number<int>("projection_grid", 16);
    opts.seed = kv.get_number<std::uint64_t>("projection_seed", opts.seed);
    return std::make_shared<const RandomProjectionBackend>(opts);
  }
  if (!kv.contains("backbone_path")) {
    throw Error(ErrorCode::BackendError, "no embedding backend configured (set backbone_path or test_backend)");
  }
  OnnxBackend::Options opts;
  opts.model_path = kv.get_string("backbone_path");
  opts.input_side = side;
  opts.output_layer = kv.get_string("backbone_output");
  return std::make_shared<const OnnxBackend>(opts);
}

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig cfg;
  cfg.learning_rate = kv.get_number<double>("learning_rate", cfg.learning_rate);
  cfg.batch_size = kv.get_number<std::size_t>("batch_size", cfg.batch_size);
  cfg.epochs = kv.get_number<std::size_t>("epochs", cfg.epochs);
  cfg.seed = kv.get_number<std::uint64_t>("seed", cfg.seed);
  cfg.validation_fraction = kv.get_number<double>("validation_fraction", cfg.validation_fraction);
  cfg.validate();
  return cfg;
}

inline std::shared_ptr<const ScoringPipeline> make_pipeline(const KeyValueConfig& kv) {
  if (!kv.contains("head_path")) throw Error(ErrorCode::BackendError, "no head artifact configured (set head_path)");
  const std::filesystem::path head_path = kv.get_string("head_path");
  if (!std::filesystem::exists(head_path)) {
    throw Error(ErrorCode::BackendError, "head artifact missing: " + head_path.string());
  }
  auto detectors = make_detectors(kv);
  return std::make_shared<const ScoringPipeline>(detectors.landmarks, detectors.eyes, make_embedder(kv),
                                                 load_head(head_path));
}

}  // namespace acnescore
