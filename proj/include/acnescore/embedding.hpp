#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <opencv2/dnn.hpp>

#include "acnescore/core.hpp"
#include "acnescore/image.hpp"

namespace acnescore {

struct EmbeddingVector {
  std::vector<float> values;

  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> v) : values(std::move(v)) {
    for (float x : values) {
      if (!std::isfinite(x)) throw Error(ErrorCode::BackendError, "embedding contains a non-finite value");
    }
  }

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

/// Pretrained feature extractor: square RGB patch of side input_side() to a
/// fixed-length vector.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::size_t dimension() const = 0;
  virtual int input_side() const = 0;
  virtual EmbeddingVector embed_unchecked(const ImageBuffer& patch) const = 0;
  virtual bool concurrent_safe() const { return true; }
  virtual std::string name() const = 0;
};

inline EmbeddingVector embed(const EmbeddingBackend& backend, const ImageBuffer& patch) {
  const int side = backend.input_side();
  if (patch.width() != side || patch.height() != side) {
    throw Error(ErrorCode::InputShapeError, "patch is " + std::to_string(patch.width()) + "x" +
                                                std::to_string(patch.height()) + ", backend expects " +
                                                std::to_string(side) + "x" + std::to_string(side));
  }
  auto e = backend.embed_unchecked(patch);
  if (e.size() != backend.dimension()) {
    throw Error(ErrorCode::BackendError, "backend produced " + std::to_string(e.size()) + " values, declared " +
                                             std::to_string(backend.dimension()));
  }
  return e;
}

/// Deterministic stand-in for a pretrained network: the patch is reduced to
/// a grid x grid mean-luma image in [0, 1], then multiplied by a fixed
/// Rademacher matrix scaled by 1/sqrt(grid^2). Linear and bias free.
class RandomProjectionBackend final : public EmbeddingBackend {
 public:
  struct Options {
    std::size_t dimension = 256;
    int input_side = 224;
    int grid = 16;
    std::uint64_t seed = 0x5eed;
  };

  RandomProjectionBackend() : RandomProjectionBackend(Options{}) {}

  explicit RandomProjectionBackend(Options opts) : opts_(opts) {
    if (opts.dimension == 0 || opts.grid < 1 || opts.input_side < opts.grid) {
      throw Error(ErrorCode::BackendError, "invalid random projection options");
    }
    const std::size_t n = static_cast<std::size_t>(opts.grid) * static_cast<std::size_t>(opts.grid);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    projection_.resize(opts.dimension * n);
    std::mt19937_64 rng(opts.seed);
    for (std::size_t i = 0; i < projection_.size(); i += 64) {
      const std::uint64_t bits = rng();
      for (std::size_t b = 0; b < 64 && i + b < projection_.size(); ++b) {
        projection_[i + b] = ((bits >> b) & 1U) != 0 ? scale : -scale;
      }
    }
  }

  std::size_t dimension() const override { return opts_.dimension; }
  int input_side() const override { return opts_.input_side; }
  std::string name() const override {
    return "random-projection:d" + std::to_string(opts_.dimension) + ":g" + std::to_string(opts_.grid) + ":s" +
           std::to_string(opts_.seed);
  }

  /// Grid cell means of luma / 255, row-major.
  std::vector<double> downsample(const ImageBuffer& patch) const {
    const int g = opts_.grid;
    const int side = opts_.input_side;
    std::vector<double> cells(static_cast<std::size_t>(g) * static_cast<std::size_t>(g), 0.0);
    for (int gy = 0; gy < g; ++gy) {
      const int y0 = gy * side / g;
      const int y1 = (gy + 1) * side / g;
      for (int gx = 0; gx < g; ++gx) {
        const int x0 = gx * side / g;
        const int x1 = (gx + 1) * side / g;
        double sum = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) sum += luma(patch.at(x, y, 0), patch.at(x, y, 1), patch.at(x, y, 2));
        }
        cells[static_cast<std::size_t>(gy * g + gx)] = sum / (255.0 * (y1 - y0) * (x1 - x0));
      }
    }
    return cells;
  }

  EmbeddingVector embed_unchecked(const ImageBuffer& patch) const override {
    const auto cells = downsample(patch);
    std::vector<float> out(opts_.dimension);
    for (std::size_t r = 0; r < opts_.dimension; ++r) {
      const double* row = projection_.data() + r * cells.size();
      double acc = 0.0;
      for (std::size_t c = 0; c < cells.size(); ++c) acc += row[c] * cells[c];
      out[r] = static_cast<float>(acc);
    }
    return EmbeddingVector(std::move(out));
  }

  std::span<const double> projection() const { return projection_; }

 private:
  Options opts_;
  std::vector<double> projection_;
};

/// Pretrained backbone in ONNX format, executed by OpenCV's DNN module. The
/// patch is normalized per channel ((x / 255 - mean) / std, RGB order) and
/// the chosen output (default: the network's final output) is flattened.
class OnnxBackend final : public EmbeddingBackend {
 public:
  struct Options {
    std::filesystem::path model_path;
    int input_side = 224;
    std::string output_layer;  // empty: default network output
    std::array<float, 3> mean = {0.485F, 0.456F, 0.406F};
    std::array<float, 3> stddev = {0.229F, 0.224F, 0.225F};
  };

  explicit OnnxBackend(Options opts) : opts_(std::move(opts)) {
    if (!std::filesystem::exists(opts_.model_path)) {
      throw Error(ErrorCode::BackendError, "backbone artifact missing: " + opts_.model_path.string());
    }
    try {
      net_ = cv::dnn::readNetFromONNX(opts_.model_path.string());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::BackendError, "backbone artifact corrupt: " + std::string(e.what()));
    }
    if (net_.empty()) throw Error(ErrorCode::BackendError, "backbone artifact corrupt: " + opts_.model_path.string());
    dimension_ = run(ImageBuffer(opts_.input_side, opts_.input_side)).size();
    if (dimension_ == 0) throw Error(ErrorCode::BackendError, "backbone produced an empty feature vector");
  }

  std::size_t dimension() const override { return dimension_; }
  int input_side() const override { return opts_.input_side; }
  bool concurrent_safe() const override { return false; }
  std::string name() const override { return "onnx:" + opts_.model_path.filename().string(); }

  EmbeddingVector embed_unchecked(const ImageBuffer& patch) const override { return EmbeddingVector(run(patch)); }

 private:
  std::vector<float> run(const ImageBuffer& patch) const {
    const int side = opts_.input_side;
    const int dims[] = {1, 3, side, side};
    cv::Mat blob(4, dims, CV_32F);
    auto* data = blob.ptr<float>();
    const std::size_t plane = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        for (int c = 0; c < 3; ++c) {
          const float v = patch.at(x, y, c) / 255.0F;
          data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y * side + x)] =
              (v - opts_.mean[static_cast<std::size_t>(c)]) / opts_.stddev[static_cast<std::size_t>(c)];
        }
      }
    }
    std::lock_guard lock(mutex_);
    cv::Mat out;
    try {
      net_.setInput(blob);
      out = opts_.output_layer.empty() ? net_.forward() : net_.forward(opts_.output_layer);
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::BackendError, "backbone inference failed: " + std::string(e.what()));
    }
    out = out.reshape(1, 1);
    return std::vector<float>(out.ptr<float>(), out.ptr<float>() + out.total());
  }

  Options opts_;
  mutable cv::dnn::Net net_;
  mutable std::mutex mutex_;
  std::size_t dimension_ = 0;
};

}  // namespace acnescore
