#pragma once

// Model-backed detectors wrapping OpenCV: a Haar cascade for single eyes and
// a cascade face detector plus LBF 68-point facemark model for landmarks.

#include <filesystem>
#include <mutex>

#include <opencv2/face.hpp>
#include <opencv2/objdetect.hpp>

#include "acnescore/face_patches.hpp"
#include "acnescore/image.hpp"

namespace acnescore {

namespace detail {

inline cv::CascadeClassifier load_cascade(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::BackendError, "cascade artifact missing: " + path.string());
  }
  cv::CascadeClassifier cascade;
  bool ok = false;
  try {
    ok = cascade.load(path.string());
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::BackendError, "cascade artifact corrupt: " + std::string(e.what()));
  }
  if (!ok || cascade.empty()) throw Error(ErrorCode::BackendError, "cascade artifact corrupt: " + path.string());
  return cascade;
}

inline cv::Mat equalized_gray(const ImageBuffer& img) {
  cv::Mat gray;
  cv::cvtColor(to_mat_bgr(img), gray, cv::COLOR_BGR2GRAY);
  cv::equalizeHist(gray, gray);
  return gray;
}

}  // namespace detail

/// Haar cascade eye detector; confidence is the cascade's final-stage weight.
class HaarEyeBackend final : public EyeBackend {
 public:
  explicit HaarEyeBackend(const std::filesystem::path& cascade_path)
      : cascade_(detail::load_cascade(cascade_path)) {}

  std::vector<EyeCandidate> eyes(const ImageBuffer& img, std::string_view) const override {
    const cv::Mat gray = detail::equalized_gray(img);
    std::vector<cv::Rect> boxes;
    std::vector<int> levels;
    std::vector<double> weights;
    {
      std::lock_guard lock(mutex_);
      cascade_.detectMultiScale(gray, boxes, levels, weights, 1.1, 3, 0, cv::Size(12, 12), cv::Size(), true);
    }
    std::vector<EyeCandidate> out;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      out.push_back({Rect{boxes[i].x, boxes[i].y, boxes[i].width, boxes[i].height},
                     i < weights.size() ? weights[i] : 0.0});
    }
    return out;
  }

  bool concurrent_safe() const override { return false; }

 private:
  mutable cv::CascadeClassifier cascade_;
  mutable std::mutex mutex_;
};

/// Cascade face detection followed by a 68-point LBF facemark fit. The ten
/// named points are read off the standard 68-point layout.
class LbfLandmarkBackend final : public LandmarkBackend {
 public:
  LbfLandmarkBackend(const std::filesystem::path& face_cascade, const std::filesystem::path& lbf_model)
      : faces_(detail::load_cascade(face_cascade)) {
    if (!std::filesystem::exists(lbf_model)) {
      throw Error(ErrorCode::BackendError, "landmark model missing: " + lbf_model.string());
    }
    facemark_ = cv::face::createFacemarkLBF();
    try {
      facemark_->loadModel(lbf_model.string());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::BackendError, "landmark model corrupt: " + std::string(e.what()));
    }
  }

  std::optional<NamedLandmarks> landmarks(const ImageBuffer& img, std::string_view) const override {
    const cv::Mat bgr = to_mat_bgr(img);
    const cv::Mat gray = detail::equalized_gray(img);
    std::lock_guard lock(mutex_);
    std::vector<cv::Rect> found;
    faces_.detectMultiScale(gray, found, 1.1, 4, 0, cv::Size(64, 64));
    if (found.empty()) return std::nullopt;
    const auto largest = *std::max_element(found.begin(), found.end(),
                                           [](const cv::Rect& a, const cv::Rect& b) { return a.area() < b.area(); });
    std::vector<cv::Rect> faces{largest};
    std::vector<std::vector<cv::Point2f>> shapes;
    if (!facemark_->fit(bgr, faces, shapes) || shapes.empty() || shapes[0].size() != 68) return std::nullopt;
    return from_68(shapes[0], img.width(), img.height());
  }

  bool concurrent_safe() const override { return false; }

  static NamedLandmarks from_68(const std::vector<cv::Point2f>& s, int width, int height) {
    auto pt = [&](std::size_t i) {
      return Point{std::clamp<double>(s[i].x, 0, width - 1), std::clamp<double>(s[i].y, 0, height - 1)};
    };
    auto mean_of = [&](std::size_t first, std::size_t last) {
      Point p;
      for (auto i = first; i <= last; ++i) {
        p.x += pt(i).x;
        p.y += pt(i).y;
      }
      const double n = static_cast<double>(last - first + 1);
      return Point{p.x / n, p.y / n};
    };
    auto top_of = [&](std::size_t first, std::size_t last) {
      Point best = pt(first);
      for (auto i = first; i <= last; ++i) {
        if (pt(i).y < best.y) best = pt(i);
      }
      return best;
    };
    NamedLandmarks lm;
    lm.left_eye_center = mean_of(36, 41);
    lm.right_eye_center = mean_of(42, 47);
    lm.nose_tip = pt(30);
    lm.mouth_left = pt(48);
    lm.mouth_right = pt(54);
    lm.chin_bottom = pt(8);
    lm.left_brow_top = top_of(17, 21);
    lm.right_brow_top = top_of(22, 26);
    lm.face_left = pt(2);
    lm.face_right = pt(14);
    return lm;
  }

 private:
  mutable cv::CascadeClassifier faces_;
  cv::Ptr<cv::face::Facemark> facemark_;
  mutable std::mutex mutex_;
};

}  // namespace acnescore
