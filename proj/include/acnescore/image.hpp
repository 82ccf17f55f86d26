#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "acnescore/core.hpp"
#include "acnescore/io.hpp"

namespace acnescore {

// OpenCV interop. cv::Mat is BGR by convention; ImageBuffer is always RGB.

inline cv::Mat to_mat_bgr(const ImageBuffer& img) {
  cv::Mat rgb(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.pixels().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

inline ImageBuffer from_mat_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  switch (bgr.channels()) {
    case 1: cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB); break;
    case 4: cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB); break;
    default: cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB); break;
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  std::vector<std::uint8_t> pixels(rgb.data, rgb.data + rgb.total() * 3);
  return ImageBuffer(rgb.cols, rgb.rows, std::move(pixels));
}

enum class ImageFormat { Unknown, Png, Jpeg };

inline ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return ImageFormat::Png;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return ImageFormat::Jpeg;
  }
  return ImageFormat::Unknown;
}

/// Decodes PNG or JPEG bytes. Anything else is an ImageDecodeError.
inline ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
  if (sniff_format(bytes) == ImageFormat::Unknown) {
    throw Error(ErrorCode::ImageDecodeError, "payload is neither PNG nor JPEG");
  }
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::ImageDecodeError, e.what());
  }
  if (decoded.empty()) throw Error(ErrorCode::ImageDecodeError, "image payload is corrupt");
  return from_mat_bgr(decoded);
}

inline ImageBuffer read_image(const std::filesystem::path& path) {
  return decode_image(io::read_bytes(path));
}

inline std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat_bgr(img), out)) {
    throw Error(ErrorCode::IoError, "PNG encoding failed");
  }
  return out;
}

inline std::vector<std::uint8_t> encode_jpeg(const ImageBuffer& img, int quality = 95) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".jpg", to_mat_bgr(img), out, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw Error(ErrorCode::IoError, "JPEG encoding failed");
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  io::write_atomic(path, encode_png(img));
}

inline ImageBuffer crop(const ImageBuffer& img, const Rect& r) {
  if (!r.contained_in(img.width(), img.height())) {
    throw Error(ErrorCode::InvalidRect, "crop rect outside image");
  }
  ImageBuffer out(r.w, r.h);
  const auto row_bytes = static_cast<std::size_t>(r.w) * 3;
  for (int y = 0; y < r.h; ++y) {
    std::copy_n(img.pixels().begin() + static_cast<std::ptrdiff_t>(img.offset(r.x, r.y + y)),
                row_bytes,
                out.pixels().begin() + static_cast<std::ptrdiff_t>(out.offset(0, y)));
  }
  return out;
}

/// Bilinear resize to a square of side `side`.
inline ImageBuffer resize_square(const ImageBuffer& img, int side) {
  if (img.width() == side && img.height() == side) return img;
  cv::Mat src(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.pixels().data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
  return ImageBuffer(side, side, std::vector<std::uint8_t>(dst.data, dst.data + dst.total() * 3));
}

inline double luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline double mean_luma(const ImageBuffer& img) {
  const auto px = img.pixels();
  double sum = 0.0;
  for (std::size_t i = 0; i < px.size(); i += 3) sum += luma(px[i], px[i + 1], px[i + 2]);
  return sum / static_cast<double>(px.size() / 3);
}

/// Draws a rectangle outline in place, clipped to the image.
inline void draw_rect(ImageBuffer& img, const Rect& r, std::array<std::uint8_t, 3> rgb,
                      int thickness = 2) {
  const Rect clip = r.intersect(Rect{0, 0, img.width(), img.height()});
  for (int y = clip.y; y < clip.y + clip.h; ++y) {
    for (int x = clip.x; x < clip.x + clip.w; ++x) {
      const bool edge = x < r.x + thickness || x >= r.x + r.w - thickness ||
                        y < r.y + thickness || y >= r.y + r.h - thickness;
      if (edge) img.set(x, y, rgb);
    }
  }
}

}  // namespace acnescore
