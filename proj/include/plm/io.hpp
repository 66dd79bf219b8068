#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "plm/image.hpp"

namespace plm {

/// Loads a color image as planar float RGB in [0, 1].
inline Image load_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("failed to read image: " + path);
  Image out(bgr.cols, bgr.rows, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(x, y, 0) = row[x][2] / 255.0f;  // R
      out.at(x, y, 1) = row[x][1] / 255.0f;  // G
      out.at(x, y, 2) = row[x][0] / 255.0f;  // B
    }
  }
  return out;
}

/// Loads an annotation mask. On disk 0 is background and any nonzero value
/// is foreground; internally foreground is 0 and background is 1.
inline Mask load_mask(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("failed to read mask: " + path);
  Mask out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) out.at(x, y) = row[x] == 0 ? 1 : 0;
  }
  return out;
}

/// Writes a mask as a PNG with foreground 255 and background 0.
inline void save_mask(const std::string& path, const Mask& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(x, y) == 0 ? 255 : 0;
  }
  if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write mask: " + path);
}

/// Writes a planar float RGB image (values clamped to [0, 1]); format is
/// chosen by the file extension. Used by fixtures and debugging tools.
inline void save_image(const std::string& path, const Image& img) {
  if (img.channels != 3) throw std::invalid_argument("save_image expects 3 channels");
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      auto q = [&](int c) {
        float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
        return static_cast<std::uint8_t>(std::lround(v * 255.0f));
      };
      row[x] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("failed to write image: " + path);
}

}  // namespace plm
