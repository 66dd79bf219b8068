#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "plm/geometry.hpp"

namespace plm {

constexpr int kPatchSize = 100;  // network input side
constexpr int kScoreSize = 50;   // network output side

/// Planar float image, values in [0, 1]. Layout: data[(c*height + y)*width + x].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t size() const { return data.size(); }
};

/// Binary per-pixel labels at frame resolution: 0 = foreground (target),
/// 1 = background. Matches the score convention of the matching network.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 1)
      : width(w), height(h),
        labels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  bool foreground(int x, int y) const { return at(x, y) == 0; }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : labels) n += (v == 0);
    return n;
  }
};

/// Tight bounding box of the mask foreground. Throws if the mask has no
/// foreground pixel.
inline Box tight_foreground_box(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y) == 0) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw std::runtime_error("no target object");
  return Box(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
}

/// Image patch cut from a frame; records where it came from so score maps
/// can be restored to frame coordinates later.
struct Patch {
  Image pixels;  // out_size x out_size x 3 for standardized patches
  Box source_box;
  int source_frame_index = -1;
};

/// 50x50 matching output. 0 means target, 1 means background.
struct ScoreMap {
  std::vector<float> values;  // kScoreSize * kScoreSize, row-major
  Box source_box;

  ScoreMap() : values(static_cast<std::size_t>(kScoreSize) * kScoreSize, 0.f) {}

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * kScoreSize + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * kScoreSize + x]; }
};

namespace detail {

// Bilinear sample of one channel at fractional coords, clamped to the pixel
// index range [x0, x1] x [y0, y1].
inline float sample_bilinear(const Image& img, int c, double fx, double fy,
                             int x0, int y0, int x1, int y1) {
  fx = std::clamp(fx, static_cast<double>(x0), static_cast<double>(x1));
  fy = std::clamp(fy, static_cast<double>(y0), static_cast<double>(y1));
  int ix = static_cast<int>(std::floor(fx));
  int iy = static_cast<int>(std::floor(fy));
  int ix1 = std::min(ix + 1, x1);
  int iy1 = std::min(iy + 1, y1);
  double ax = fx - ix;
  double ay = fy - iy;
  double v00 = img.at(ix, iy, c);
  double v10 = img.at(ix1, iy, c);
  double v01 = img.at(ix, iy1, c);
  double v11 = img.at(ix1, iy1, c);
  double top = v00 + ax * (v10 - v00);
  double bot = v01 + ax * (v11 - v01);
  return static_cast<float>(top + ay * (bot - top));
}

// dst index -> source coordinate, half-pixel-center convention.
inline double src_coord(int dst, int dst_size, int src_origin, int src_size) {
  return src_origin + (dst + 0.5) * (static_cast<double>(src_size) / dst_size) - 0.5;
}

}  // namespace detail

/// Crops box b out of the image and resamples it bilinearly to
/// out_size x out_size. Sampling never reads outside b. Throws if the box
/// is too small to resample (w or h < 2).
inline Patch crop_resize(const Image& image, const Box& b, int out_size) {
  if (!b.valid() || b.x < 0 || b.y < 0 || b.right() > image.width ||
      b.bottom() > image.height) {
    throw std::invalid_argument("crop_resize: box " + b.str() + " not within image");
  }
  if (b.w < 2 || b.h < 2) throw std::invalid_argument("box too small to resample");
  Patch p;
  p.pixels = Image(out_size, out_size, image.channels);
  p.source_box = b;
  int xmax = b.x + b.w - 1;
  int ymax = b.y + b.h - 1;
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < out_size; ++y) {
      double fy = detail::src_coord(y, out_size, b.y, b.h);
      for (int x = 0; x < out_size; ++x) {
        double fx = detail::src_coord(x, out_size, b.x, b.w);
        p.pixels.at(x, y, c) =
            detail::sample_bilinear(image, c, fx, fy, b.x, b.y, xmax, ymax);
      }
    }
  }
  return p;
}

/// Nearest-neighbor resample of mask labels over box b (same geometric
/// mapping as crop_resize). Keeps labels binary.
inline std::vector<std::uint8_t> mask_crop_nearest(const Mask& m, const Box& b,
                                                   int out_size) {
  if (!b.valid() || b.x < 0 || b.y < 0 || b.right() > m.width ||
      b.bottom() > m.height) {
    throw std::invalid_argument("mask_crop_nearest: box not within mask");
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_size) * out_size);
  for (int y = 0; y < out_size; ++y) {
    double fy = detail::src_coord(y, out_size, b.y, b.h);
    int iy = std::clamp(static_cast<int>(std::lround(fy)), b.y, b.y + b.h - 1);
    for (int x = 0; x < out_size; ++x) {
      double fx = detail::src_coord(x, out_size, b.x, b.w);
      int ix = std::clamp(static_cast<int>(std::lround(fx)), b.x, b.x + b.w - 1);
      out[static_cast<std::size_t>(y) * out_size + x] = m.at(ix, iy);
    }
  }
  return out;
}

/// Crops mask labels over box b and resamples to kScoreSize x kScoreSize by
/// exact area average, then thresholds at 0.5 back to binary. Cells whose
/// covered area is at least half background become background (ties go to
/// background).
inline std::vector<std::uint8_t> downsample_label(const Mask& m, const Box& b) {
  if (!b.valid() || b.x < 0 || b.y < 0 || b.right() > m.width ||
      b.bottom() > m.height) {
    throw std::invalid_argument("downsample_label: box not within mask");
  }
  if (b.w < 2 || b.h < 2) throw std::invalid_argument("box too small to resample");
  const int n = kScoreSize;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n) * n);
  const double sx = static_cast<double>(b.w) / n;
  const double sy = static_cast<double>(b.h) / n;
  for (int r = 0; r < n; ++r) {
    double ry0 = b.y + r * sy;
    double ry1 = b.y + (r + 1) * sy;
    int py0 = static_cast<int>(std::floor(ry0));
    int py1 = std::min(b.bottom(), static_cast<int>(std::ceil(ry1)));
    for (int c = 0; c < n; ++c) {
      double rx0 = b.x + c * sx;
      double rx1 = b.x + (c + 1) * sx;
      int px0 = static_cast<int>(std::floor(rx0));
      int px1 = std::min(b.right(), static_cast<int>(std::ceil(rx1)));
      double acc = 0.0, wsum = 0.0;
      for (int py = py0; py < py1; ++py) {
        double wy = std::min<double>(py + 1, ry1) - std::max<double>(py, ry0);
        if (wy <= 0) continue;
        for (int px = px0; px < px1; ++px) {
          double wx = std::min<double>(px + 1, rx1) - std::max<double>(px, rx0);
          if (wx <= 0) continue;
          acc += wx * wy * m.at(px, py);
          wsum += wx * wy;
        }
      }
      double avg = wsum > 0 ? acc / wsum : 1.0;
      out[static_cast<std::size_t>(r) * n + c] = avg >= 0.5 ? 1 : 0;
    }
  }
  return out;
}

/// A score map resized back to frame resolution. Pixels outside the source
/// box are invalid (value 0, valid flag 0).
struct RestoredMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  RestoredMap() = default;
  RestoredMap(int w, int h)
      : width(w), height(h),
        values(static_cast<std::size_t>(w) * h, 0.f),
        valid(static_cast<std::size_t>(w) * h, 0) {}

  float value(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Bilinearly resizes the 50x50 score map to its source box dimensions and
/// places it at the box's frame location.
inline RestoredMap restore_map(const ScoreMap& s, int frame_w, int frame_h) {
  const Box& b = s.source_box;
  if (!b.valid() || b.x < 0 || b.y < 0 || b.right() > frame_w ||
      b.bottom() > frame_h) {
    throw std::invalid_argument("restore_map: source box not within frame");
  }
  RestoredMap out(frame_w, frame_h);
  const int n = kScoreSize;
  for (int y = 0; y < b.h; ++y) {
    double fy = std::clamp((y + 0.5) * (static_cast<double>(n) / b.h) - 0.5,
                           0.0, static_cast<double>(n - 1));
    int iy = static_cast<int>(std::floor(fy));
    int iy1 = std::min(iy + 1, n - 1);
    double ay = fy - iy;
    for (int x = 0; x < b.w; ++x) {
      double fx = std::clamp((x + 0.5) * (static_cast<double>(n) / b.w) - 0.5,
                             0.0, static_cast<double>(n - 1));
      int ix = static_cast<int>(std::floor(fx));
      int ix1 = std::min(ix + 1, n - 1);
      double ax = fx - ix;
      double top = s.at(ix, iy) + ax * (s.at(ix1, iy) - s.at(ix, iy));
      double bot = s.at(ix, iy1) + ax * (s.at(ix1, iy1) - s.at(ix, iy1));
      double v = top + ay * (bot - top);
      std::size_t idx = static_cast<std::size_t>(b.y + y) * frame_w + (b.x + x);
      out.values[idx] = static_cast<float>(v);
      out.valid[idx] = 1;
    }
  }
  return out;
}

/// Horizontal mirror of an image.
inline Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

/// Horizontal mirror of a square label grid.
inline std::vector<std::uint8_t> flip_horizontal(
    const std::vector<std::uint8_t>& g, int side) {
  std::vector<std::uint8_t> out(g.size());
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      out[static_cast<std::size_t>(y) * side + x] =
          g[static_cast<std::size_t>(y) * side + (side - 1 - x)];
  return out;
}

/// Rotates an image about its center by `degrees` (counterclockwise),
/// bilinear sampling with border replication.
inline Image rotate_image(const Image& img, double degrees) {
  Image out(img.width, img.height, img.channels);
  double rad = degrees * M_PI / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);
  double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // inverse map: rotate destination by -degrees
      double dx = x - cx, dy = y - cy;
      double fx = cs * dx + sn * dy + cx;
      double fy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = detail::sample_bilinear(img, c, fx, fy, 0, 0,
                                                  img.width - 1, img.height - 1);
      }
    }
  }
  return out;
}

/// Rotates a square label grid about its center (nearest neighbor, border
/// replication). Same geometric map as rotate_image at the grid's scale.
inline std::vector<std::uint8_t> rotate_label(
    const std::vector<std::uint8_t>& g, int side, double degrees) {
  std::vector<std::uint8_t> out(g.size());
  double rad = degrees * M_PI / 180.0;
  double cs = std::cos(rad), sn = std::sin(rad);
  double c0 = (side - 1) / 2.0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double dx = x - c0, dy = y - c0;
      int fx = std::clamp(static_cast<int>(std::lround(cs * dx + sn * dy + c0)), 0, side - 1);
      int fy = std::clamp(static_cast<int>(std::lround(-sn * dx + cs * dy + c0)), 0, side - 1);
      out[static_cast<std::size_t>(y) * side + x] =
          g[static_cast<std::size_t>(fy) * side + fx];
    }
  }
  return out;
}

}  // namespace plm
