#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace plm {

/// Axis-aligned box in frame pixel coordinates. (x, y) is the top-left
/// corner; a valid box has w > 0 and h > 0.
struct Box {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  Box() = default;
  Box(int x_, int y_, int w_, int h_) : x(x_), y(y_), w(w_), h(h_) {}

  bool valid() const { return w > 0 && h > 0; }
  std::int64_t area() const {
    return static_cast<std::int64_t>(w) * static_cast<std::int64_t>(h);
  }
  int right() const { return x + w; }
  int bottom() const { return y + h; }

  bool operator==(const Box& o) const {
    return x == o.x && y == o.y && w == o.w && h == o.h;
  }

  bool contains(const Box& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() &&
           o.bottom() <= bottom();
  }

  std::string str() const {
    return "[" + std::to_string(x) + "," + std::to_string(y) + " " +
           std::to_string(w) + "x" + std::to_string(h) + "]";
  }
};

inline Box intersect(const Box& a, const Box& b) {
  int x0 = std::max(a.x, b.x);
  int y0 = std::max(a.y, b.y);
  int x1 = std::min(a.right(), b.right());
  int y1 = std::min(a.bottom(), b.bottom());
  return Box(x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0));
}

/// Clamps a box to [0, frame_w) x [0, frame_h). The result can be empty
/// (w or h == 0) if the box lies fully outside the frame.
inline Box clamp_to_frame(const Box& b, int frame_w, int frame_h) {
  return intersect(b, Box(0, 0, frame_w, frame_h));
}

/// Grows a box by margin_percent of its width/height in total (split evenly
/// per side, rounded to nearest pixel), then clamps to the frame. A margin
/// of 0 is the identity on in-bounds boxes.
inline Box expand_box(const Box& b, double margin_percent, int frame_w,
                      int frame_h) {
  if (!b.valid()) throw std::invalid_argument("expand_box: invalid box " + b.str());
  if (margin_percent < 0) {
    throw std::invalid_argument("expand_box: negative margin");
  }
  double frac = margin_percent / 100.0;
  int dx = static_cast<int>(std::lround(frac * b.w / 2.0));
  int dy = static_cast<int>(std::lround(frac * b.h / 2.0));
  Box grown(b.x - dx, b.y - dy, b.w + 2 * dx, b.h + 2 * dy);
  return clamp_to_frame(grown, frame_w, frame_h);
}

/// Fraction of box a covered by box b: area(a ∩ b) / area(a), in [0, 1].
/// Normalized by the target box, not the union.
inline double overlap_ratio(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) {
    throw std::invalid_argument("overlap_ratio: invalid box");
  }
  return static_cast<double>(intersect(a, b).area()) /
         static_cast<double>(a.area());
}

}  // namespace plm
