#pragma once

// Shared helpers for the test suites.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "plm/image.hpp"
#include "plm/io.hpp"
#include "plm/rng.hpp"

namespace plm::testing {

inline Patch constant_patch(float v) {
  Patch p;
  p.pixels = Image(kPatchSize, kPatchSize, 3, v);
  p.source_box = Box(0, 0, kPatchSize, kPatchSize);
  return p;
}

inline Patch random_patch(Rng& rng) {
  Patch p = constant_patch(0.f);
  for (auto& v : p.pixels.data) v = static_cast<float>(rng.uniform());
  return p;
}

inline std::vector<std::uint8_t> constant_label(std::uint8_t v) {
  return std::vector<std::uint8_t>(
      static_cast<std::size_t>(kScoreSize) * kScoreSize, v);
}

inline std::vector<std::uint8_t> random_label(Rng& rng) {
  auto l = constant_label(0);
  for (auto& v : l) v = rng.coin() ? 1 : 0;
  return l;
}

// --- Synthetic benchmark-layout sequence: a bright square drifting over a
// --- gradient background, with exact per-frame masks.

struct SyntheticSeqSpec {
  std::string name = "square";
  int frames = 20;
  int width = 96;
  int height = 72;
  int square = 26;          // side length in pixels
  double x0 = 8, y0 = 8;    // top-left at frame 0
  double dx = 2.2, dy = 1.4;  // drift per frame
  float bg_lo = 0.10f, bg_hi = 0.45f;
  float fg = 0.90f;
};

inline Box synthetic_square_box(const SyntheticSeqSpec& s, int t) {
  int x = static_cast<int>(std::lround(s.x0 + t * s.dx));
  int y = static_cast<int>(std::lround(s.y0 + t * s.dy));
  x = std::clamp(x, 0, s.width - s.square);
  y = std::clamp(y, 0, s.height - s.square);
  return Box(x, y, s.square, s.square);
}

inline Mask synthetic_square_mask(const SyntheticSeqSpec& s, int t) {
  Box b = synthetic_square_box(s, t);
  Mask m(s.width, s.height, 1);
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) m.at(x, y) = 0;
  return m;
}

inline Image synthetic_square_frame(const SyntheticSeqSpec& s, int t) {
  Image img(s.width, s.height, 3);
  for (int y = 0; y < s.height; ++y) {
    float g = s.bg_lo + (s.bg_hi - s.bg_lo) * static_cast<float>(y) /
                            std::max(1, s.height - 1);
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = g;
  }
  Box b = synthetic_square_box(s, t);
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = s.fg;
  return img;
}

/// Writes JPEGImages/<name>/NNNNN.jpg and Annotations/<name>/NNNNN.png under
/// root for every frame, and returns the sequence's image directory layout
/// root. Every frame is annotated.
inline std::string write_synthetic_sequence(const std::string& root,
                                            const SyntheticSeqSpec& s = {}) {
  namespace fs = std::filesystem;
  fs::path img_dir = fs::path(root) / "JPEGImages" / s.name;
  fs::path ann_dir = fs::path(root) / "Annotations" / s.name;
  fs::create_directories(img_dir);
  fs::create_directories(ann_dir);
  char buf[16];
  for (int t = 0; t < s.frames; ++t) {
    std::snprintf(buf, sizeof buf, "%05d", t);
    save_image((img_dir / (std::string(buf) + ".jpg")).string(),
               synthetic_square_frame(s, t));
    save_mask((ann_dir / (std::string(buf) + ".png")).string(),
              synthetic_square_mask(s, t));
  }
  return root;
}

}  // namespace plm::testing
