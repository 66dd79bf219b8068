#include <catch_amalgamated.hpp>

#include "plm/geometry.hpp"
#include "plm/rng.hpp"

using namespace plm;

TEST_CASE("Box basics") {
  Box b(10, 20, 30, 40);
  CHECK(b.valid());
  CHECK(b.area() == 1200);
  CHECK(b.right() == 40);
  CHECK(b.bottom() == 60);
  CHECK_FALSE(Box(0, 0, 0, 10).valid());
  CHECK_FALSE(Box(0, 0, 10, -1).valid());
  CHECK(Box(1, 2, 3, 4) == Box(1, 2, 3, 4));
  CHECK_FALSE(Box(1, 2, 3, 4) == Box(1, 2, 3, 5));
}

TEST_CASE("intersect") {
  CHECK(intersect(Box(0, 0, 10, 10), Box(5, 5, 10, 10)) == Box(5, 5, 5, 5));
  CHECK_FALSE(intersect(Box(0, 0, 10, 10), Box(10, 0, 5, 5)).valid());
  CHECK(intersect(Box(2, 3, 4, 5), Box(2, 3, 4, 5)) == Box(2, 3, 4, 5));
}

TEST_CASE("expand_box worked examples") {
  // 25% of 40 = 10, split 5 per side.
  CHECK(expand_box(Box(10, 10, 40, 40), 25.0, 200, 200) == Box(5, 5, 50, 50));
  // Zero margin is the identity.
  CHECK(expand_box(Box(10, 10, 40, 40), 0.0, 200, 200) == Box(10, 10, 40, 40));
  // Growth clamped at the frame edge.
  CHECK(expand_box(Box(0, 0, 40, 40), 50.0, 100, 100) == Box(0, 0, 50, 50));
}

TEST_CASE("expand_box properties") {
  Rng rng(substream_seed(7, "expand_box_props"));
  for (int i = 0; i < 200; ++i) {
    int fw = rng.uniform_int(20, 300);
    int fh = rng.uniform_int(20, 300);
    int w = rng.uniform_int(1, fw);
    int h = rng.uniform_int(1, fh);
    int x = rng.uniform_int(-10, fw - 1);
    int y = rng.uniform_int(-10, fh - 1);
    Box b(x, y, w, h);
    double margin = rng.uniform(0.0, 80.0);
    Box e = expand_box(b, margin, fw, fh);
    CAPTURE(b.str(), margin, fw, fh, e.str());
    Box clipped = intersect(b, Box(0, 0, fw, fh));
    if (clipped.valid()) {
      // Result lies within the frame and contains input ∩ frame.
      CHECK(e.valid());
      CHECK(e.x >= 0);
      CHECK(e.y >= 0);
      CHECK(e.right() <= fw);
      CHECK(e.bottom() <= fh);
      CHECK(e.x <= clipped.x);
      CHECK(e.y <= clipped.y);
      CHECK(e.right() >= clipped.right());
      CHECK(e.bottom() >= clipped.bottom());
    }
    // Margin 0 on an in-bounds box is the identity.
    if (b.x >= 0 && b.y >= 0 && b.right() <= fw && b.bottom() <= fh) {
      CHECK(expand_box(b, 0.0, fw, fh) == b);
    }
  }
}

TEST_CASE("expand_box rejects bad input") {
  CHECK_THROWS_AS(expand_box(Box(0, 0, 0, 5), 25.0, 100, 100), std::invalid_argument);
  CHECK_THROWS_AS(expand_box(Box(0, 0, 5, 5), -1.0, 100, 100), std::invalid_argument);
}

TEST_CASE("overlap_ratio worked examples") {
  Box a(0, 0, 10, 10);
  CHECK(overlap_ratio(a, a) == 1.0);
  CHECK(overlap_ratio(a, Box(50, 50, 10, 10)) == 0.0);
  CHECK(overlap_ratio(a, Box(5, 0, 10, 10)) == 0.5);
  // Normalized by the first box's area, so it is not symmetric.
  CHECK(overlap_ratio(Box(0, 0, 10, 10), Box(0, 0, 20, 20)) == 1.0);
  CHECK(overlap_ratio(Box(0, 0, 20, 20), Box(0, 0, 10, 10)) == 0.25);
}

TEST_CASE("overlap_ratio monotone under translation away") {
  Box a(30, 30, 25, 17);
  double prev = 1.0;
  for (int dx = 0; dx < 40; ++dx) {
    double r = overlap_ratio(a, Box(30 + dx, 30, 25, 17));
    CHECK(r <= prev + 1e-12);
    prev = r;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("clamp_to_frame") {
  CHECK(clamp_to_frame(Box(-5, -5, 20, 20), 100, 100) == Box(0, 0, 15, 15));
  CHECK(clamp_to_frame(Box(90, 95, 20, 20), 100, 100) == Box(90, 95, 10, 5));
  CHECK_FALSE(clamp_to_frame(Box(200, 0, 10, 10), 100, 100).valid());
}
