#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fixtures.hpp"
#include "plm/dataset.hpp"

using namespace plm;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "plm_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

Image constant_image(int w, int h, float r, float g, float b) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

Mask square_mask(int w, int h, const Box& b) {
  Mask m(w, h, 1);
  for (int y = b.y; y < b.bottom(); ++y)
    for (int x = b.x; x < b.right(); ++x) m.at(x, y) = 0;
  return m;
}

bool same_pair(const PatchPair& a, const PatchPair& b) {
  return a.query.pixels.data == b.query.pixels.data &&
         a.search.pixels.data == b.search.pixels.data &&
         a.label == b.label && a.query.source_box == b.query.source_box &&
         a.search.source_box == b.search.source_box &&
         a.meta.sequence == b.meta.sequence &&
         a.meta.reference_frame == b.meta.reference_frame &&
         a.meta.target_frame == b.meta.target_frame &&
         a.meta.margin == b.meta.margin &&
         a.meta.crop_index == b.meta.crop_index &&
         a.meta.augmentation == b.meta.augmentation;
}

Mask replicate2x(const Mask& m) {
  Mask out(m.width * 2, m.height * 2, 1);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = m.at(x / 2, y / 2);
  return out;
}

}  // namespace

TEST_CASE("scan_dataset walks a DAVIS-style tree") {
  SECTION("empty root yields an empty list") {
    std::string root = fresh_dir("scan_empty");
    CHECK(scan_dataset(root).empty());
  }

  SECTION("sequences and frames come back sorted and fully annotated") {
    std::string root = fresh_dir("scan_two");
    testing::SyntheticSeqSpec spec;
    spec.frames = 3;
    spec.name = "zzz";
    testing::write_synthetic_sequence(root, spec);
    spec.name = "aaa";
    testing::write_synthetic_sequence(root, spec);

    auto seqs = scan_dataset(root);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].name == "aaa");
    CHECK(seqs[1].name == "zzz");
    REQUIRE(seqs[0].frames.size() == 3);
    CHECK(seqs[0].frames[0] < seqs[0].frames[1]);
    CHECK(seqs[0].annotated_count() == 3);
  }

  SECTION("frame-0-only annotation is represented as absent entries") {
    std::string root = fresh_dir("scan_first_only");
    testing::SyntheticSeqSpec spec;
    spec.frames = 3;
    testing::write_synthetic_sequence(root, spec);
    fs::remove(fs::path(root) / "Annotations" / spec.name / "00001.png");
    fs::remove(fs::path(root) / "Annotations" / spec.name / "00002.png");

    auto seqs = scan_dataset(root);
    REQUIRE(seqs.size() == 1);
    REQUIRE(seqs[0].annotations.size() == 3);
    CHECK(seqs[0].has_annotation(0));
    CHECK_FALSE(seqs[0].has_annotation(1));
    CHECK_FALSE(seqs[0].has_annotation(2));
  }

  SECTION("missing frame-0 annotation is an error") {
    std::string root = fresh_dir("scan_no_first");
    testing::SyntheticSeqSpec spec;
    spec.frames = 2;
    testing::write_synthetic_sequence(root, spec);
    fs::remove(fs::path(root) / "Annotations" / spec.name / "00000.png");
    CHECK_THROWS_WITH(scan_dataset(root),
                      Catch::Matchers::ContainsSubstring("frame 0"));
  }

  SECTION("annotation dimensions must match the frame, error names the file") {
    std::string root = fresh_dir("scan_dims");
    testing::SyntheticSeqSpec spec;
    spec.frames = 2;
    testing::write_synthetic_sequence(root, spec);
    std::string bad =
        (fs::path(root) / "Annotations" / spec.name / "00001.png").string();
    save_mask(bad, Mask(10, 10, 1));
    CHECK_THROWS_WITH(scan_dataset(root),
                      Catch::Matchers::ContainsSubstring("00001.png"));
  }
}

TEST_CASE("make_query isolates the reference object") {
  SECTION("full-frame foreground: whole frame resized, nothing zeroed") {
    Image frame = constant_image(40, 30, 0.5f, 0.25f, 0.75f);
    Mask all_fg(40, 30, 0);
    Patch p = make_query(frame, all_fg);
    CHECK(p.source_box == Box(0, 0, 40, 30));
    Patch direct = crop_resize(frame, Box(0, 0, 40, 30), kPatchSize);
    CHECK(p.pixels.data == direct.pixels.data);
    for (float v : p.pixels.data) CHECK(v != 0.0f);
  }

  SECTION("centered square: 25% margin context, background exactly zero") {
    Image frame = constant_image(100, 100, 0.5f, 0.5f, 0.5f);
    Box obj(40, 40, 20, 20);
    Mask mask = square_mask(100, 100, obj);
    Patch p = make_query(frame, mask);
    // 20x20 box grown by 25%: lround(0.125 * 20) = 3 per side (clamped inside).
    CHECK(p.source_box == expand_box(obj, 25.0, 100, 100));
    CHECK(p.source_box == Box(37, 37, 26, 26));

    auto patch_mask = mask_crop_nearest(mask, p.source_box, kPatchSize);
    int zeroed = 0, object_pixels = 0;
    for (int y = 0; y < kPatchSize; ++y)
      for (int x = 0; x < kPatchSize; ++x) {
        bool bg = patch_mask[static_cast<std::size_t>(y) * kPatchSize + x] != 0;
        for (int c = 0; c < 3; ++c) {
          float v = p.pixels.at(x, y, c);
          if (bg) {
            REQUIRE(v == 0.0f);  // exact-zero invariant
            ++zeroed;
          } else {
            ++object_pixels;
          }
        }
      }
    CHECK(zeroed > 0);
    CHECK(object_pixels > 0);
  }

  SECTION("empty mask is a precondition violation") {
    Image frame = constant_image(20, 20, 0.1f, 0.1f, 0.1f);
    CHECK_THROWS_WITH(make_query(frame, Mask(20, 20, 1)),
                      Catch::Matchers::ContainsSubstring("no target object"));
  }
}

TEST_CASE("sample_search_boxes honors the margins and the overlap floor") {
  SECTION("without jitter the boxes are the plain margin expansions") {
    Box target(30, 30, 20, 16);
    JitterConfig off;
    off.enabled = false;
    auto boxes = sample_search_boxes(target, {10.0, 30.0, 50.0}, off, 1, 100, 100);
    REQUIRE(boxes.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(boxes[i] == expand_box(target, 10.0 + 20.0 * i, 100, 100));
      CHECK(boxes[i].contains(target));
    }
  }

  SECTION("every jittered box keeps at least half of the target") {
    Rng rng(substream_seed(99, "jitter_cases"));
    JitterConfig jitter;  // enabled, 25% translation
    for (int k = 0; k < 200; ++k) {
      int fw = 40 + static_cast<int>(rng.uniform_index(80));
      int fh = 30 + static_cast<int>(rng.uniform_index(60));
      int bw = 4 + static_cast<int>(rng.uniform_index(fw / 2));
      int bh = 4 + static_cast<int>(rng.uniform_index(fh / 2));
      Box target(static_cast<int>(rng.uniform_index(fw - bw)),
                 static_cast<int>(rng.uniform_index(fh - bh)), bw, bh);
      auto boxes = sample_search_boxes(target, {10.0, 30.0, 50.0}, jitter,
                                       rng.next_u64(), fw, fh);
      REQUIRE(boxes.size() == 3);
      for (const Box& b : boxes)
        CHECK(overlap_ratio(target, b) >= 0.5);
    }
  }

  SECTION("the draw is a pure function of the seed") {
    Box target(10, 12, 30, 24);
    auto a = sample_search_boxes(target, {10.0, 30.0, 50.0}, JitterConfig{}, 7,
                                 120, 90);
    auto b = sample_search_boxes(target, {10.0, 30.0, 50.0}, JitterConfig{}, 7,
                                 120, 90);
    CHECK(a == b);
    CHECK_THROWS_AS(
        sample_search_boxes(Box(0, 0, 0, 5), {10.0}, JitterConfig{}, 1, 50, 50),
        std::invalid_argument);
  }
}

TEST_CASE("downsample_label averages exact areas with ties to background") {
  SECTION("aligned 2x2 blocks map one-to-one onto label cells") {
    // 100x100 mask of 2x2 blocks, block (r,c) background iff (r+c) odd.
    Mask m(100, 100, 1);
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x)
        m.at(x, y) = ((y / 2 + x / 2) % 2 == 0) ? 0 : 1;
    auto label = downsample_label(m, Box(0, 0, 100, 100));
    for (int r = 0; r < kScoreSize; ++r)
      for (int c = 0; c < kScoreSize; ++c)
        REQUIRE(label[static_cast<std::size_t>(r) * kScoreSize + c] ==
                (((r + c) % 2 == 0) ? 0 : 1));
  }

  SECTION("all-foreground crops to an all-target label") {
    Mask m(64, 48, 0);
    auto label = downsample_label(m, Box(10, 10, 20, 20));
    for (auto v : label) CHECK(v == 0);
  }

  SECTION("an exact half-and-half cell becomes background") {
    // Box 100x100 -> each cell covers one 2x2 block; make every block half
    // background (left column fg, right column bg).
    Mask m(100, 100, 1);
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) m.at(x, y) = (x % 2 == 0) ? 0 : 1;
    auto label = downsample_label(m, Box(0, 0, 100, 100));
    for (auto v : label) CHECK(v == 1);
  }

  SECTION("area averaging is invariant to 2x pixel replication") {
    Rng rng(substream_seed(4, "label_scale"));
    for (int k = 0; k < 10; ++k) {
      Mask m(30, 24, 1);
      for (auto& v : m.labels) v = rng.coin() ? 1 : 0;
      Box b(2, 3, 21, 17);
      Box b2(2 * b.x, 2 * b.y, 2 * b.w, 2 * b.h);
      CHECK(downsample_label(m, b) == downsample_label(replicate2x(m), b2));
    }
  }
}

TEST_CASE("pair generator enumerates a deterministic mixed-radix stream") {
  std::string root = fresh_dir("pairs");
  testing::SyntheticSeqSpec spec;
  spec.frames = 12;
  spec.width = 64;
  spec.height = 48;
  spec.square = 14;
  spec.dx = 1.1;
  spec.dy = 0.7;
  testing::write_synthetic_sequence(root, spec);
  auto seqs = scan_dataset(root);
  REQUIRE(seqs.size() == 1);

  SECTION("the count is the closed-form product of the factors") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 2;
    cfg.targets_per_ref = 2;
    cfg.augment.crops_per_combo = 2;
    cfg.seed = 5;
    PairGenerator gen(seqs, cfg);
    // 1 seq x 2 refs x 2 targets x 3 margins x 2 crops x 6 variants
    CHECK(gen.size() == 1ull * 2 * 2 * 3 * 2 * 6);

    cfg.augment = AugmentConfig::none();
    cfg.refs_per_seq = 1;
    cfg.targets_per_ref = 1;
    PairGenerator three(seqs, cfg);
    CHECK(three.size() == 3);  // one pair per margin
    CHECK(three.get(0).meta.margin == 10.0);
    CHECK(three.get(1).meta.margin == 30.0);
    CHECK(three.get(2).meta.margin == 50.0);
  }

  SECTION("two generators with the same seed emit byte-identical pairs") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 2;
    cfg.targets_per_ref = 2;
    cfg.seed = 17;
    PairGenerator a(seqs, cfg), b(seqs, cfg);
    REQUIRE(a.size() == b.size());
    for (std::uint64_t i = 0; i < a.size(); i += 7)
      CHECK(same_pair(a.get(i), b.get(i)));
    PairGenConfig other = cfg;
    other.seed = 18;
    PairGenerator c(seqs, other);
    bool all_same = true;
    for (std::uint64_t i = 0; i < a.size(); i += 7)
      all_same = all_same && same_pair(a.get(i), c.get(i));
    CHECK_FALSE(all_same);
  }

  SECTION("random access agrees with itself out of order") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 1;
    cfg.targets_per_ref = 2;
    cfg.seed = 23;
    PairGenerator gen(seqs, cfg);
    std::vector<PatchPair> forward;
    for (std::uint64_t i = 0; i < gen.size(); ++i) forward.push_back(gen.get(i));
    for (std::uint64_t i = gen.size(); i-- > 0;)
      CHECK(same_pair(forward[i], gen.get(i)));
    CHECK_THROWS_AS(gen.get(gen.size()), std::out_of_range);
  }

  SECTION("reference/target separation holds when the sequence allows it") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 3;
    cfg.targets_per_ref = 2;
    cfg.augment = AugmentConfig::none();
    cfg.seed = 31;
    PairGenerator gen(seqs, cfg);  // 12 frames: a >= 5 pool always exists
    for (std::uint64_t i = 0; i < gen.size(); ++i) {
      PatchPair p = gen.get(i);
      CHECK(std::abs(p.meta.reference_frame - p.meta.target_frame) >= 5);
    }
  }

  SECTION("every emitted pair satisfies the type invariants") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 2;
    cfg.targets_per_ref = 1;
    cfg.seed = 41;
    PairGenerator gen(seqs, cfg);
    for (std::uint64_t i = 0; i < gen.size(); ++i) {
      PatchPair p = gen.get(i);
      REQUIRE(p.label.size() ==
              static_cast<std::size_t>(kScoreSize) * kScoreSize);
      for (auto v : p.label) REQUIRE((v == 0 || v == 1));
      // The query must match an independent rebuild from the same frame.
      Image ref = load_image(seqs[0].frames[p.meta.reference_frame]);
      Mask rmask = load_mask(seqs[0].annotations[p.meta.reference_frame]);
      CHECK(p.query.pixels.data == make_query(ref, rmask).pixels.data);
    }
  }

  SECTION("variant transforms hit the search patch and label together") {
    PairGenConfig cfg;
    cfg.refs_per_seq = 1;
    cfg.targets_per_ref = 1;
    cfg.seed = 47;
    PairGenerator gen(seqs, cfg);  // variants: none, hflip, rot+15, -15, +30, -30
    PatchPair base = gen.get(0);
    CHECK(base.meta.augmentation == "none");

    PatchPair flipped = gen.get(1);
    CHECK(flipped.meta.augmentation == "hflip");
    CHECK(flip_horizontal(flipped.search.pixels).data == base.search.pixels.data);
    CHECK(flip_horizontal(flipped.label, kScoreSize) == base.label);

    PatchPair rotated = gen.get(2);
    CHECK(rotated.meta.augmentation == "rot+15");
    CHECK(rotated.search.pixels.data ==
          rotate_image(base.search.pixels, 15.0).data);
    CHECK(rotated.label == rotate_label(base.label, kScoreSize, 15.0));
    CHECK(rotated.query.pixels.data == base.query.pixels.data);
  }

  SECTION("a sequence with one annotated frame cannot form pairs") {
    std::string solo = fresh_dir("pairs_solo");
    testing::SyntheticSeqSpec s2;
    s2.frames = 3;
    testing::write_synthetic_sequence(solo, s2);
    fs::remove(fs::path(solo) / "Annotations" / s2.name / "00001.png");
    fs::remove(fs::path(solo) / "Annotations" / s2.name / "00002.png");
    auto seqs2 = scan_dataset(solo);
    PairGenConfig cfg;
    CHECK_THROWS_WITH(PairGenerator(seqs2, cfg),
                      Catch::Matchers::ContainsSubstring("annotated frames"));
  }
}

TEST_CASE("short sequences relax the frame gap with a warning") {
  std::string root = fresh_dir("pairs_short");
  testing::SyntheticSeqSpec spec;
  spec.frames = 3;  // max gap 2 < 5
  testing::write_synthetic_sequence(root, spec);
  auto seqs = scan_dataset(root);

  PairGenConfig cfg;
  cfg.refs_per_seq = 2;
  cfg.targets_per_ref = 2;
  cfg.augment = AugmentConfig::none();
  cfg.seed = 3;
  PairGenerator gen(seqs, cfg);
  for (std::uint64_t i = 0; i < gen.size(); ++i) {
    PatchPair p = gen.get(i);
    CHECK(p.meta.reference_frame != p.meta.target_frame);
  }
}

TEST_CASE("finetune pairs cover the first frame at the requested count") {
  testing::SyntheticSeqSpec spec;
  spec.width = 96;
  spec.height = 72;
  Image frame0 = testing::synthetic_square_frame(spec, 0);
  Mask mask0 = testing::synthetic_square_mask(spec, 0);
  Box tbox = tight_foreground_box(mask0);

  SECTION("exactly the requested number of pairs, all above the overlap floor") {
    auto pairs = generate_finetune_pairs(frame0, mask0, {10.0, 30.0, 50.0}, 150,
                                         substream_seed(11, "ft"));
    REQUIRE(pairs.size() == 150);
    for (const auto& p : pairs) {
      CHECK(overlap_ratio(tbox, p.search.source_box) >= 0.5);
      bool has_fg = false;
      for (auto v : p.label) has_fg = has_fg || v == 0;
      CHECK(has_fg);  // a crop keeping half the object always shows some of it
      CHECK(p.query.pixels.data == pairs[0].query.pixels.data);
    }
    // Margins cycle; flip alternates within a margin slot.
    CHECK(pairs[0].meta.margin == 10.0);
    CHECK(pairs[0].meta.augmentation == "none");
    CHECK(pairs[1].meta.margin == 10.0);
    CHECK(pairs[1].meta.augmentation == "hflip");
    CHECK(pairs[2].meta.margin == 30.0);

    auto again = generate_finetune_pairs(frame0, mask0, {10.0, 30.0, 50.0}, 150,
                                         substream_seed(11, "ft"));
    for (std::size_t i = 0; i < pairs.size(); ++i)
      CHECK(same_pair(pairs[i], again[i]));
  }

  SECTION("without jitter or flips, three pairs are the plain margin crops") {
    JitterConfig off;
    off.enabled = false;
    auto pairs = generate_finetune_pairs(frame0, mask0, {10.0, 30.0, 50.0}, 3,
                                         7, off, /*hflip=*/false);
    REQUIRE(pairs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      Box expect = expand_box(tbox, 10.0 + 20.0 * i, spec.width, spec.height);
      CHECK(pairs[i].search.source_box == expect);
      CHECK(pairs[i].label == downsample_label(mask0, expect));
    }
  }

  SECTION("an odd count stops mid-cycle and an empty mask throws") {
    auto pairs = generate_finetune_pairs(frame0, mask0, {10.0, 30.0, 50.0}, 7,
                                         substream_seed(2, "ft"));
    CHECK(pairs.size() == 7);
    CHECK_THROWS_WITH(
        generate_finetune_pairs(frame0, Mask(spec.width, spec.height, 1),
                                {10.0}, 3, 1),
        Catch::Matchers::ContainsSubstring("no target object"));
  }
}

TEST_CASE("channel means average every frame of every sequence") {
  std::string root = fresh_dir("means");
  fs::path dir = fs::path(root) / "JPEGImages" / "flat";
  fs::path ann = fs::path(root) / "Annotations" / "flat";
  fs::create_directories(dir);
  fs::create_directories(ann);
  // PNG is lossless, so the means are exact up to 8-bit quantization.
  save_image((dir / "00000.png").string(),
             constant_image(16, 8, 64.0f / 255, 128.0f / 255, 192.0f / 255));
  save_image((dir / "00001.png").string(),
             constant_image(16, 8, 0.0f, 128.0f / 255, 255.0f / 255));
  Mask m(16, 8, 1);
  m.at(4, 4) = 0;
  save_mask((ann / "00000.png").string(), m);

  auto seqs = scan_dataset(root);
  auto means = compute_channel_means(seqs);
  CHECK(means[0] == Catch::Approx(32.0 / 255).margin(1e-12));
  CHECK(means[1] == Catch::Approx(128.0 / 255).margin(1e-12));
  CHECK(means[2] == Catch::Approx((192.0 + 255.0) / 2 / 255).margin(1e-12));
  CHECK(compute_channel_means({})[0] == 0.0);
}
