#pragma once

// Dataset ingestion and training-pair synthesis: scanning DAVIS-style trees,
// building segmented query patches, sampling overlap-constrained search
// crops, and generating the deterministic pretraining / fine-tuning pair
// streams.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plm/geometry.hpp"
#include "plm/image.hpp"
#include "plm/io.hpp"
#include "plm/rng.hpp"

namespace plm {

struct Sequence {
  std::string name;
  std::vector<std::string> frames;       // image paths, sorted
  std::vector<std::string> annotations;  // mask path per frame, "" if absent

  bool has_annotation(std::size_t i) const {
    return i < annotations.size() && !annotations[i].empty();
  }
  std::size_t annotated_count() const {
    std::size_t n = 0;
    for (auto& a : annotations) n += !a.empty();
    return n;
  }
};

/// Scans a DAVIS-style tree: `JPEGImages/<seq>/NNNNN.jpg` plus
/// `Annotations/<seq>/NNNNN.png`. Sequences and frames come back sorted by
/// name. Every sequence must have a frame-0 annotation; present annotations
/// must match their frame's dimensions.
inline std::vector<Sequence> scan_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::vector<Sequence> out;
  fs::path images_root = fs::path(root) / "JPEGImages";
  fs::path anno_root = fs::path(root) / "Annotations";
  if (!fs::is_directory(images_root)) return out;

  std::vector<fs::path> seq_dirs;
  for (auto& e : fs::directory_iterator(images_root))
    if (e.is_directory()) seq_dirs.push_back(e.path());
  std::sort(seq_dirs.begin(), seq_dirs.end());

  for (const auto& dir : seq_dirs) {
    Sequence seq;
    seq.name = dir.filename().string();
    std::vector<fs::path> frame_files;
    for (auto& e : fs::directory_iterator(dir)) {
      auto ext = e.path().extension().string();
      if (ext == ".jpg" || ext == ".jpeg" || ext == ".png")
        frame_files.push_back(e.path());
    }
    std::sort(frame_files.begin(), frame_files.end());
    if (frame_files.empty()) continue;
    for (const auto& fp : frame_files) {
      seq.frames.push_back(fp.string());
      fs::path mask = anno_root / seq.name / (fp.stem().string() + ".png");
      seq.annotations.push_back(fs::exists(mask) ? mask.string() : std::string());
    }
    if (seq.annotations[0].empty())
      throw std::runtime_error("sequence " + seq.name + ": missing annotation for frame 0");
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      if (seq.annotations[i].empty()) continue;
      Image img = load_image(seq.frames[i]);
      Mask m = load_mask(seq.annotations[i]);
      if (img.width != m.width || img.height != m.height)
        throw std::runtime_error("dimension mismatch between " + seq.frames[i] +
                                 " and " + seq.annotations[i]);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

/// Builds the query patch: tight foreground box grown by 25%, background
/// zeroed from the mask, resampled to 100x100. Zeroing happens both before
/// resampling (so background colors cannot bleed into the object) and after
/// (so background pixels are exactly zero in the patch).
inline Patch make_query(const Image& frame, const Mask& mask) {
  Box tight = tight_foreground_box(mask);  // throws "no target object"
  Box box = expand_box(tight, 25.0, frame.width, frame.height);
  Image segmented = frame;
  for (int y = box.y; y < box.bottom(); ++y)
    for (int x = box.x; x < box.right(); ++x)
      if (mask.at(x, y) != 0)
        for (int c = 0; c < frame.channels; ++c) segmented.at(x, y, c) = 0.0f;
  Patch p = crop_resize(segmented, box, kPatchSize);
  auto patch_mask = mask_crop_nearest(mask, box, kPatchSize);
  for (int y = 0; y < kPatchSize; ++y)
    for (int x = 0; x < kPatchSize; ++x)
      if (patch_mask[static_cast<std::size_t>(y) * kPatchSize + x] != 0)
        for (int c = 0; c < p.pixels.channels; ++c) p.pixels.at(x, y, c) = 0.0f;
  return p;
}

inline Patch make_query(const Sequence& seq, int frame_idx) {
  if (!seq.has_annotation(frame_idx))
    throw std::invalid_argument("make_query: frame " + std::to_string(frame_idx) +
                                " of " + seq.name + " has no annotation");
  Image frame = load_image(seq.frames[frame_idx]);
  Mask mask = load_mask(seq.annotations[frame_idx]);
  Patch p = make_query(frame, mask);
  p.source_frame_index = frame_idx;
  return p;
}

struct JitterConfig {
  bool enabled = true;
  double translate_frac = 0.25;  // of the expanded box dimensions
  int max_retries = 20;
};

/// One search box per margin: expand the target box, then translate it
/// randomly (when jitter is enabled) while keeping at least half of the
/// target inside. After max_retries failed draws the unjittered box is used.
inline std::vector<Box> sample_search_boxes(const Box& target_box,
                                            const std::vector<double>& margins,
                                            const JitterConfig& jitter,
                                            std::uint64_t rng_seed, int frame_w,
                                            int frame_h) {
  if (!target_box.valid())
    throw std::invalid_argument("sample_search_boxes: invalid target box");
  Rng rng(rng_seed);
  std::vector<Box> out;
  out.reserve(margins.size());
  for (double margin : margins) {
    Box base = expand_box(target_box, margin, frame_w, frame_h);
    Box chosen = base;
    if (jitter.enabled) {
      for (int attempt = 0; attempt < jitter.max_retries; ++attempt) {
        int dx = static_cast<int>(std::lround(
            rng.uniform(-jitter.translate_frac, jitter.translate_frac) * base.w));
        int dy = static_cast<int>(std::lround(
            rng.uniform(-jitter.translate_frac, jitter.translate_frac) * base.h));
        Box cand = clamp_to_frame(Box(base.x + dx, base.y + dy, base.w, base.h),
                                  frame_w, frame_h);
        if (cand.valid() && cand.w >= 2 && cand.h >= 2 &&
            overlap_ratio(target_box, cand) >= 0.5) {
          chosen = cand;
          break;
        }
      }
    }
    out.push_back(chosen);
  }
  return out;
}

struct AugmentConfig {
  bool hflip = true;
  std::vector<double> rotations = {15.0, -15.0, 30.0, -30.0};
  int crops_per_combo = 1;  // jittered crops per (reference, target, margin)

  int variants_per_base() const {
    return 1 + (hflip ? 1 : 0) + static_cast<int>(rotations.size());
  }
  static AugmentConfig none() {
    AugmentConfig a;
    a.hflip = false;
    a.rotations.clear();
    a.crops_per_combo = 1;
    return a;
  }
};

struct PairMeta {
  std::string sequence;
  int reference_frame = 0;
  int target_frame = 0;
  double margin = 0.0;
  int crop_index = 0;
  std::string augmentation = "none";
};

struct PatchPair {
  Patch query;   // reference object, background zeroed
  Patch search;  // crop around the target-frame object
  std::vector<std::uint8_t> label;  // 50x50, 0 = target, 1 = background
  PairMeta meta;
};

/// Applies variant v in place to the search patch and its label with the
/// same geometric map. v=0 is the identity; v=1 horizontal flip (when
/// enabled); the rest are the configured rotations in order.
inline std::string apply_augmentation(const AugmentConfig& aug, int variant,
                                      Image& search, std::vector<std::uint8_t>& label) {
  if (variant == 0) return "none";
  int v = variant - 1;
  if (aug.hflip) {
    if (v == 0) {
      search = flip_horizontal(search);
      label = flip_horizontal(label, kScoreSize);
      return "hflip";
    }
    --v;
  }
  double deg = aug.rotations.at(v);
  search = rotate_image(search, deg);
  label = rotate_label(label, kScoreSize, deg);
  char buf[32];
  std::snprintf(buf, sizeof buf, "rot%+g", deg);
  return buf;
}

struct PairGenConfig {
  int refs_per_seq = 20;
  int targets_per_ref = 6;
  std::vector<double> margins = {10.0, 30.0, 50.0};
  AugmentConfig augment;
  JitterConfig jitter;
  int min_frame_gap = 5;
  std::uint64_t seed = 0;
};

namespace detail {

// Sample k values from `pool` without replacement when possible, with
// replacement otherwise; always returns exactly k values.
inline std::vector<int> sample_k(const std::vector<int>& pool, int k, Rng& rng) {
  std::vector<int> out;
  out.reserve(k);
  if (static_cast<int>(pool.size()) >= k) {
    std::vector<int> shuffled = pool;
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
      std::size_t j = rng.uniform_index(i + 1);
      std::swap(shuffled[i], shuffled[j]);
    }
    out.assign(shuffled.begin(), shuffled.begin() + k);
  } else {
    for (int i = 0; i < k; ++i) out.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return out;
}

// Bounded FIFO cache for decoded frames/masks.
template <typename V>
class FileCache {
 public:
  explicit FileCache(std::size_t cap = 128) : cap_(cap) {}
  template <typename Loader>
  const V& get(const std::string& path, Loader&& load) {
    auto it = map_.find(path);
    if (it != map_.end()) return it->second;
    if (map_.size() >= cap_) {
      map_.erase(order_.front());
      order_.pop_front();
    }
    order_.push_back(path);
    return map_.emplace(path, load(path)).first->second;
  }

 private:
  std::size_t cap_;
  std::map<std::string, V> map_;
  std::deque<std::string> order_;
};

}  // namespace detail

/// Deterministic pretraining pair stream. The total count has a closed form:
/// sequences x refs x targets x margins x crops x variants, and get(i)
/// reconstructs pair i from scratch (same seed, same bytes).
class PairGenerator {
 public:
  PairGenerator(std::vector<Sequence> seqs, PairGenConfig cfg)
      : seqs_(std::move(seqs)), cfg_(std::move(cfg)) {
    if (cfg_.refs_per_seq < 1 || cfg_.targets_per_ref < 1 ||
        cfg_.margins.empty() || cfg_.augment.crops_per_combo < 1)
      throw std::invalid_argument("pair generator: counts must be positive");
    for (const auto& seq : seqs_) {
      Plan plan;
      std::vector<int> annotated;
      for (std::size_t i = 0; i < seq.frames.size(); ++i)
        if (seq.has_annotation(i)) annotated.push_back(static_cast<int>(i));
      if (annotated.size() < 2)
        throw std::invalid_argument("sequence " + seq.name +
                                    " lacks the annotated frames for pair generation");
      Rng ref_rng = substream(cfg_.seed, "refs/" + seq.name);
      plan.refs = detail::sample_k(annotated, cfg_.refs_per_seq, ref_rng);
      bool warned = false;
      for (std::size_t ri = 0; ri < plan.refs.size(); ++ri) {
        int ref = plan.refs[ri];
        std::vector<int> far, near;
        for (int t : annotated) {
          if (std::abs(t - ref) >= cfg_.min_frame_gap) far.push_back(t);
          if (t != ref) near.push_back(t);
        }
        const std::vector<int>* pool = &far;
        if (far.empty()) {
          pool = &near;  // separation relaxed to >= 1
          if (!warned) {
            std::cerr << "warning: sequence " << seq.name
                      << ": too short for frame gap " << cfg_.min_frame_gap
                      << ", relaxing to 1\n";
            warned = true;
          }
        }
        Rng tgt_rng = substream(cfg_.seed, "targets/" + seq.name, ri);
        plan.targets.push_back(detail::sample_k(*pool, cfg_.targets_per_ref, tgt_rng));
      }
      plans_.push_back(std::move(plan));
    }
    per_combo_ = static_cast<std::uint64_t>(cfg_.margins.size()) *
                 cfg_.augment.crops_per_combo * cfg_.augment.variants_per_base();
    per_seq_ = static_cast<std::uint64_t>(cfg_.refs_per_seq) *
               cfg_.targets_per_ref * per_combo_;
  }

  std::uint64_t size() const { return per_seq_ * seqs_.size(); }
  const PairGenConfig& config() const { return cfg_; }
  const std::vector<Sequence>& sequences() const { return seqs_; }

  PatchPair get(std::uint64_t index) {
    if (index >= size()) throw std::out_of_range("pair index out of range");
    std::uint64_t seq_i = index / per_seq_;
    std::uint64_t rem = index % per_seq_;
    std::uint64_t ref_i = rem / (cfg_.targets_per_ref * per_combo_);
    rem %= cfg_.targets_per_ref * per_combo_;
    std::uint64_t tgt_i = rem / per_combo_;
    rem %= per_combo_;
    const std::uint64_t per_margin =
        static_cast<std::uint64_t>(cfg_.augment.crops_per_combo) *
        cfg_.augment.variants_per_base();
    std::uint64_t margin_i = rem / per_margin;
    rem %= per_margin;
    std::uint64_t crop_i = rem / cfg_.augment.variants_per_base();
    int variant = static_cast<int>(rem % cfg_.augment.variants_per_base());

    const Sequence& seq = seqs_[seq_i];
    const Plan& plan = plans_[seq_i];
    int ref_frame = plan.refs[ref_i];
    int tgt_frame = plan.targets[ref_i][tgt_i];

    const Image& ref_img = images_.get(seq.frames[ref_frame], load_image);
    const Mask& ref_mask = masks_.get(seq.annotations[ref_frame], load_mask);
    const Image& tgt_img = images_.get(seq.frames[tgt_frame], load_image);
    const Mask& tgt_mask = masks_.get(seq.annotations[tgt_frame], load_mask);

    Box tgt_box = tight_foreground_box(tgt_mask);
    std::uint64_t box_seed = substream_seed(
        cfg_.seed,
        "boxes/" + seq.name + "/" + std::to_string(ref_frame) + "/" +
            std::to_string(tgt_frame),
        crop_i);
    auto boxes = sample_search_boxes(tgt_box, cfg_.margins, cfg_.jitter, box_seed,
                                     tgt_img.width, tgt_img.height);
    const Box& box = boxes[margin_i];

    PatchPair pair;
    pair.query = make_query(ref_img, ref_mask);
    pair.query.source_frame_index = ref_frame;
    pair.search = crop_resize(tgt_img, box, kPatchSize);
    pair.search.source_frame_index = tgt_frame;
    pair.label = downsample_label(tgt_mask, box);
    pair.meta.sequence = seq.name;
    pair.meta.reference_frame = ref_frame;
    pair.meta.target_frame = tgt_frame;
    pair.meta.margin = cfg_.margins[margin_i];
    pair.meta.crop_index = static_cast<int>(crop_i);
    pair.meta.augmentation =
        apply_augmentation(cfg_.augment, variant, pair.search.pixels, pair.label);
    return pair;
  }

 private:
  struct Plan {
    std::vector<int> refs;
    std::vector<std::vector<int>> targets;  // per ref slot
  };

  std::vector<Sequence> seqs_;
  PairGenConfig cfg_;
  std::vector<Plan> plans_;
  std::uint64_t per_combo_ = 0;
  std::uint64_t per_seq_ = 0;
  detail::FileCache<Image> images_;
  detail::FileCache<Mask> masks_;
};

/// First-frame adaptation set: a fixed query from frame 0 and exactly
/// target_count (margin-cycled, jittered, optionally flipped) search crops
/// of frame 0, labeled from its mask.
inline std::vector<PatchPair> generate_finetune_pairs(
    const Image& first_frame, const Mask& first_mask,
    const std::vector<double>& margins, int target_count, std::uint64_t rng_seed,
    const JitterConfig& jitter = JitterConfig{}, bool hflip = true) {
  if (margins.empty() || target_count < 0)
    throw std::invalid_argument("finetune pairs: bad arguments");
  Patch query = make_query(first_frame, first_mask);  // throws on empty mask
  query.source_frame_index = 0;
  Box tbox = tight_foreground_box(first_mask);

  std::vector<PatchPair> out;
  out.reserve(target_count);
  for (std::uint64_t round = 0; static_cast<int>(out.size()) < target_count; ++round) {
    auto boxes = sample_search_boxes(tbox, margins, jitter,
                                     substream_seed(rng_seed, "ft_boxes", round),
                                     first_frame.width, first_frame.height);
    for (std::size_t mi = 0; mi < boxes.size(); ++mi) {
      for (int flip = 0; flip < (hflip ? 2 : 1); ++flip) {
        if (static_cast<int>(out.size()) >= target_count) break;
        PatchPair pair;
        pair.query = query;
        pair.search = crop_resize(first_frame, boxes[mi], kPatchSize);
        pair.search.source_frame_index = 0;
        pair.label = downsample_label(first_mask, boxes[mi]);
        pair.meta.sequence = "";
        pair.meta.reference_frame = 0;
        pair.meta.target_frame = 0;
        pair.meta.margin = margins[mi];
        pair.meta.crop_index = static_cast<int>(round);
        pair.meta.augmentation = "none";
        if (flip == 1) {
          pair.search.pixels = flip_horizontal(pair.search.pixels);
          pair.label = flip_horizontal(pair.label, kScoreSize);
          pair.meta.augmentation = "hflip";
        }
        out.push_back(std::move(pair));
      }
    }
  }
  return out;
}

/// Per-channel pixel means over every frame of the given sequences (the
/// normalization constants stored in checkpoints).
inline std::array<double, 3> compute_channel_means(const std::vector<Sequence>& seqs) {
  std::array<double, 3> sum{0, 0, 0};
  std::uint64_t count = 0;
  for (const auto& seq : seqs) {
    for (const auto& path : seq.frames) {
      Image img = load_image(path);
      const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        const float* p = img.data.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        sum[c] += acc;
      }
      count += plane;
    }
  }
  if (count == 0) return {0, 0, 0};
  return {sum[0] / count, sum[1] / count, sum[2] / count};
}

}  // namespace plm
