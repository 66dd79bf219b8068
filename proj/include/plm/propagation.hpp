#pragma once

// Sequence propagation: adapt the pretrained network to frame 0, then walk
// the video frame by frame. Each step probes nine candidate boxes around the
// previous target, scores them with the fixed frame-0 query, restores the
// 50x50 outputs to frame coordinates, averages, thresholds, and keeps the
// largest connected component as the new target mask.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "plm/dataset.hpp"
#include "plm/geometry.hpp"
#include "plm/image.hpp"
#include "plm/io.hpp"
#include "plm/network.hpp"
#include "plm/rng.hpp"
#include "plm/training.hpp"

namespace plm {

struct WeightedMedianConfig {
  int filter_size = 5;
  int iterations = 3;
  double sigma_color = 25.0 / 255.0;  // Gaussian color-affinity scale
};

enum class PostprocessMode { off, weighted_median };
enum class UpdateMode { none, every_k_frames };

struct PropagationConfig {
  double candidate_margin_percent = 30.0;
  double translation_step_fraction = 0.10;  // of the expanded box dims
  double threshold = 0.5;
  PostprocessMode postprocess = PostprocessMode::off;
  WeightedMedianConfig wm;
  UpdateMode update_mode = UpdateMode::none;
  int update_every = 10;       // frames between re-adaptations
  int update_iterations = 50;  // SGD iterations per re-adaptation

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw std::invalid_argument("propagation: threshold must be in (0,1)");
    if (candidate_margin_percent < 0 || translation_step_fraction < 0)
      throw std::invalid_argument("propagation: negative candidate geometry");
    if (update_mode == UpdateMode::every_k_frames && update_every < 1)
      throw std::invalid_argument("propagation: update_every must be >= 1");
    if (wm.filter_size < 1 || wm.filter_size % 2 == 0)
      throw std::invalid_argument("propagation: filter size must be odd");
    if (wm.iterations < 0 || wm.sigma_color <= 0)
      throw std::invalid_argument("propagation: bad median filter config");
  }
};

struct FrameResult {
  Mask mask;
  Box target_box;  // tight box of mask; previous box when mask is empty
  std::vector<float> accumulated_map;  // mean foreground score per pixel
  std::vector<int> coverage_count;     // candidates covering each pixel
};

/// Nine probe boxes: the previous target box grown by the margin, placed on
/// a 3x3 grid of offsets {-s, 0, +s} in each axis (s = step fraction of the
/// grown dims), each clamped to the frame. Deterministic: no randomness.
/// Every box is at least 2x2 (the resampling minimum), so a collapsed target
/// from an earlier frame cannot make the probes unresolvable.
inline std::array<Box, 9> sample_candidates(const Box& prev_box,
                                            const PropagationConfig& cfg,
                                            int frame_w, int frame_h) {
  if (!prev_box.valid())
    throw std::invalid_argument("sample_candidates: degenerate previous box");
  double frac = cfg.candidate_margin_percent / 100.0;
  int gx = static_cast<int>(std::lround(frac * prev_box.w / 2.0));
  int gy = static_cast<int>(std::lround(frac * prev_box.h / 2.0));
  Box grown(prev_box.x - gx, prev_box.y - gy, prev_box.w + 2 * gx,
            prev_box.h + 2 * gy);
  int sx = static_cast<int>(std::lround(cfg.translation_step_fraction * grown.w));
  int sy = static_cast<int>(std::lround(cfg.translation_step_fraction * grown.h));

  auto widen = [&](Box c) {
    if (c.w < 2 && frame_w >= 2) {
      c.x = std::min(c.x, frame_w - 2);
      c.w = 2;
    }
    if (c.h < 2 && frame_h >= 2) {
      c.y = std::min(c.y, frame_h - 2);
      c.h = 2;
    }
    return c;
  };
  std::array<Box, 9> out;
  Box center = widen(clamp_to_frame(grown, frame_w, frame_h));
  int i = 0;
  for (int dy : {-sy, 0, sy}) {
    for (int dx : {-sx, 0, sx}) {
      Box c = clamp_to_frame(Box(grown.x + dx, grown.y + dy, grown.w, grown.h),
                             frame_w, frame_h);
      out[i++] = c.valid() ? widen(c) : center;  // off-frame shift: recenter
    }
  }
  return out;
}

struct StackedScores {
  int width = 0;
  int height = 0;
  std::vector<float> mean_foreground;  // 0 where nothing covers the pixel
  std::vector<int> coverage;
};

/// Averages restored score maps into a per-pixel foreground probability:
/// each covering map contributes 1 - clamp(value, 0, 1) (scores are 0 for
/// target, 1 for background, and the decoder output is unbounded).
inline StackedScores restore_and_stack(const std::vector<RestoredMap>& maps,
                                       int frame_w, int frame_h) {
  StackedScores st;
  st.width = frame_w;
  st.height = frame_h;
  std::size_t n = static_cast<std::size_t>(frame_w) * frame_h;
  st.mean_foreground.assign(n, 0.0f);
  st.coverage.assign(n, 0);
  for (const RestoredMap& m : maps) {
    if (m.width != frame_w || m.height != frame_h)
      throw std::invalid_argument("restore_and_stack: size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (!m.valid[i]) continue;
      float fg = 1.0f - std::clamp(m.values[i], 0.0f, 1.0f);
      st.mean_foreground[i] += fg;
      st.coverage[i] += 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (st.coverage[i] > 0) st.mean_foreground[i] /= st.coverage[i];
  return st;
}

/// Keeps only the largest 8-connected foreground component (ties broken by
/// scan order). An empty mask passes through unchanged.
inline Mask largest_component(const Mask& m) {
  std::size_t n = static_cast<std::size_t>(m.width) * m.height;
  std::vector<int> comp(n, -1);
  int best_id = -1;
  std::size_t best_size = 0;
  int next_id = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (m.labels[s] != 0 || comp[s] != -1) continue;
    std::size_t size = 0;
    stack.push_back(s);
    comp[s] = next_id;
    while (!stack.empty()) {
      std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      int px = static_cast<int>(p % m.width);
      int py = static_cast<int>(p / m.width);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          int qx = px + dx, qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= m.width || qy >= m.height) continue;
          std::size_t q = static_cast<std::size_t>(qy) * m.width + qx;
          if (m.labels[q] == 0 && comp[q] == -1) {
            comp[q] = next_id;
            stack.push_back(q);
          }
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_id = next_id;
    }
    ++next_id;
  }
  Mask out(m.width, m.height, 1);
  if (best_id >= 0)
    for (std::size_t i = 0; i < n; ++i)
      if (comp[i] == best_id) out.labels[i] = 0;
  return out;
}

/// Edge-aware binary cleanup: each pixel takes the weighted median of the
/// labels in its filter window, weighted by Gaussian color affinity to the
/// window center. On a constant-color frame this is a plain median filter.
inline Mask weighted_median_refine(const Mask& mask, const Image& frame,
                                   const WeightedMedianConfig& cfg = {}) {
  if (mask.width != frame.width || mask.height != frame.height)
    throw std::invalid_argument("weighted_median_refine: size mismatch");
  if (cfg.filter_size < 1 || cfg.filter_size % 2 == 0)
    throw std::invalid_argument("weighted_median_refine: filter size must be odd");
  const int r = cfg.filter_size / 2;
  const double inv = 1.0 / (2.0 * cfg.sigma_color * cfg.sigma_color);
  Mask cur = mask;
  Mask next(mask.width, mask.height, 1);
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        double wfg = 0.0, wbg = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          int ny = y + dy;
          if (ny < 0 || ny >= mask.height) continue;
          for (int dx = -r; dx <= r; ++dx) {
            int nx = x + dx;
            if (nx < 0 || nx >= mask.width) continue;
            double d2 = 0.0;
            for (int c = 0; c < frame.channels; ++c) {
              double d = frame.at(x, y, c) - frame.at(nx, ny, c);
              d2 += d * d;
            }
            double w = std::exp(-d2 * inv);
            (cur.at(nx, ny) == 0 ? wfg : wbg) += w;
          }
        }
        next.at(x, y) = wfg > wbg ? 0 : 1;
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

/// One propagation step. The query patch stays fixed; the frame is probed at
/// nine candidate boxes, scores are restored and averaged, and the mean
/// foreground map is thresholded over the covered region.
inline FrameResult segment_frame(const NetworkState<float>& st,
                                 const Patch& query, const Image& frame,
                                 const Box& prev_box,
                                 const PropagationConfig& cfg) {
  cfg.validate();
  if (!prev_box.valid())
    throw std::invalid_argument("segment_frame: degenerate previous box");
  std::array<Box, 9> candidates =
      sample_candidates(prev_box, cfg, frame.width, frame.height);

  std::vector<RestoredMap> restored;
  restored.reserve(candidates.size());
  for (const Box& c : candidates) {
    Patch p = crop_resize(frame, c, kPatchSize);
    ForwardTrace<float> tr = forward(st, query, p);
    ScoreMap sm;
    sm.values = tr.output().data;
    sm.source_box = c;
    restored.push_back(restore_map(sm, frame.width, frame.height));
  }
  StackedScores stacked = restore_and_stack(restored, frame.width, frame.height);

  Mask mask(frame.width, frame.height, 1);
  std::size_t n = stacked.mean_foreground.size();
  for (std::size_t i = 0; i < n; ++i)
    if (stacked.coverage[i] > 0 &&
        stacked.mean_foreground[i] > static_cast<float>(cfg.threshold))
      mask.labels[i] = 0;
  mask = largest_component(mask);
  if (cfg.postprocess == PostprocessMode::weighted_median) {
    mask = weighted_median_refine(mask, frame, cfg.wm);
    for (std::size_t i = 0; i < n; ++i)  // never step outside probed area
      if (stacked.coverage[i] == 0) mask.labels[i] = 1;
  }

  FrameResult res;
  res.target_box =
      mask.foreground_count() > 0 ? tight_foreground_box(mask) : prev_box;
  res.mask = std::move(mask);
  res.accumulated_map = std::move(stacked.mean_foreground);
  res.coverage_count = std::move(stacked.coverage);
  return res;
}

struct PropagationRunConfig {
  PropagationConfig prop;
  FinetuneOptions finetune_opts;
  std::vector<double> finetune_margins{10.0, 30.0, 50.0};
  int finetune_pair_count = 150;
  JitterConfig jitter;
  std::uint64_t seed = 0;
};

struct SequenceResult {
  std::vector<FrameResult> frames;
  std::vector<double> frame_seconds;  // per-frame wall clock, [0] = adaptation
  NetworkState<float> network;        // state after the run
};

/// Full per-sequence pipeline: fine-tune a copy of the pretrained network on
/// the annotated first frame, then chain segment_frame through the sequence.
/// Frame 0 reports the ground truth. In the default mode the network and the
/// query never change after adaptation; in the periodic-update mode both are
/// rebuilt from the previous frame's prediction every update_every frames.
inline SequenceResult propagate_sequence(const Sequence& seq,
                                         const NetworkState<float>& pretrained,
                                         const PropagationRunConfig& run) {
  run.prop.validate();
  if (seq.frames.empty())
    throw std::invalid_argument("propagate_sequence: empty sequence");
  if (!seq.has_annotation(0))
    throw std::invalid_argument("propagate_sequence: sequence " + seq.name +
                                ": missing annotation for frame 0");
  auto tick = [] { return std::chrono::steady_clock::now(); };
  auto secs = [](auto a, auto b) {
    return std::chrono::duration<double>(b - a).count();
  };

  SequenceResult out;
  out.network = pretrained;
  Image prev_img = load_image(seq.frames[0]);
  Mask mask0 = load_mask(seq.annotations[0]);
  if (mask0.width != prev_img.width || mask0.height != prev_img.height)
    throw std::runtime_error("propagate_sequence: frame 0 mask size mismatch");

  auto t0 = tick();
  std::vector<PatchPair> pairs = generate_finetune_pairs(
      prev_img, mask0, run.finetune_margins, run.finetune_pair_count,
      substream_seed(run.seed, "finetune_pairs"), run.jitter);
  finetune(out.network, pairs, run.finetune_opts);
  Patch query = make_query(prev_img, mask0);
  query.source_frame_index = 0;

  FrameResult first;
  first.target_box = tight_foreground_box(mask0);
  std::size_t n = static_cast<std::size_t>(mask0.width) * mask0.height;
  first.accumulated_map.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    first.accumulated_map[i] = mask0.labels[i] == 0 ? 1.0f : 0.0f;
  first.coverage_count.assign(n, 1);
  first.mask = std::move(mask0);
  out.frames.push_back(std::move(first));
  out.frame_seconds.push_back(secs(t0, tick()));

  Box prev_box = out.frames[0].target_box;
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    auto tf = tick();
    if (run.prop.update_mode == UpdateMode::every_k_frames &&
        t % static_cast<std::size_t>(run.prop.update_every) == 0) {
      const Mask& pm = out.frames[t - 1].mask;
      if (pm.foreground_count() > 0) {
        query = make_query(prev_img, pm);
        query.source_frame_index = static_cast<int>(t - 1);
        std::vector<PatchPair> up = generate_finetune_pairs(
            prev_img, pm, run.finetune_margins, run.finetune_pair_count,
            substream_seed(run.seed, "update_pairs/" + std::to_string(t)),
            run.jitter);
        FinetuneOptions uo = run.finetune_opts;
        uo.iterations = run.prop.update_iterations;
        finetune(out.network, up, uo);
      } else {
        std::cerr << "propagate: skipping model update at frame " << t
                  << " (previous mask is empty)\n";
      }
    }
    Image frame = load_image(seq.frames[t]);
    out.frames.push_back(
        segment_frame(out.network, query, frame, prev_box, run.prop));
    prev_box = out.frames.back().target_box;
    prev_img = std::move(frame);
    out.frame_seconds.push_back(secs(tf, tick()));
  }
  return out;
}

}  // namespace plm
