#pragma once

// Scoring: region IoU, boundary F-measure, drift stability, key-frame
// transfer error, and pixel error rate, plus directory-tree report
// generation (CSV + JSON).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plm/image.hpp"
#include "plm/io.hpp"

namespace plm {

namespace detail {

inline void require_same_dims(const Mask& a, const Mask& b, const char* who) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(who) + ": mask dimensions differ");
}

/// Population standard deviation (normalized by N, not N-1).
inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace detail

/// Intersection over union of the foreground regions; 1.0 when both masks
/// are empty (nothing to miss).
inline double iou(const Mask& pred, const Mask& gt) {
  detail::require_same_dims(pred, gt, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    bool p = pred.labels[i] == 0;
    bool g = gt.labels[i] == 0;
    inter += (p && g);
    uni += (p || g);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Foreground pixels 4-adjacent to background or to the frame edge.
inline std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y) != 0) continue;
      bool edge = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1;
      if (edge || m.at(x - 1, y) != 0 || m.at(x + 1, y) != 0 ||
          m.at(x, y - 1) != 0 || m.at(x, y + 1) != 0)
        out.emplace_back(x, y);
    }
  }
  return out;
}

/// Default boundary-matching tolerance: 0.8% of the frame diagonal,
/// rounded up.
inline int default_contour_tolerance(int width, int height) {
  double diag = std::sqrt(static_cast<double>(width) * width +
                          static_cast<double>(height) * height);
  return static_cast<int>(std::ceil(0.008 * diag));
}

/// Boundary F-measure: precision = fraction of predicted boundary within
/// tolerance_px (Euclidean) of the reference boundary, recall symmetric,
/// F = 2PR/(P+R). Both boundaries empty -> 1.0; exactly one empty -> 0.0.
inline double contour_f(const Mask& pred, const Mask& gt, int tolerance_px) {
  detail::require_same_dims(pred, gt, "contour_f");
  if (tolerance_px < 0)
    throw std::invalid_argument("contour_f: negative tolerance");
  auto bp = boundary_pixels(pred);
  auto bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;

  const int w = pred.width, h = pred.height;
  const long r2 = static_cast<long>(tolerance_px) * tolerance_px;
  auto dilate = [&](const std::vector<std::pair<int, int>>& pts) {
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(w) * h, 0);
    for (auto [x, y] : pts) {
      for (int dy = -tolerance_px; dy <= tolerance_px; ++dy) {
        int ny = y + dy;
        if (ny < 0 || ny >= h) continue;
        for (int dx = -tolerance_px; dx <= tolerance_px; ++dx) {
          int nx = x + dx;
          if (nx < 0 || nx >= w) continue;
          if (static_cast<long>(dx) * dx + static_cast<long>(dy) * dy <= r2)
            grid[static_cast<std::size_t>(ny) * w + nx] = 1;
        }
      }
    }
    return grid;
  };
  auto near_gt = dilate(bg);
  auto near_pred = dilate(bp);
  std::size_t hit_p = 0, hit_g = 0;
  for (auto [x, y] : bp)
    hit_p += near_gt[static_cast<std::size_t>(y) * w + x];
  for (auto [x, y] : bg)
    hit_g += near_pred[static_cast<std::size_t>(y) * w + x];
  double precision = static_cast<double>(hit_p) / static_cast<double>(bp.size());
  double recall = static_cast<double>(hit_g) / static_cast<double>(bg.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double contour_f(const Mask& pred, const Mask& gt) {
  return contour_f(pred, gt, default_contour_tolerance(pred.width, pred.height));
}

/// Key-frame transfer error: each term is 100 * |pred XOR gt| / |gt
/// foreground| at the frame d steps after a key frame; the result averages
/// the terms. Terms whose ground truth has no foreground are skipped (with
/// a warning); throws when nothing remains to score.
inline double transfer_error(const std::vector<Mask>& preds,
                             const std::vector<Mask>& gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("transfer_error: pred/gt count mismatch");
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    detail::require_same_dims(preds[k], gts[k], "transfer_error");
    std::size_t fg = gts[k].foreground_count();
    if (fg == 0) {
      std::cerr << "transfer_error: skipping key frame " << k
                << " (empty ground-truth foreground)\n";
      continue;
    }
    std::size_t mislabeled = 0;
    for (std::size_t i = 0; i < preds[k].labels.size(); ++i)
      mislabeled += (preds[k].labels[i] == 0) != (gts[k].labels[i] == 0);
    sum += static_cast<double>(mislabeled) / static_cast<double>(fg);
    ++n;
  }
  if (n == 0)
    throw std::runtime_error("transfer_error: no scorable key frames");
  return 100.0 * sum / static_cast<double>(n);
}

/// Percentage of misclassified pixels over all pixels.
inline double error_rate(const Mask& pred, const Mask& gt) {
  detail::require_same_dims(pred, gt, "error_rate");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i)
    wrong += (pred.labels[i] == 0) != (gt.labels[i] == 0);
  if (pred.labels.empty()) return 0.0;
  return 100.0 * static_cast<double>(wrong) /
         static_cast<double>(pred.labels.size());
}

struct SequenceScores {
  std::vector<double> iou_series;  // frames 1..T-1 (frame 0 is given)
  std::vector<double> f_series;
  double mean_iou = 0.0;
  double mean_f = 0.0;
  double stability_iou = 0.0;  // population std of the series
  double stability_f = 0.0;
};

/// Scores aligned prediction/ground-truth masks for frames 1..T-1 of a
/// sequence (pass exactly the scored frames; frame 0 must be excluded by
/// the caller since it is given).
inline SequenceScores score_sequence(const std::vector<Mask>& preds,
                                     const std::vector<Mask>& gts,
                                     int tolerance_px = -1) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("score_sequence: pred/gt count mismatch");
  SequenceScores s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int tol = tolerance_px >= 0
                  ? tolerance_px
                  : default_contour_tolerance(gts[i].width, gts[i].height);
    s.iou_series.push_back(iou(preds[i], gts[i]));
    s.f_series.push_back(contour_f(preds[i], gts[i], tol));
  }
  s.mean_iou = detail::mean_of(s.iou_series);
  s.mean_f = detail::mean_of(s.f_series);
  s.stability_iou = detail::population_std(s.iou_series);
  s.stability_f = detail::population_std(s.f_series);
  return s;
}

// --- Directory-tree evaluation ---

enum class Protocol { davis, jumpcut, errorrate };

inline std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::davis: return "davis";
    case Protocol::jumpcut: return "jumpcut";
    case Protocol::errorrate: return "errorrate";
  }
  throw std::logic_error("unknown protocol");
}

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "davis") return Protocol::davis;
  if (s == "jumpcut") return Protocol::jumpcut;
  if (s == "errorrate") return Protocol::errorrate;
  throw std::invalid_argument("unknown protocol: " + s);
}

struct EvalConfig {
  Protocol protocol = Protocol::davis;
  int jumpcut_distance = 16;  // frames between a key frame and its scored frame
  int jumpcut_last_key = 96;  // keys are 0, 16, ..., last_key
  int tolerance_px = -1;      // contour tolerance; <0 = per-frame default
};

struct SequenceReport {
  std::string name;
  SequenceScores scores;  // davis protocol
  double err = 0.0;       // jumpcut / errorrate protocols
  int n_frames = 0;       // frames scored
  bool incomplete = false;
  std::vector<std::string> notes;  // e.g. missing prediction files
};

struct RunReport {
  EvalConfig config;
  std::vector<SequenceReport> sequences;
  std::vector<std::string> unscored;  // sequences with no scorable frame
  double mean_iou = 0.0;  // averages over sequences (davis)
  double mean_f = 0.0;
  double mean_stability_iou = 0.0;
  double mean_stability_f = 0.0;
  double mean_err = 0.0;  // jumpcut / errorrate
};

namespace detail {

/// Sorted NNNNN.png frame files of one sequence directory.
inline std::vector<std::filesystem::path> frame_files(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

/// Walks gt_dir/<sequence>/NNNNN.png against pred_dir/<sequence>/NNNNN.png
/// and scores every sequence under the chosen protocol. Sequences and frames
/// are processed in sorted order, so listing order never affects the report.
inline RunReport evaluate_run(const std::string& pred_dir,
                              const std::string& gt_dir,
                              const EvalConfig& cfg = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(gt_dir))
    throw std::invalid_argument("evaluate_run: ground-truth directory missing: " +
                                gt_dir);
  RunReport report;
  report.config = cfg;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());

  for (const std::string& name : names) {
    auto gt_frames = detail::frame_files(fs::path(gt_dir) / name);
    if (gt_frames.empty()) continue;
    SequenceReport sr;
    sr.name = name;

    auto pred_path = [&](const fs::path& gt_frame) {
      return fs::path(pred_dir) / name / gt_frame.filename();
    };

    if (cfg.protocol == Protocol::jumpcut) {
      std::vector<Mask> preds, gts;
      for (int key = 0; key <= cfg.jumpcut_last_key;
           key += cfg.jumpcut_distance) {
        std::size_t scored = static_cast<std::size_t>(key) + cfg.jumpcut_distance;
        if (scored >= gt_frames.size()) break;
        fs::path pp = pred_path(gt_frames[scored]);
        if (!fs::exists(pp)) {
          sr.incomplete = true;
          sr.notes.push_back("missing prediction: " + pp.string());
          continue;
        }
        preds.push_back(load_mask(pp.string()));
        gts.push_back(load_mask(gt_frames[scored].string()));
      }
      sr.n_frames = static_cast<int>(preds.size());
      if (!preds.empty()) sr.err = transfer_error(preds, gts);
    } else {
      std::vector<Mask> preds, gts;
      for (std::size_t t = 1; t < gt_frames.size(); ++t) {
        fs::path pp = pred_path(gt_frames[t]);
        if (!fs::exists(pp)) {
          sr.incomplete = true;
          sr.notes.push_back("missing prediction: " + pp.string());
          continue;
        }
        preds.push_back(load_mask(pp.string()));
        gts.push_back(load_mask(gt_frames[t].string()));
      }
      sr.n_frames = static_cast<int>(preds.size());
      if (cfg.protocol == Protocol::davis) {
        sr.scores = score_sequence(preds, gts, cfg.tolerance_px);
      } else {
        std::vector<double> errs;
        for (std::size_t i = 0; i < preds.size(); ++i)
          errs.push_back(error_rate(preds[i], gts[i]));
        sr.err = detail::mean_of(errs);
      }
    }
    if (sr.n_frames == 0) {
      report.unscored.push_back(name);
      continue;
    }
    report.sequences.push_back(std::move(sr));
  }

  std::vector<double> ious, fs_, sious, sfs, errs;
  for (const auto& s : report.sequences) {
    if (cfg.protocol == Protocol::davis) {
      ious.push_back(s.scores.mean_iou);
      fs_.push_back(s.scores.mean_f);
      sious.push_back(s.scores.stability_iou);
      sfs.push_back(s.scores.stability_f);
    } else {
      errs.push_back(s.err);
    }
  }
  report.mean_iou = detail::mean_of(ious);
  report.mean_f = detail::mean_of(fs_);
  report.mean_stability_iou = detail::mean_of(sious);
  report.mean_stability_f = detail::mean_of(sfs);
  report.mean_err = detail::mean_of(errs);
  return report;
}

/// CSV rows: davis -> (sequence, mean_iou, mean_f, std_iou, std_f, n_frames);
/// other protocols -> (sequence, err). A final AVERAGE row aggregates.
inline std::string report_csv(const RunReport& r) {
  std::string out;
  if (r.config.protocol == Protocol::davis) {
    out += "sequence,mean_iou,mean_f,std_iou,std_f,n_frames\n";
    for (const auto& s : r.sequences) {
      out += s.name + "," + detail::fmt(s.scores.mean_iou) + "," +
             detail::fmt(s.scores.mean_f) + "," +
             detail::fmt(s.scores.stability_iou) + "," +
             detail::fmt(s.scores.stability_f) + "," +
             std::to_string(s.n_frames) + "\n";
    }
    out += "AVERAGE," + detail::fmt(r.mean_iou) + "," + detail::fmt(r.mean_f) +
           "," + detail::fmt(r.mean_stability_iou) + "," +
           detail::fmt(r.mean_stability_f) + ",\n";
  } else {
    out += "sequence,err\n";
    for (const auto& s : r.sequences)
      out += s.name + "," + detail::fmt(s.err) + "\n";
    out += "AVERAGE," + detail::fmt(r.mean_err) + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = {{"protocol", to_string(r.config.protocol)},
                 {"jumpcut_distance", r.config.jumpcut_distance},
                 {"tolerance_px", r.config.tolerance_px}};
  j["sequences"] = nlohmann::json::array();
  for (const auto& s : r.sequences) {
    nlohmann::json js;
    js["name"] = s.name;
    js["n_frames"] = s.n_frames;
    js["incomplete"] = s.incomplete;
    if (!s.notes.empty()) js["notes"] = s.notes;
    if (r.config.protocol == Protocol::davis) {
      js["mean_iou"] = s.scores.mean_iou;
      js["mean_f"] = s.scores.mean_f;
      js["std_iou"] = s.scores.stability_iou;
      js["std_f"] = s.scores.stability_f;
    } else {
      js["err"] = s.err;
    }
    j["sequences"].push_back(std::move(js));
  }
  if (!r.unscored.empty()) j["unscored"] = r.unscored;
  if (r.config.protocol == Protocol::davis) {
    j["average"] = {{"mean_iou", r.mean_iou},
                    {"mean_f", r.mean_f},
                    {"std_iou", r.mean_stability_iou},
                    {"std_f", r.mean_stability_f}};
  } else {
    j["average"] = {{"err", r.mean_err}};
  }
  return j;
}

inline void write_report(const RunReport& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "report.csv");
  csv << report_csv(r);
  std::ofstream js(fs::path(out_dir) / "report.json");
  js << report_json(r).dump(2) << "\n";
}

}  // namespace plm
