#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "plm/checkpoint.hpp"
#include "plm/config.hpp"
#include "plm/dataset.hpp"
#include "plm/evaluation.hpp"
#include "plm/network.hpp"
#include "plm/propagation.hpp"
#include "plm/training.hpp"

namespace plm {

namespace detail {

inline std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d.png", index);
  return buf;
}

/// Deterministic run record: the fully resolved config plus per-command
/// facts. Deliberately excludes wall-clock times so that two runs with the
/// same seed produce byte-identical artifacts; timings go to stdout instead.
inline void write_run_record(const std::string& out_dir,
                             const std::string& command, const RunConfig& cfg,
                             nlohmann::json extra) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = cfg.to_json();
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream f(out_dir + "/run.json");
  if (!f) throw std::runtime_error("cannot write run record in " + out_dir);
  f << j.dump(2) << "\n";
}

inline std::string resolve_data_root(const RunConfig& cfg) {
  const char* env = std::getenv("PLM_DATA_ROOT");
  std::string root = cfg.str("data_root", env ? env : "");
  if (root.empty())
    throw std::runtime_error(
        "no dataset root: pass --data, set data_root in the config file, or "
        "export PLM_DATA_ROOT");
  return root;
}

inline std::string make_out_dir(const RunConfig& cfg, const std::string& command) {
  std::string out = cfg.str("out_dir", "plm_runs/" + command);
  std::filesystem::create_directories(out);
  return out;
}

inline OptimizerConfig optimizer_from(const RunConfig& cfg,
                                      const OptimizerConfig& defaults) {
  OptimizerConfig opt = defaults;
  opt.learning_rate = cfg.num("lr", defaults.learning_rate);
  opt.momentum = cfg.num("momentum", defaults.momentum);
  opt.weight_decay = cfg.num("weight_decay", defaults.weight_decay);
  opt.batch_size = static_cast<int>(cfg.integer("batch_size", defaults.batch_size));
  opt.lr_drop_every =
      static_cast<int>(cfg.integer("lr_drop_every", defaults.lr_drop_every));
  opt.lr_drop_factor = cfg.num("lr_drop_factor", defaults.lr_drop_factor);
  opt.validate();
  return opt;
}

inline FinetuneOptions finetune_from(const RunConfig& cfg, std::uint64_t seed) {
  FinetuneOptions fo;
  fo.opt = optimizer_from(cfg, fo.opt);
  fo.iterations = static_cast<int>(cfg.integer("iterations", fo.iterations));
  if (fo.iterations < 0)
    throw std::invalid_argument("iterations must be >= 0");
  fo.seed = seed;
  fo.loss = loss_kind_from_string(cfg.str("loss", "l1"));
  return fo;
}

inline Sequence find_sequence(const std::string& data_root,
                              const std::string& name) {
  for (auto& seq : scan_dataset(data_root))
    if (seq.name == name) return seq;
  throw std::runtime_error("sequence '" + name + "' not found under " + data_root);
}

/// Builds a Sequence from a bare frame directory (sorted jpg/jpeg/png files,
/// no annotations).
inline Sequence sequence_from_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  Sequence seq;
  seq.name = fs::path(dir).filename().string();
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".png")
      seq.frames.push_back(e.path().string());
  }
  std::sort(seq.frames.begin(), seq.frames.end());
  if (seq.frames.empty())
    throw std::runtime_error("no frames found in " + dir);
  seq.annotations.assign(seq.frames.size(), "");
  return seq;
}

/// Guesses the first-frame annotation for a bare frame directory by swapping
/// a "JPEGImages" path component for "Annotations" and the frame extension
/// for .png.
inline std::string derive_first_mask(const std::string& frames_dir,
                                     const std::string& first_frame) {
  namespace fs = std::filesystem;
  fs::path p(frames_dir);
  std::vector<fs::path> parts(p.begin(), p.end());
  for (auto& part : parts)
    if (part == "JPEGImages") {
      fs::path candidate;
      for (auto& q : p) candidate /= (q == "JPEGImages" ? fs::path("Annotations") : q);
      candidate /= fs::path(first_frame).stem().string() + ".png";
      if (fs::exists(candidate)) return candidate.string();
    }
  return "";
}

struct SegmentSetup {
  Sequence seq;
  PropagationRunConfig run;
  bool update_enabled = false;
};

/// Shared by segment and ablate: resolve the sequence + propagation config.
inline SegmentSetup segment_setup(const RunConfig& cfg,
                                  const std::string& sequence_arg,
                                  const std::string& mask_arg,
                                  std::uint64_t seed) {
  SegmentSetup s;
  if (std::filesystem::is_directory(sequence_arg)) {
    s.seq = sequence_from_dir(sequence_arg);
    std::string mask = mask_arg;
    if (mask.empty()) mask = derive_first_mask(sequence_arg, s.seq.frames[0]);
    if (mask.empty())
      throw std::runtime_error(
          "cannot locate the first-frame annotation for " + sequence_arg +
          ": pass --mask");
    s.seq.annotations[0] = mask;
  } else {
    s.seq = find_sequence(resolve_data_root(cfg), sequence_arg);
    if (!mask_arg.empty()) s.seq.annotations.assign(s.seq.frames.size(), "");
    if (!mask_arg.empty()) s.seq.annotations[0] = mask_arg;
    if (!s.seq.has_annotation(0))
      throw std::runtime_error("sequence " + s.seq.name +
                               " has no first-frame annotation");
  }

  s.run.prop.threshold = cfg.num("threshold", 0.5);
  std::string pp = cfg.str("postprocess", "off");
  if (pp == "wm")
    s.run.prop.postprocess = PostprocessMode::weighted_median;
  else if (pp != "off")
    throw std::invalid_argument("unknown postprocess mode: " + pp);

  s.update_enabled = cfg.is_set("update.every") || cfg.is_set("update.iterations");
  s.run.prop.update_every =
      static_cast<int>(cfg.integer("update.every", s.run.prop.update_every));
  s.run.prop.update_iterations = static_cast<int>(
      cfg.integer("update.iterations", s.run.prop.update_iterations));
  if (s.update_enabled) s.run.prop.update_mode = UpdateMode::every_k_frames;

  s.run.finetune_opts = finetune_from(cfg, seed);
  s.run.finetune_pair_count =
      static_cast<int>(cfg.integer("finetune_pairs", s.run.finetune_pair_count));
  s.run.seed = seed;
  s.run.prop.validate();
  return s;
}

inline nlohmann::json update_record(const SegmentSetup& s) {
  if (!s.update_enabled) return {{"mode", "none"}};
  return {{"mode", "every_k_frames"},
          {"every", s.run.prop.update_every},
          {"iterations", s.run.prop.update_iterations}};
}

}  // namespace detail

struct CliContext {
  RunConfig cfg;
  bool verbose = false;
  std::ostream* out = &std::cout;
};

inline int cmd_pretrain(CliContext& ctx) {
  RunConfig& cfg = ctx.cfg;
  std::string data_root = detail::resolve_data_root(cfg);
  std::string out_dir = detail::make_out_dir(cfg, "pretrain");
  std::uint64_t seed = cfg.u64("seed", 0);
  ArchitectureConfig arch =
      ArchitectureConfig::profile(cfg.str("arch.profile", "plm"));

  PairGenConfig pg;
  pg.refs_per_seq = static_cast<int>(cfg.integer("refs_per_seq", pg.refs_per_seq));
  pg.targets_per_ref =
      static_cast<int>(cfg.integer("targets_per_ref", pg.targets_per_ref));
  pg.augment.crops_per_combo = static_cast<int>(
      cfg.integer("crops_per_combo", pg.augment.crops_per_combo));
  pg.min_frame_gap =
      static_cast<int>(cfg.integer("min_frame_gap", pg.min_frame_gap));
  pg.seed = substream_seed(seed, "dataset");
  std::vector<Sequence> seqs = scan_dataset(data_root);
  std::array<double, 3> means = compute_channel_means(seqs);
  auto gen = std::make_shared<PairGenerator>(std::move(seqs), pg);

  PretrainOptions po;
  po.opt = detail::optimizer_from(cfg, po.opt);
  po.epochs = static_cast<int>(cfg.integer("epochs", 1));
  if (po.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  po.seed = seed;
  po.loss = loss_kind_from_string(cfg.str("loss", "l1"));
  po.out_dir = out_dir;
  if (ctx.verbose)
    po.log = [&ctx](const std::string& m) { *ctx.out << m << "\n"; };

  NetworkState<float> st = init_network<float>(arch, seed);
  st.channel_means = means;  // subtracted from every patch the network sees
  PairSource src{gen->size(),
                 [gen](std::uint64_t i) { return gen->get(i); }};
  TrainReport rep = pretrain(st, src, po);

  std::string final_path = out_dir + "/checkpoint_final.plmc";
  save_checkpoint(final_path, st);
  detail::write_run_record(out_dir, "pretrain", cfg,
                           {{"pairs", gen->size()},
                            {"iterations", rep.iterations},
                            {"epochs_completed", rep.epochs_completed},
                            {"final_checkpoint", final_path}});
  *ctx.out << "pretrain: " << gen->size() << " pairs, " << rep.iterations
           << " iterations over " << rep.epochs_completed
           << " epochs in " << rep.wall_seconds << "s -> " << final_path
           << "\n";
  return 0;
}

inline int cmd_finetune(CliContext& ctx, const std::string& checkpoint,
                        const std::string& sequence) {
  RunConfig& cfg = ctx.cfg;
  std::string out_dir = detail::make_out_dir(cfg, "finetune");
  std::uint64_t seed = cfg.u64("seed", 0);

  NetworkState<float> st = load_checkpoint<float>(checkpoint).state;
  Sequence seq = detail::find_sequence(detail::resolve_data_root(cfg), sequence);
  if (!seq.has_annotation(0))
    throw std::runtime_error("sequence " + seq.name +
                             " has no first-frame annotation");
  Image frame0 = load_image(seq.frames[0]);
  Mask mask0 = load_mask(seq.annotations[0]);

  FinetuneOptions fo = detail::finetune_from(cfg, seed);
  if (ctx.verbose)
    fo.log = [&ctx](const std::string& m) { *ctx.out << m << "\n"; };
  int pair_count = static_cast<int>(cfg.integer("finetune_pairs", 150));
  std::vector<PatchPair> pairs = generate_finetune_pairs(
      frame0, mask0, {10.0, 30.0, 50.0}, pair_count,
      substream_seed(seed, "finetune_pairs"));
  TrainReport rep = finetune(st, pairs, fo);

  std::string out_path = out_dir + "/finetuned.plmc";
  save_checkpoint(out_path, st);
  detail::write_run_record(out_dir, "finetune", cfg,
                           {{"sequence", seq.name},
                            {"pairs", pairs.size()},
                            {"iterations", rep.iterations},
                            {"checkpoint", out_path}});
  *ctx.out << "finetune: " << seq.name << ", " << rep.iterations
           << " iterations over " << pairs.size() << " pairs in "
           << rep.wall_seconds << "s -> " << out_path << "\n";
  return 0;
}

inline int cmd_segment(CliContext& ctx, const std::string& checkpoint,
                       const std::string& sequence, const std::string& mask) {
  RunConfig& cfg = ctx.cfg;
  std::string out_dir = detail::make_out_dir(cfg, "segment");
  std::uint64_t seed = cfg.u64("seed", 0);

  NetworkState<float> st = load_checkpoint<float>(checkpoint).state;
  detail::SegmentSetup s = detail::segment_setup(cfg, sequence, mask, seed);

  SequenceResult res = propagate_sequence(s.seq, st, s.run);

  std::string mask_dir = out_dir + "/" + s.seq.name;
  std::filesystem::create_directories(mask_dir);
  std::vector<std::string> written;
  for (std::size_t t = 0; t < res.frames.size(); ++t) {
    std::string path = mask_dir + "/" + detail::frame_name(static_cast<int>(t));
    save_mask(path, res.frames[t].mask);
    written.push_back(path);
  }

  double total = 0;
  for (double v : res.frame_seconds) total += v;
  detail::write_run_record(out_dir, "segment", cfg,
                           {{"sequence", s.seq.name},
                            {"frames", written.size()},
                            {"mask_dir", mask_dir},
                            {"update", detail::update_record(s)}});
  *ctx.out << "segment: " << s.seq.name << ", " << written.size()
           << " masks in " << total << "s -> " << mask_dir << "\n";
  return 0;
}

inline int cmd_evaluate(CliContext& ctx, const std::string& pred,
                        const std::string& gt) {
  RunConfig& cfg = ctx.cfg;
  std::string out_dir = detail::make_out_dir(cfg, "evaluate");

  EvalConfig ec;
  ec.protocol = protocol_from_string(cfg.str("protocol", "davis"));
  ec.jumpcut_distance =
      static_cast<int>(cfg.integer("jumpcut.distance", ec.jumpcut_distance));
  ec.jumpcut_last_key =
      static_cast<int>(cfg.integer("jumpcut.last_key", ec.jumpcut_last_key));
  ec.tolerance_px = static_cast<int>(cfg.integer("tolerance", ec.tolerance_px));

  RunReport rep = evaluate_run(pred, gt, ec);
  write_report(rep, out_dir);
  detail::write_run_record(out_dir, "evaluate", cfg,
                           {{"pred", pred},
                            {"gt", gt},
                            {"sequences", rep.sequences.size()},
                            {"unscored", rep.unscored}});

  bool clean = !rep.sequences.empty();
  for (const auto& s : rep.sequences) {
    for (const auto& note : s.notes) std::cerr << s.name << ": " << note << "\n";
    if (s.incomplete) clean = false;
  }
  for (const auto& name : rep.unscored) {
    std::cerr << name << ": no scorable frames\n";
    clean = false;
  }

  if (ec.protocol == Protocol::davis)
    *ctx.out << "AVERAGE mean_iou=" << rep.mean_iou
             << " mean_f=" << rep.mean_f
             << " std_iou=" << rep.mean_stability_iou
             << " std_f=" << rep.mean_stability_f << "\n";
  else
    *ctx.out << "AVERAGE err=" << rep.mean_err << "\n";
  return clean ? 0 : 1;
}

inline int cmd_gradcheck(CliContext& ctx) {
  RunConfig& cfg = ctx.cfg;
  std::string out_dir = detail::make_out_dir(cfg, "gradcheck");
  // Full-size probing is impractical; default to the small profile.
  ArchitectureConfig arch =
      ArchitectureConfig::profile(cfg.str("arch.profile", "tiny"));
  std::uint64_t seed = cfg.u64("seed", kDefaultGradcheckSeed);
  LossKind loss = loss_kind_from_string(cfg.str("loss", "l1"));
  int coords = static_cast<int>(cfg.integer("iterations", 200));

  GradientCheckReport rep = gradient_check(arch, seed, loss, coords);
  bool pass = rep.max_rel_error < 1e-4 && rep.mutation_error > 0.3;

  nlohmann::json groups;
  for (auto& [name, err] : rep.group_max) {
    groups[name] = err;
    *ctx.out << "  " << name << ": max rel error " << err << "\n";
  }
  *ctx.out << "gradcheck: max rel error " << rep.max_rel_error
           << ", mutation error " << rep.mutation_error << " ("
           << rep.coords_checked << " coords, " << rep.coords_rejected
           << " redrawn at kinks): " << (pass ? "OK" : "FAILED") << "\n";
  detail::write_run_record(out_dir, "gradcheck", cfg,
                           {{"max_rel_error", rep.max_rel_error},
                            {"mutation_error", rep.mutation_error},
                            {"coords_checked", rep.coords_checked},
                            {"coords_rejected", rep.coords_rejected},
                            {"groups", groups},
                            {"pass", pass}});
  return pass ? 0 : 1;
}

namespace detail {

struct AblationRow {
  std::string label;
  ArchitectureConfig arch;
  bool update = false;
};

/// Scores one configuration over every sequence in the dataset: adapt to
/// frame 0, propagate, compare against the annotated frames 1..T-1.
inline SequenceScores run_ablation_row(const AblationRow& row,
                                       const std::vector<Sequence>& seqs,
                                       const RunConfig& cfg, std::uint64_t seed,
                                       int* frames_out) {
  std::vector<double> ious, fs;
  int frames = 0;
  for (const auto& seq : seqs) {
    SegmentSetup s = segment_setup(cfg, seq.name, "", seed);
    s.seq = seq;
    if (row.update) {
      s.run.prop.update_mode = UpdateMode::every_k_frames;
      s.update_enabled = true;
    } else {
      s.run.prop.update_mode = UpdateMode::none;
    }
    NetworkState<float> st = init_network<float>(row.arch, seed);
    SequenceResult res = propagate_sequence(s.seq, st, s.run);
    for (std::size_t t = 1; t < res.frames.size(); ++t) {
      if (!seq.has_annotation(t)) continue;
      Mask gt = load_mask(seq.annotations[t]);
      ious.push_back(iou(res.frames[t].mask, gt));
      fs.push_back(contour_f(res.frames[t].mask, gt));
      ++frames;
    }
  }
  if (ious.empty())
    throw std::runtime_error("ablation: no annotated frames to score");
  SequenceScores sc;
  sc.iou_series = ious;
  sc.f_series = fs;
  sc.mean_iou = detail::mean_of(ious);
  sc.mean_f = detail::mean_of(fs);
  sc.stability_iou = detail::population_std(ious);
  sc.stability_f = detail::population_std(fs);
  *frames_out = frames;
  return sc;
}

inline std::vector<int> parse_int_values(const std::string& values) {
  std::vector<int> out;
  std::stringstream ss(values);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != tok.size())
      throw CLI::ValidationError("--values", "not an integer: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace detail

inline int cmd_ablate(CliContext& ctx, const std::string& study,
                      const std::string& values) {
  RunConfig& cfg = ctx.cfg;
  std::string out_dir = detail::make_out_dir(cfg, "ablate");
  std::uint64_t seed = cfg.u64("seed", 0);
  ArchitectureConfig base =
      ArchitectureConfig::profile(cfg.str("arch.profile", "plm"));

  std::vector<detail::AblationRow> rows;
  if (study == "dc_depth") {
    std::vector<int> vals = detail::parse_int_values(values.empty() ? "1,3,9" : values);
    for (int v : vals) {
      if (v < 1) throw CLI::ValidationError("--values", "depth must be >= 1");
      detail::AblationRow row{"dc_depth=" + std::to_string(v), base, false};
      row.arch.decoder_depth = v;
      row.arch.validate();
      rows.push_back(std::move(row));
    }
  } else if (study == "compressor_ratio") {
    std::vector<int> vals = detail::parse_int_values(values.empty() ? "8,16,32" : values);
    for (int v : vals) {
      if (v < 1) throw CLI::ValidationError("--values", "ratio must be >= 1");
      detail::AblationRow row{"ratio=" + std::to_string(v), base, false};
      row.arch.compression_ratio = v;
      try {
        row.arch.validate();
      } catch (const std::invalid_argument& e) {
        throw CLI::ValidationError("--values", e.what());
      }
      rows.push_back(std::move(row));
    }
  } else if (study == "single_layer") {
    detail::AblationRow multi{"multi_layer", base, false};
    detail::AblationRow single{"single_layer", base, false};
    single.arch.single_layer_mode = true;
    single.arch.validate();
    rows.push_back(std::move(multi));
    rows.push_back(std::move(single));
  } else if (study == "update_mode") {
    rows.push_back({"update=none", base, false});
    rows.push_back({"update=periodic", base, true});
  } else {
    throw CLI::ValidationError("--study", "unknown study: " + study);
  }

  std::vector<Sequence> seqs = scan_dataset(detail::resolve_data_root(cfg));

  std::ostringstream csv;
  csv << "sequence,mean_iou,mean_f,std_iou,std_f,n_frames\n";
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& row : rows) {
    int frames = 0;
    SequenceScores sc = detail::run_ablation_row(row, seqs, cfg, seed, &frames);
    csv << row.label << ',' << detail::fmt(sc.mean_iou) << ','
        << detail::fmt(sc.mean_f) << ',' << detail::fmt(sc.stability_iou)
        << ',' << detail::fmt(sc.stability_f) << ',' << frames << "\n";
    jrows.push_back({{"label", row.label},
                     {"mean_iou", sc.mean_iou},
                     {"mean_f", sc.mean_f},
                     {"n_frames", frames}});
    *ctx.out << row.label << ": mean_iou=" << sc.mean_iou
             << " mean_f=" << sc.mean_f << "\n";
  }

  std::ofstream f(out_dir + "/ablation.csv");
  if (!f) throw std::runtime_error("cannot write " + out_dir + "/ablation.csv");
  f << csv.str();
  detail::write_run_record(out_dir, "ablate", cfg,
                           {{"study", study}, {"rows", jrows}});
  return 0;
}

/// In-process entry point; `args` excludes the program name. Returns the
/// process exit status: 0 iff the command produced its full artifact set.
inline int run_cli(const std::vector<std::string>& args,
                   std::ostream& out = std::cout) {
  CLI::App app{"pixel-level matching for video object segmentation", "plm"};
  app.require_subcommand(1);

  std::string config_path, arch, out_dir, seed_str, loss;
  auto* opt_config = app.add_option("--config", config_path,
                                    "flat key=value configuration file");
  auto* opt_seed = app.add_option("--seed", seed_str, "root random seed");
  auto* opt_arch =
      app.add_option("--arch", arch, "architecture profile (plm, plm_s, tiny)");
  auto* opt_out = app.add_option("--out", out_dir, "output directory");
  auto* opt_loss = app.add_option("--loss", loss, "training loss (l1, l2sq)");
  bool verbose = false;
  app.add_flag("--verbose", verbose, "log per-step progress");

  // Subcommand options feed the flag layer of the merged config; only
  // options the user actually passed override the file and the defaults.
  std::vector<std::pair<CLI::Option*, std::pair<std::string, std::string*>>> bound;
  auto bind = [&bound](CLI::App* sub, const std::string& flag,
                       const std::string& key, std::string* slot,
                       const std::string& help) {
    bound.push_back({sub->add_option(flag, *slot, help), {key, slot}});
  };
  // Slots outlive parsing; one per bound option.
  auto slots = std::make_shared<std::vector<std::unique_ptr<std::string>>>();
  auto slot = [&slots]() {
    slots->push_back(std::make_unique<std::string>());
    return slots->back().get();
  };

  auto add_train_options = [&](CLI::App* sub) {
    bind(sub, "--lr", "lr", slot(), "learning rate");
    bind(sub, "--momentum", "momentum", slot(), "momentum coefficient");
    bind(sub, "--weight-decay", "weight_decay", slot(), "L2 weight decay");
    bind(sub, "--batch-size", "batch_size", slot(), "SGD batch size");
  };

  auto* pre = app.add_subcommand("pretrain", "train offline on annotated sequences");
  pre->fallthrough();
  bind(pre, "--data", "data_root", slot(), "dataset root");
  bind(pre, "--epochs", "epochs", slot(), "training epochs");
  add_train_options(pre);
  bind(pre, "--refs-per-seq", "refs_per_seq", slot(), "reference frames per sequence");
  bind(pre, "--targets-per-ref", "targets_per_ref", slot(), "target frames per reference");
  bind(pre, "--crops", "crops_per_combo", slot(), "jittered crops per combination");
  bind(pre, "--frame-gap", "min_frame_gap", slot(), "minimum reference/target separation");

  std::string ft_checkpoint, ft_sequence;
  auto* ft = app.add_subcommand("finetune", "adapt a checkpoint to one first frame");
  ft->fallthrough();
  ft->add_option("--checkpoint", ft_checkpoint, "input checkpoint")->required();
  ft->add_option("--sequence", ft_sequence, "sequence name under the dataset root")
      ->required();
  bind(ft, "--data", "data_root", slot(), "dataset root");
  bind(ft, "--iterations", "iterations", slot(), "adaptation iterations");
  bind(ft, "--pairs", "finetune_pairs", slot(), "adaptation pair count");
  add_train_options(ft);

  std::string sg_checkpoint, sg_sequence, sg_mask, sg_update;
  auto* sg = app.add_subcommand("segment", "propagate a first-frame mask through a video");
  sg->fallthrough();
  sg->add_option("--checkpoint", sg_checkpoint, "pretrained checkpoint")->required();
  sg->add_option("--sequence", sg_sequence,
                 "frame directory, or sequence name under the dataset root")
      ->required();
  sg->add_option("--mask", sg_mask, "first-frame annotation (default: from the dataset)");
  auto* opt_update = sg->add_option(
      "--update", sg_update, "periodic re-adaptation as k[,iterations]");
  bind(sg, "--data", "data_root", slot(), "dataset root");
  bind(sg, "--threshold", "threshold", slot(), "foreground decision threshold");
  bind(sg, "--postprocess", "postprocess", slot(), "off | wm (weighted median)");
  bind(sg, "--iterations", "iterations", slot(), "adaptation iterations");
  bind(sg, "--pairs", "finetune_pairs", slot(), "adaptation pair count");
  add_train_options(sg);

  std::string ev_pred, ev_gt;
  auto* ev = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  ev->fallthrough();
  ev->add_option("--pred", ev_pred, "predicted mask root")->required();
  ev->add_option("--gt", ev_gt, "ground-truth mask root")->required();
  bind(ev, "--protocol", "protocol", slot(), "davis | jumpcut | errorrate");
  bind(ev, "--distance", "jumpcut.distance", slot(), "key-frame stride");
  bind(ev, "--last-key", "jumpcut.last_key", slot(), "final key-frame index");
  bind(ev, "--tolerance", "tolerance", slot(), "contour tolerance in pixels");

  std::string ab_study, ab_values;
  auto* ab = app.add_subcommand("ablate", "compare architecture or runtime variants");
  ab->fallthrough();
  ab->add_option("--study", ab_study,
                 "dc_depth | single_layer | update_mode | compressor_ratio")
      ->required();
  ab->add_option("--values", ab_values, "comma-separated sweep values");
  bind(ab, "--data", "data_root", slot(), "dataset root");
  bind(ab, "--iterations", "iterations", slot(), "adaptation iterations");
  bind(ab, "--pairs", "finetune_pairs", slot(), "adaptation pair count");
  bind(ab, "--threshold", "threshold", slot(), "foreground decision threshold");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->fallthrough();
  bind(gc, "--coords", "iterations", slot(), "coordinates probed per parameter group");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, std::cerr);
  }

  try {
    CliContext ctx;
    ctx.verbose = verbose;
    ctx.out = &out;
    if (opt_config->count()) ctx.cfg.load_file(config_path);
    if (opt_seed->count()) ctx.cfg.set_flag("seed", seed_str);
    if (opt_arch->count()) ctx.cfg.set_flag("arch.profile", arch);
    if (opt_out->count()) ctx.cfg.set_flag("out_dir", out_dir);
    if (opt_loss->count()) ctx.cfg.set_flag("loss", loss);
    for (auto& [option, kv] : bound)
      if (option->count()) ctx.cfg.set_flag(kv.first, *kv.second);
    if (opt_update->count()) {
      auto comma = sg_update.find(',');
      ctx.cfg.set_flag("update.every", sg_update.substr(0, comma));
      if (comma != std::string::npos)
        ctx.cfg.set_flag("update.iterations", sg_update.substr(comma + 1));
    }

    if (app.got_subcommand(pre)) return cmd_pretrain(ctx);
    if (app.got_subcommand(ft)) return cmd_finetune(ctx, ft_checkpoint, ft_sequence);
    if (app.got_subcommand(sg)) return cmd_segment(ctx, sg_checkpoint, sg_sequence, sg_mask);
    if (app.got_subcommand(ev)) return cmd_evaluate(ctx, ev_pred, ev_gt);
    if (app.got_subcommand(ab)) return cmd_ablate(ctx, ab_study, ab_values);
    if (app.got_subcommand(gc)) return cmd_gradcheck(ctx);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace plm
