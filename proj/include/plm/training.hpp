#pragma once

// Offline pretraining and first-frame fine-tuning: momentum SGD with an
// epoch-based learning-rate drop, per-epoch checkpoints with bit-exact
// resume, and the finite-difference gradient harness.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "plm/checkpoint.hpp"
#include "plm/dataset.hpp"
#include "plm/network.hpp"
#include "plm/rng.hpp"

namespace plm {

struct OptimizerConfig {
  double learning_rate = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int lr_drop_every = 10;      // epochs; 0 disables the drop
  double lr_drop_factor = 0.1;
  int batch_size = 32;

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("optimizer: learning_rate must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
    if (weight_decay < 0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
    if (lr_drop_every < 0) throw std::invalid_argument("optimizer: lr_drop_every must be >= 0");
  }
};

/// Stepped learning rate: the base rate multiplied by drop_factor once per
/// lr_drop_every completed epochs.
inline double scheduled_lr(const OptimizerConfig& opt, int epoch) {
  if (opt.lr_drop_every <= 0) return opt.learning_rate;
  return opt.learning_rate * std::pow(opt.lr_drop_factor, epoch / opt.lr_drop_every);
}

/// Classic momentum update over the trainable groups:
///   v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v.
/// Frozen groups are untouched (their velocity is not advanced either).
template <typename T>
void sgd_step(NetworkState<T>& st, TrainerState<T>& trainer, double lr,
              const OptimizerConfig& opt) {
  const T m = static_cast<T>(opt.momentum);
  const T wd = static_cast<T>(opt.weight_decay);
  const T rate = static_cast<T>(lr);
  std::size_t vi = 0;
  for (auto* g : st.groups()) {
    for (auto& t : g->tensors) {
      std::vector<T>& v = trainer.velocity.at(vi++);
      if (!g->trainable) continue;
      if (t.grad.size() != t.value.size())
        throw std::logic_error("sgd_step: gradients missing for " + g->name + "/" + t.name);
      for (std::size_t i = 0; i < t.value.size(); ++i) {
        v[i] = m * v[i] - rate * (t.grad[i] + wd * t.value[i]);
        t.value[i] += v[i];
      }
    }
  }
}

struct TrainReport {
  std::vector<double> losses;  // one entry per iteration
  int epochs_completed = 0;
  long long iterations = 0;
  std::string final_checkpoint;
  double wall_seconds = 0.0;
};

/// Deterministic random-access pair stream (generator- or vector-backed).
struct PairSource {
  std::uint64_t count = 0;
  std::function<PatchPair(std::uint64_t)> get;
};

inline PairSource make_pair_source(PairGenerator& gen) {
  return {gen.size(), [&gen](std::uint64_t i) { return gen.get(i); }};
}

inline PairSource make_pair_source(const std::vector<PatchPair>& pairs) {
  return {pairs.size(), [&pairs](std::uint64_t i) { return pairs.at(i); }};
}

namespace detail {

inline std::vector<std::uint64_t> shuffled_order(std::uint64_t n, std::uint64_t seed,
                                                 const std::string& name,
                                                 std::uint64_t index) {
  std::vector<std::uint64_t> order(n);
  for (std::uint64_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = substream(seed, name, index);
  for (std::uint64_t i = n; i > 1; --i) {
    std::uint64_t j = rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// One batch: accumulate gradients scaled by 1/batch, return the mean loss.
template <typename T>
double run_batch(NetworkState<T>& st, const PairSource& pairs,
                 const std::vector<std::uint64_t>& indices, LossKind kind) {
  st.zero_grads();
  const T scale = T(1) / static_cast<T>(indices.size());
  double total = 0.0;
  for (std::uint64_t idx : indices) {
    PatchPair pair = pairs.get(idx);
    ForwardTrace<T> tr = forward(st, pair.query, pair.search);
    total += static_cast<double>(loss_value(tr, pair.label, kind));
    backward(st, tr, pair.label, kind, scale);
  }
  return total / static_cast<double>(indices.size());
}

inline std::string epoch_checkpoint_path(const std::string& dir, int epoch) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.plmc", epoch);
  return (std::filesystem::path(dir) / name).string();
}

inline std::optional<std::string> latest_epoch_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<std::string> best;
  int best_epoch = -1;
  for (auto& e : fs::directory_iterator(dir)) {
    std::string n = e.path().filename().string();
    int epoch = 0;
    if (std::sscanf(n.c_str(), "checkpoint_epoch_%d.plmc", &epoch) == 1 &&
        epoch > best_epoch) {
      best_epoch = epoch;
      best = e.path().string();
    }
  }
  return best;
}

class TrainLog {
 public:
  TrainLog(const std::string& dir, bool append) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / "training_log.csv").string();
    bool write_header = !append || !std::filesystem::exists(path_);
    f_ = std::fopen(path_.c_str(), append ? "a" : "w");
    if (!f_) throw std::runtime_error("cannot open training log: " + path_);
    if (write_header) std::fprintf(f_, "iteration,epoch,loss,lr\n");
  }
  ~TrainLog() {
    if (f_) std::fclose(f_);
  }
  void row(long long iteration, int epoch, double loss, double lr) {
    if (!f_) return;
    std::fprintf(f_, "%lld,%d,%.10g,%.10g\n", iteration, epoch, loss, lr);
    std::fflush(f_);
  }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

}  // namespace detail

struct PretrainOptions {
  OptimizerConfig opt;  // defaults: lr 1e-5, momentum 0.9, decay 5e-4, batch 32
  int epochs = 0;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::l1;
  std::string out_dir;  // checkpoints + CSV log; empty = keep everything in memory
  bool resume = false;  // continue from the latest epoch checkpoint in out_dir
  std::function<void(const std::string&)> log;
};

/// Pretrains in place: all four groups trainable, pairs reshuffled per epoch
/// from the seed, checkpoint (with trainer state) written after every epoch.
/// Resuming from epoch k reproduces the uninterrupted run bit for bit.
template <typename T>
TrainReport pretrain(NetworkState<T>& st, const PairSource& pairs,
                     const PretrainOptions& po) {
  po.opt.validate();
  if (pairs.count == 0 && po.epochs > 0)
    throw std::invalid_argument("pretrain: empty pair stream");
  auto t0 = std::chrono::steady_clock::now();

  for (auto* g : st.groups()) g->trainable = true;

  TrainerState<T> trainer = TrainerState<T>::zeros_like(st);
  int start_epoch = 0;
  if (po.resume && !po.out_dir.empty()) {
    if (auto latest = detail::latest_epoch_checkpoint(po.out_dir)) {
      auto loaded = load_checkpoint<T>(*latest);
      if (!loaded.trainer)
        throw std::runtime_error("checkpoint lacks trainer state: " + *latest);
      st = std::move(loaded.state);
      trainer = std::move(*loaded.trainer);
      start_epoch = trainer.epochs_done;
      if (po.log) po.log("resuming from " + *latest);
    }
  }

  detail::TrainLog csv(po.out_dir, /*append=*/po.resume);
  TrainReport report;
  report.epochs_completed = start_epoch;

  for (int epoch = start_epoch; epoch < po.epochs; ++epoch) {
    auto order = detail::shuffled_order(pairs.count, po.seed, "epoch_order", epoch);
    double lr = scheduled_lr(po.opt, epoch);
    for (std::uint64_t begin = 0; begin < order.size();
         begin += po.opt.batch_size) {
      std::uint64_t end = std::min<std::uint64_t>(begin + po.opt.batch_size, order.size());
      std::vector<std::uint64_t> batch(order.begin() + begin, order.begin() + end);
      double loss = detail::run_batch(st, pairs, batch, po.loss);
      if (!std::isfinite(loss)) {
        throw std::runtime_error(
            "pretrain: non-finite loss at epoch " + std::to_string(epoch) +
            ", iteration " + std::to_string(trainer.iterations_done + 1) +
            " (batch starting at shuffled index " + std::to_string(begin) + ")");
      }
      sgd_step(st, trainer, lr, po.opt);
      ++trainer.iterations_done;
      report.losses.push_back(loss);
      csv.row(trainer.iterations_done, epoch, loss, lr);
    }
    trainer.epochs_done = epoch + 1;
    report.epochs_completed = epoch + 1;
    if (!po.out_dir.empty()) {
      std::string path = detail::epoch_checkpoint_path(po.out_dir, epoch + 1);
      save_checkpoint(path, st, &trainer);
      report.final_checkpoint = path;
      if (po.log)
        po.log("epoch " + std::to_string(epoch + 1) + " done, checkpoint " + path);
    }
  }
  report.iterations = trainer.iterations_done;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct FinetuneOptions {
  OptimizerConfig opt{2e-5, 0.9, 5e-4, 10, 0.1, 32};
  int iterations = 500;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::l1;
  std::function<void(const std::string&)> log;
};

/// First-frame adaptation in place: the extractor is frozen; compressors,
/// FC encoder and decoder train for a fixed iteration budget at a constant
/// rate (the epoch-based drop schedule doesn't apply to this short run).
/// Nothing is written to disk.
template <typename T>
TrainReport finetune(NetworkState<T>& st, const std::vector<PatchPair>& pairs,
                     const FinetuneOptions& fo) {
  fo.opt.validate();
  if (pairs.empty()) throw std::invalid_argument("finetune: empty pair list");
  auto t0 = std::chrono::steady_clock::now();

  st.extractor.trainable = false;
  st.compressors.trainable = true;
  st.similarity_fc.trainable = true;
  st.decoder.trainable = true;

  PairSource source = make_pair_source(pairs);
  TrainerState<T> trainer = TrainerState<T>::zeros_like(st);
  TrainReport report;

  std::vector<std::uint64_t> order;
  std::uint64_t cursor = 0, pass = 0;
  for (int it = 0; it < fo.iterations; ++it) {
    if (cursor >= order.size()) {
      order = detail::shuffled_order(source.count, fo.seed, "finetune_order", pass++);
      cursor = 0;
    }
    std::uint64_t end = std::min<std::uint64_t>(cursor + fo.opt.batch_size, order.size());
    std::vector<std::uint64_t> batch(order.begin() + cursor, order.begin() + end);
    cursor = end;
    double loss = detail::run_batch(st, source, batch, fo.loss);
    if (!std::isfinite(loss))
      throw std::runtime_error("finetune: non-finite loss at iteration " +
                               std::to_string(it + 1));
    sgd_step(st, trainer, fo.opt.learning_rate, fo.opt);
    ++trainer.iterations_done;
    report.losses.push_back(loss);
    if (fo.log && (it + 1) % 50 == 0)
      fo.log("finetune iteration " + std::to_string(it + 1) + " loss " +
             std::to_string(loss));
  }
  report.iterations = trainer.iterations_done;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// --- Finite-difference gradient verification (double precision) ---

namespace detail {

// Hash of every discrete routing decision a forward pass makes: ReLU branch
// per pre-activation, max-pool argmax per window, and (for the absolute-error
// loss) the per-cell sign of prediction minus label. Two parameter points in
// the same region of the piecewise-smooth loss share a signature; a finite
// difference whose endpoints disagree straddles a kink, where the difference
// quotient does not estimate the derivative.
template <typename T>
std::uint64_t trace_signature(const ForwardTrace<T>& tr,
                              const std::vector<std::uint8_t>& label,
                              LossKind kind) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](std::uint64_t v) {
    hash ^= v;
    hash *= 0x100000001b3ULL;
  };
  auto mix_branches = [&](const std::vector<T>& pre) {
    std::uint64_t word = 0;
    int bit = 0;
    for (const T& v : pre) {
      word = (word << 1) | (v > T(0) ? 1u : 0u);
      if (++bit == 64) {
        mix(word);
        word = 0;
        bit = 0;
      }
    }
    mix(word ^ static_cast<std::uint64_t>(bit));
  };
  for (const StreamTrace<T>* s : {&tr.query, &tr.search}) {
    for (const auto& st : s->stages) {
      mix_branches(st.pre.data);
      for (int a : st.argmax) mix(static_cast<std::uint64_t>(a) + 1);
    }
    for (const auto& c : s->comp) mix_branches(c.pre.data);
  }
  for (std::size_t i = 0; i + 1 < tr.fc.pre.size(); ++i)
    mix_branches(tr.fc.pre[i]);
  for (std::size_t i = 0; i + 1 < tr.dec.pre.size(); ++i)
    mix_branches(tr.dec.pre[i].data);
  if (kind == LossKind::l1) {
    const auto& out = tr.output().data;
    for (std::size_t i = 0; i < out.size(); ++i) {
      T d = out[i] - static_cast<T>(label[i]);
      mix(d > T(0) ? 1u : (d < T(0) ? 2u : 0u));
    }
  }
  return hash;
}

}  // namespace detail

struct GradientCheckReport {
  double max_rel_error = 0.0;
  double mutation_error = 0.0;  // decoder gradients doubled: must be detected
  int coords_checked = 0;
  int coords_rejected = 0;  // finite difference straddled a kink; redrawn
  std::vector<std::pair<std::string, double>> group_max;
};

inline constexpr std::uint64_t kDefaultGradcheckSeed = 5;

/// Compares analytic gradients against central finite differences
/// (step 1e-5) on one random pair, sampling >= 200 coordinates per trainable
/// group. Relative error uses |a - n| / max(|a|, |n|, 1e-5). Coordinates whose
/// +-h evaluations cross a ReLU boundary, change a pooling argmax, or flip an
/// absolute-error sign are redrawn: there the loss is not differentiable and
/// the difference quotient is meaningless (see trace_signature). The mutation
/// figure recomputes decoder errors with analytic values doubled: a broken
/// backward pass must push it past the detection threshold.
inline GradientCheckReport gradient_check_state(NetworkState<double>& st,
                                                std::uint64_t seed,
                                                LossKind kind = LossKind::l1,
                                                int coords_per_group = 200) {
  using T = double;
  Rng prng = substream(seed, "gradcheck_pair");
  Patch query, search;
  query.pixels = Image(kPatchSize, kPatchSize, 3);
  search.pixels = Image(kPatchSize, kPatchSize, 3);
  for (auto& v : query.pixels.data) v = static_cast<float>(prng.uniform());
  for (auto& v : search.pixels.data) v = static_cast<float>(prng.uniform());
  std::vector<std::uint8_t> label(static_cast<std::size_t>(kScoreSize) * kScoreSize);
  Rng lrng = substream(seed, "gradcheck_label");
  for (auto& v : label) v = lrng.coin() ? 1 : 0;

  ForwardTrace<T> tr = forward(st, query, search);
  st.zero_grads();
  backward(st, tr, label, kind, T(1));
  const std::uint64_t sig0 = detail::trace_signature(tr, label, kind);

  auto loss_and_sig = [&](std::uint64_t& sig) {
    ForwardTrace<T> t = forward(st, query, search);
    sig = detail::trace_signature(t, label, kind);
    return loss_value(t, label, kind);
  };
  const T h = 1e-5;
  auto rel_error = [](T a, T n) {
    T denom = std::max({std::abs(a), std::abs(n), T(1e-5)});
    return std::abs(a - n) / denom;
  };

  GradientCheckReport report;
  for (auto* g : st.groups()) {
    if (!g->trainable || g->tensors.empty()) continue;
    std::size_t total = 0;
    for (auto& t : g->tensors) total += t.numel();
    Rng crng = substream(seed, "gradcheck_coords/" + g->name);
    double gmax = 0.0;
    int accepted = 0;
    const int max_draws = 50 * coords_per_group;
    for (int draw = 0; accepted < coords_per_group && draw < max_draws; ++draw) {
      std::size_t flat = crng.uniform_index(total);
      ParamTensor<T>* pt = nullptr;
      for (auto& t : g->tensors) {
        if (flat < t.numel()) {
          pt = &t;
          break;
        }
        flat -= t.numel();
      }
      T saved = pt->value[flat];
      std::uint64_t sig_p = 0, sig_m = 0;
      pt->value[flat] = saved + h;
      T lp = loss_and_sig(sig_p);
      pt->value[flat] = saved - h;
      T lm = loss_and_sig(sig_m);
      pt->value[flat] = saved;
      if (sig_p != sig0 || sig_m != sig0) {
        ++report.coords_rejected;
        continue;
      }
      T numeric = (lp - lm) / (2 * h);
      T analytic = pt->grad[flat];
      gmax = std::max(gmax, static_cast<double>(rel_error(analytic, numeric)));
      if (g->name == "decoder")
        report.mutation_error = std::max(
            report.mutation_error,
            static_cast<double>(rel_error(2 * analytic, numeric)));
      ++report.coords_checked;
      ++accepted;
    }
    if (accepted < coords_per_group)
      throw std::runtime_error("gradient check: group " + g->name +
                               " has too few differentiable coordinates");
    report.group_max.emplace_back(g->name, gmax);
    report.max_rel_error = std::max(report.max_rel_error, gmax);
  }
  return report;
}

inline GradientCheckReport gradient_check(const ArchitectureConfig& cfg,
                                          std::uint64_t seed,
                                          LossKind kind = LossKind::l1,
                                          int coords_per_group = 200) {
  NetworkState<double> st = init_network<double>(cfg, seed);
  return gradient_check_state(st, seed, kind, coords_per_group);
}

}  // namespace plm
