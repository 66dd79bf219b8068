#pragma once

// The pixel-level matching network: Siamese multi-depth feature extraction
// with per-stage compressors, an FC similarity encoder producing a 50x50
// matching table, and an hourglass-shaped objectness decoder. Scalar type is
// templated: float for production, double for finite-difference checks.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "plm/image.hpp"
#include "plm/layers.hpp"
#include "plm/rng.hpp"
#include "plm/tensor.hpp"

namespace plm {

enum class LossKind { l1, l2sq };

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2sq") return LossKind::l2sq;
  throw std::invalid_argument("unknown loss kind: " + s);
}

inline std::string to_string(LossKind k) { return k == LossKind::l1 ? "l1" : "l2sq"; }

struct ArchitectureConfig {
  std::string name = "plm";
  std::vector<int> extractor_channels = {64, 128, 256};
  int compression_ratio = 16;
  std::vector<int> fc_sizes = {2048, 2048, 2048, 2500};
  int decoder_depth = 9;
  LrnConfig lrn;
  bool single_layer_mode = false;  // last extractor stage only, uncompressed

  void validate() const {
    if (extractor_channels.empty())
      throw std::invalid_argument("config: extractor needs at least one stage");
    for (int c : extractor_channels) {
      if (c <= 0) throw std::invalid_argument("config: stage channels must be positive");
      if (!single_layer_mode && compression_ratio > 0 && c % compression_ratio != 0)
        throw std::invalid_argument(
            "config: stage channels " + std::to_string(c) +
            " not divisible by compression ratio " + std::to_string(compression_ratio));
    }
    if (compression_ratio <= 0)
      throw std::invalid_argument("config: compression ratio must be positive");
    if (fc_sizes.size() != 4)
      throw std::invalid_argument("config: expected 4 FC layer sizes");
    for (int s : fc_sizes)
      if (s <= 0) throw std::invalid_argument("config: FC sizes must be positive");
    if (fc_sizes.back() != kScoreSize * kScoreSize)
      throw std::invalid_argument("config: final FC size must be 2500 (50x50)");
    if (decoder_depth < 1)
      throw std::invalid_argument("config: decoder depth must be >= 1");
    if (lrn.local_size < 1)
      throw std::invalid_argument("config: LRN local size must be >= 1");
  }

  /// Spatial side length after each extractor stage (conv preserves size,
  /// 2x2/stride-2 ceil-mode pooling halves it, rounding up).
  std::vector<int> stage_spatial() const {
    std::vector<int> out;
    int s = kPatchSize;
    for (std::size_t i = 0; i < extractor_channels.size(); ++i) {
      s = pooled_size(s);
      out.push_back(s);
    }
    return out;
  }

  /// Length of the concatenated query+search feature vector fed to the FC
  /// encoder.
  int concat_length() const {
    auto sp = stage_spatial();
    if (single_layer_mode)
      return 2 * sp.back() * sp.back() * extractor_channels.back();
    int total = 0;
    for (std::size_t i = 0; i < extractor_channels.size(); ++i)
      total += sp[i] * sp[i] * (extractor_channels[i] / compression_ratio);
    return 2 * total;
  }

  /// Decoder channel schedule [1, 2^(depth-1), 2^(depth-2), ..., 1]:
  /// depth conv layers, expanding then halving back down to one channel.
  static std::vector<int> decoder_channels(int depth) {
    if (depth < 1) throw std::invalid_argument("decoder depth must be >= 1");
    std::vector<int> chans{1};
    for (int j = 0; j < depth; ++j) chans.push_back(1 << (depth - 1 - j));
    return chans;
  }

  static ArchitectureConfig profile(const std::string& profile_name) {
    ArchitectureConfig cfg;
    if (profile_name == "plm") {
      cfg.name = "plm";
    } else if (profile_name == "plm_s") {
      cfg.name = "plm_s";
      cfg.single_layer_mode = true;
    } else if (profile_name == "tiny") {
      cfg.name = "tiny";
      cfg.extractor_channels = {8, 16};
      cfg.compression_ratio = 4;
      cfg.fc_sizes = {64, 64, 64, kScoreSize * kScoreSize};
      cfg.decoder_depth = 3;
    } else {
      throw std::invalid_argument("unknown architecture profile: " + profile_name);
    }
    cfg.validate();
    return cfg;
  }
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily by zero_grads()

  std::size_t numel() const { return value.size(); }
};

template <typename T>
struct ParamGroup {
  std::string name;
  bool trainable = true;
  std::vector<ParamTensor<T>> tensors;

  ParamTensor<T>& find(const std::string& tname) {
    for (auto& t : tensors)
      if (t.name == tname) return t;
    throw std::out_of_range("no tensor " + tname + " in group " + name);
  }
  const ParamTensor<T>& find(const std::string& tname) const {
    return const_cast<ParamGroup*>(this)->find(tname);
  }
};

template <typename T>
struct NetworkState {
  ArchitectureConfig arch;
  std::uint64_t init_seed = 0;
  std::array<double, 3> channel_means{0.0, 0.0, 0.0};
  ParamGroup<T> extractor{"extractor"};
  ParamGroup<T> compressors{"compressors"};
  ParamGroup<T> similarity_fc{"similarity_fc"};
  ParamGroup<T> decoder{"decoder"};

  std::array<ParamGroup<T>*, 4> groups() {
    return {&extractor, &compressors, &similarity_fc, &decoder};
  }
  std::array<const ParamGroup<T>*, 4> groups() const {
    return {&extractor, &compressors, &similarity_fc, &decoder};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* g : groups())
      for (auto& t : g->tensors) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto* g : groups())
      for (auto& t : g->tensors) t.grad.assign(t.value.size(), T(0));
  }
};

namespace detail {

template <typename T>
void init_tensor(ParamTensor<T>& t, const std::string& group_name,
                 std::uint64_t seed, int fan_in, bool is_weight) {
  if (!is_weight) {
    std::fill(t.value.begin(), t.value.end(), T(0));
    return;
  }
  Rng rng = substream(seed, "init/" + group_name + "/" + t.name);
  // Zero-mean uniform with standard deviation sqrt(2/fan_in), i.e. bounds
  // +-sqrt(6/fan_in): keeps ReLU activation energy constant across layers.
  double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : t.value) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
ParamTensor<T> make_param(const std::string& name, std::vector<int> dims) {
  ParamTensor<T> t;
  t.name = name;
  t.dims = std::move(dims);
  t.value.assign(Tensor<T>::numel_of(t.dims), T(0));
  return t;
}

}  // namespace detail

template <typename T>
NetworkState<T> init_network(const ArchitectureConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkState<T> st;
  st.arch = cfg;
  st.init_seed = seed;

  int c_in = 3;
  for (std::size_t i = 0; i < cfg.extractor_channels.size(); ++i) {
    int c_out = cfg.extractor_channels[i];
    std::string base = "stage" + std::to_string(i);
    st.extractor.tensors.push_back(detail::make_param<T>(base + ".w", {c_out, c_in, 3, 3}));
    st.extractor.tensors.push_back(detail::make_param<T>(base + ".b", {c_out}));
    c_in = c_out;
  }
  if (!cfg.single_layer_mode) {
    for (std::size_t i = 0; i < cfg.extractor_channels.size(); ++i) {
      int c = cfg.extractor_channels[i];
      int c_out = c / cfg.compression_ratio;
      std::string base = "stage" + std::to_string(i);
      st.compressors.tensors.push_back(detail::make_param<T>(base + ".w", {c_out, c, 3, 3}));
      st.compressors.tensors.push_back(detail::make_param<T>(base + ".b", {c_out}));
    }
  }
  int n_in = cfg.concat_length();
  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    int n_out = cfg.fc_sizes[i];
    std::string base = "fc" + std::to_string(i);
    st.similarity_fc.tensors.push_back(detail::make_param<T>(base + ".w", {n_out, n_in}));
    st.similarity_fc.tensors.push_back(detail::make_param<T>(base + ".b", {n_out}));
    n_in = n_out;
  }
  auto chans = ArchitectureConfig::decoder_channels(cfg.decoder_depth);
  for (int i = 0; i < cfg.decoder_depth; ++i) {
    std::string base = "conv" + std::to_string(i);
    st.decoder.tensors.push_back(
        detail::make_param<T>(base + ".w", {chans[i + 1], chans[i], 3, 3}));
    st.decoder.tensors.push_back(detail::make_param<T>(base + ".b", {chans[i + 1]}));
  }

  for (auto* g : st.groups()) {
    for (auto& t : g->tensors) {
      bool is_weight = t.dims.size() > 1;
      int fan_in = 1;
      if (is_weight) {
        fan_in = t.dims[1];
        for (std::size_t d = 2; d < t.dims.size(); ++d) fan_in *= t.dims[d];
      }
      detail::init_tensor(t, g->name, seed, fan_in, is_weight);
    }
  }
  return st;
}

// --- Forward traces ---

template <typename T>
struct StageTrace {
  Tensor<T> pre;     // conv output before ReLU [C,H,W]
  Tensor<T> post;    // after ReLU
  Tensor<T> pooled;  // after 2x2/2 ceil-mode max pool
  std::vector<int> argmax;
};

template <typename T>
struct CompTrace {
  Tensor<T> pre;    // compressor conv output before ReLU
  Tensor<T> post;   // after ReLU (LRN input)
  Tensor<T> out;    // after LRN
  Tensor<T> denom;  // LRN denominators, for backward
};

template <typename T>
struct StreamTrace {
  Tensor<T> input;  // mean-subtracted 3x100x100 patch
  std::vector<StageTrace<T>> stages;
  std::vector<CompTrace<T>> comp;  // empty in single-layer mode
};

template <typename T>
struct FcTrace {
  std::vector<T> concat;
  std::vector<std::vector<T>> pre;  // per FC layer
  std::vector<std::vector<T>> act;  // post-ReLU for hidden; act.back() == pre.back()
};

template <typename T>
struct DecoderTrace {
  Tensor<T> input;  // 1x50x50 matching table
  std::vector<Tensor<T>> pre;
  std::vector<Tensor<T>> act;  // act.back() == pre.back() (no final ReLU)
};

template <typename T>
struct ForwardTrace {
  StreamTrace<T> query;
  StreamTrace<T> search;
  FcTrace<T> fc;
  DecoderTrace<T> dec;

  const Tensor<T>& output() const { return dec.act.back(); }
};

// --- Forward pieces ---

template <typename T>
Tensor<T> make_network_input(const NetworkState<T>& st, const Patch& patch) {
  const Image& p = patch.pixels;
  if (p.width != kPatchSize || p.height != kPatchSize || p.channels != 3)
    throw std::invalid_argument("network input must be a 100x100x3 patch");
  Tensor<T> t({3, kPatchSize, kPatchSize});
  for (int c = 0; c < 3; ++c) {
    T mean = static_cast<T>(st.channel_means[c]);
    const float* src = p.data.data() + static_cast<std::size_t>(c) * kPatchSize * kPatchSize;
    T* dst = t.ptr() + static_cast<std::size_t>(c) * kPatchSize * kPatchSize;
    for (int i = 0; i < kPatchSize * kPatchSize; ++i)
      dst[i] = static_cast<T>(src[i]) - mean;
  }
  return t;
}

template <typename T>
StreamTrace<T> extract_features(const NetworkState<T>& st, const Patch& patch) {
  StreamTrace<T> tr;
  tr.input = make_network_input(st, patch);
  const Tensor<T>* cur = &tr.input;
  int side = kPatchSize;
  int c_in = 3;
  for (std::size_t i = 0; i < st.arch.extractor_channels.size(); ++i) {
    int c_out = st.arch.extractor_channels[i];
    const auto& w = st.extractor.tensors[2 * i];
    const auto& b = st.extractor.tensors[2 * i + 1];
    StageTrace<T> stg;
    stg.pre = Tensor<T>({c_out, side, side});
    conv3x3_forward(cur->ptr(), c_in, side, side, w.value.data(), b.value.data(),
                    c_out, stg.pre.ptr());
    stg.post = Tensor<T>(stg.pre.dims);
    relu_forward(stg.pre.ptr(), stg.pre.numel(), stg.post.ptr());
    int ps = pooled_size(side);
    stg.pooled = Tensor<T>({c_out, ps, ps});
    stg.argmax.resize(stg.pooled.numel());
    maxpool2_forward(stg.post.ptr(), c_out, side, side, stg.pooled.ptr(),
                     stg.argmax.data());
    tr.stages.push_back(std::move(stg));
    cur = &tr.stages.back().pooled;
    side = ps;
    c_in = c_out;
  }
  return tr;
}

template <typename T>
void compress(const NetworkState<T>& st, StreamTrace<T>& tr) {
  if (st.arch.single_layer_mode) return;
  auto sp = st.arch.stage_spatial();
  for (std::size_t i = 0; i < tr.stages.size(); ++i) {
    int c = st.arch.extractor_channels[i];
    int c_out = c / st.arch.compression_ratio;
    int side = sp[i];
    const auto& w = st.compressors.tensors[2 * i];
    const auto& b = st.compressors.tensors[2 * i + 1];
    CompTrace<T> ct;
    ct.pre = Tensor<T>({c_out, side, side});
    conv3x3_forward(tr.stages[i].pooled.ptr(), c, side, side, w.value.data(),
                    b.value.data(), c_out, ct.pre.ptr());
    ct.post = Tensor<T>(ct.pre.dims);
    relu_forward(ct.pre.ptr(), ct.pre.numel(), ct.post.ptr());
    ct.out = Tensor<T>(ct.pre.dims);
    ct.denom = Tensor<T>(ct.pre.dims);
    lrn_forward(ct.post.ptr(), c_out, side, side, st.arch.lrn, ct.out.ptr(),
                ct.denom.ptr());
    tr.comp.push_back(std::move(ct));
  }
}

/// The feature grids a stream contributes to the FC encoder, in stage order.
template <typename T>
std::vector<const Tensor<T>*> encoder_features(const NetworkState<T>& st,
                                               const StreamTrace<T>& tr) {
  std::vector<const Tensor<T>*> out;
  if (st.arch.single_layer_mode) {
    out.push_back(&tr.stages.back().pooled);
  } else {
    for (const auto& c : tr.comp) out.push_back(&c.out);
  }
  return out;
}

template <typename T>
FcTrace<T> encode_similarity(const NetworkState<T>& st, const StreamTrace<T>& q,
                             const StreamTrace<T>& s) {
  FcTrace<T> tr;
  tr.concat.reserve(st.arch.concat_length());
  for (const StreamTrace<T>* stream : {&q, &s}) {
    for (const Tensor<T>* f : encoder_features(st, *stream))
      tr.concat.insert(tr.concat.end(), f->data.begin(), f->data.end());
  }
  if (static_cast<int>(tr.concat.size()) != st.arch.concat_length())
    throw std::logic_error("encoder input length mismatch");

  const std::size_t n_layers = st.arch.fc_sizes.size();
  tr.pre.resize(n_layers);
  tr.act.resize(n_layers);
  const std::vector<T>* in = &tr.concat;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& w = st.similarity_fc.tensors[2 * i];
    const auto& b = st.similarity_fc.tensors[2 * i + 1];
    int n_out = st.arch.fc_sizes[i];
    tr.pre[i].resize(n_out);
    fc_forward(in->data(), static_cast<int>(in->size()), w.value.data(),
               b.value.data(), n_out, tr.pre[i].data());
    if (i + 1 < n_layers) {
      tr.act[i].resize(n_out);
      relu_forward(tr.pre[i].data(), tr.pre[i].size(), tr.act[i].data());
    } else {
      tr.act[i] = tr.pre[i];  // no ReLU after the last FC layer
    }
    in = &tr.act[i];
  }
  return tr;
}

template <typename T>
DecoderTrace<T> decode_objectness(const NetworkState<T>& st,
                                  const std::vector<T>& table) {
  if (table.size() != static_cast<std::size_t>(kScoreSize) * kScoreSize)
    throw std::invalid_argument("decoder input must be 50x50");
  DecoderTrace<T> tr;
  tr.input = Tensor<T>({1, kScoreSize, kScoreSize});
  std::copy(table.begin(), table.end(), tr.input.data.begin());
  auto chans = ArchitectureConfig::decoder_channels(st.arch.decoder_depth);
  const Tensor<T>* cur = &tr.input;
  for (int i = 0; i < st.arch.decoder_depth; ++i) {
    const auto& w = st.decoder.tensors[2 * i];
    const auto& b = st.decoder.tensors[2 * i + 1];
    Tensor<T> pre({chans[i + 1], kScoreSize, kScoreSize});
    conv3x3_forward(cur->ptr(), chans[i], kScoreSize, kScoreSize, w.value.data(),
                    b.value.data(), chans[i + 1], pre.ptr());
    tr.pre.push_back(std::move(pre));
    if (i + 1 < st.arch.decoder_depth) {
      Tensor<T> act(tr.pre.back().dims);
      relu_forward(tr.pre.back().ptr(), act.numel(), act.ptr());
      tr.act.push_back(std::move(act));
    } else {
      tr.act.push_back(tr.pre.back());  // no ReLU after the final layer
    }
    cur = &tr.act.back();
  }
  return tr;
}

template <typename T>
ForwardTrace<T> forward(const NetworkState<T>& st, const Patch& query,
                        const Patch& search) {
  ForwardTrace<T> tr;
  tr.query = extract_features(st, query);
  tr.search = extract_features(st, search);
  compress(st, tr.query);
  compress(st, tr.search);
  tr.fc = encode_similarity(st, tr.query, tr.search);
  tr.dec = decode_objectness(st, tr.fc.act.back());
  return tr;
}

// --- Loss (mean per-pixel distance between output and binary label) ---

template <typename T>
T loss_value(const T* out, const std::uint8_t* label, LossKind kind) {
  const int n = kScoreSize * kScoreSize;
  T acc = 0;
  for (int i = 0; i < n; ++i) {
    T d = out[i] - static_cast<T>(label[i]);
    acc += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  return acc / static_cast<T>(n);
}

template <typename T>
T loss_value(const ForwardTrace<T>& tr, const std::vector<std::uint8_t>& label,
             LossKind kind) {
  if (label.size() != static_cast<std::size_t>(kScoreSize) * kScoreSize)
    throw std::invalid_argument("label must be 50x50");
  return loss_value(tr.output().ptr(), label.data(), kind);
}

// d(loss)/d(out), times an external scale (1/batch for batch means).
// The absolute-value kink takes subgradient 0 at exact ties.
template <typename T>
void loss_grad(const T* out, const std::uint8_t* label, LossKind kind, T scale,
               T* g) {
  const int n = kScoreSize * kScoreSize;
  const T inv = scale / static_cast<T>(n);
  for (int i = 0; i < n; ++i) {
    T d = out[i] - static_cast<T>(label[i]);
    if (kind == LossKind::l1)
      g[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
    else
      g[i] = T(2) * d * inv;
  }
}

// --- Backward ---

namespace detail {

// Backprop through one stream: grads arriving at the encoder features flow
// back through compressors (unless single-layer mode) and, when the
// extractor group is trainable, through the extractor stages. Parameter
// gradients accumulate into the shared groups, so calling this for both
// streams realizes weight sharing.
template <typename T>
void stream_backward(NetworkState<T>& st, const StreamTrace<T>& tr,
                     const T* g_concat_half) {
  const auto& arch = st.arch;
  auto sp = arch.stage_spatial();
  const std::size_t n_stages = tr.stages.size();
  const bool train_ext = st.extractor.trainable;
  const bool train_comp = st.compressors.trainable && !arch.single_layer_mode;

  // Gradient buffers for each stage's pooled output.
  std::vector<Tensor<T>> g_pooled(n_stages);
  for (std::size_t i = 0; i < n_stages; ++i)
    g_pooled[i] = Tensor<T>(tr.stages[i].pooled.dims);

  // Route encoder-feature grads.
  std::size_t off = 0;
  if (arch.single_layer_mode) {
    auto& gp = g_pooled[n_stages - 1];
    std::copy(g_concat_half, g_concat_half + gp.numel(), gp.data.begin());
    off += gp.numel();
  } else {
    for (std::size_t i = 0; i < n_stages; ++i) {
      const CompTrace<T>& ct = tr.comp[i];
      int side = sp[i];
      int c_out = arch.extractor_channels[i] / arch.compression_ratio;
      Tensor<T> g_lrn_out(ct.out.dims);
      std::copy(g_concat_half + off, g_concat_half + off + g_lrn_out.numel(),
                g_lrn_out.data.begin());
      off += g_lrn_out.numel();

      Tensor<T> g_post(ct.post.dims);
      lrn_backward(ct.post.ptr(), ct.denom.ptr(), c_out, side, side, arch.lrn,
                   g_lrn_out.ptr(), g_post.ptr());
      relu_backward(ct.pre.ptr(), ct.pre.numel(), g_post.ptr(), g_post.ptr());

      auto& w = st.compressors.tensors[2 * i];
      auto& b = st.compressors.tensors[2 * i + 1];
      conv3x3_backward(tr.stages[i].pooled.ptr(), arch.extractor_channels[i],
                       side, side, w.value.data(), c_out, g_post.ptr(),
                       train_ext ? g_pooled[i].ptr() : nullptr,
                       train_comp ? w.grad.data() : nullptr,
                       train_comp ? b.grad.data() : nullptr);
    }
  }

  if (!train_ext) return;

  for (std::size_t ii = n_stages; ii-- > 0;) {
    const StageTrace<T>& stg = tr.stages[ii];
    int side = ii == 0 ? kPatchSize : sp[ii - 1];
    int c_in = ii == 0 ? 3 : arch.extractor_channels[ii - 1];
    int c_out = arch.extractor_channels[ii];

    Tensor<T> g_post(stg.post.dims);
    maxpool2_backward(stg.argmax.data(), stg.pooled.numel(), g_pooled[ii].ptr(),
                      g_post.ptr());
    relu_backward(stg.pre.ptr(), stg.pre.numel(), g_post.ptr(), g_post.ptr());

    auto& w = st.extractor.tensors[2 * ii];
    auto& b = st.extractor.tensors[2 * ii + 1];
    const T* in = ii == 0 ? tr.input.ptr() : tr.stages[ii - 1].pooled.ptr();
    T* gin = ii == 0 ? nullptr : g_pooled[ii - 1].ptr();
    conv3x3_backward(in, c_in, side, side, w.value.data(), c_out, g_post.ptr(),
                     gin, w.grad.data(), b.grad.data());
  }
}

}  // namespace detail

/// Accumulates parameter gradients for one (query, search, label) example.
/// `scale` multiplies the loss gradient (use 1/B for a batch mean). Callers
/// zero the gradients once per batch via state.zero_grads().
template <typename T>
void backward(NetworkState<T>& st, const ForwardTrace<T>& tr,
              const std::vector<std::uint8_t>& label, LossKind kind, T scale) {
  if (label.size() != static_cast<std::size_t>(kScoreSize) * kScoreSize)
    throw std::invalid_argument("label must be 50x50");
  const auto& arch = st.arch;

  // Loss -> decoder output (final decoder layer always has one channel).
  Tensor<T> g_cur({1, kScoreSize, kScoreSize});
  loss_grad(tr.output().ptr(), label.data(), kind, scale, g_cur.ptr());

  // Decoder stack.
  auto chans = ArchitectureConfig::decoder_channels(arch.decoder_depth);
  const bool train_dec = st.decoder.trainable;
  for (int i = arch.decoder_depth - 1; i >= 0; --i) {
    const Tensor<T>& in_act = i == 0 ? tr.dec.input : tr.dec.act[i - 1];
    Tensor<T> g_prev(in_act.dims);
    auto& w = st.decoder.tensors[2 * i];
    auto& b = st.decoder.tensors[2 * i + 1];
    conv3x3_backward(in_act.ptr(), chans[i], kScoreSize, kScoreSize,
                     w.value.data(), chans[i + 1], g_cur.ptr(), g_prev.ptr(),
                     train_dec ? w.grad.data() : nullptr,
                     train_dec ? b.grad.data() : nullptr);
    if (i > 0)
      relu_backward(tr.dec.pre[i - 1].ptr(), g_prev.numel(), g_prev.ptr(),
                    g_prev.ptr());
    g_cur = std::move(g_prev);
  }

  // FC stack (reshape 50x50 -> 2500 is a no-op on flat data).
  const bool train_fc = st.similarity_fc.trainable;
  std::vector<T> g_vec(g_cur.data.begin(), g_cur.data.end());
  for (int i = static_cast<int>(arch.fc_sizes.size()) - 1; i >= 0; --i) {
    const std::vector<T>& in = i == 0 ? tr.fc.concat : tr.fc.act[i - 1];
    std::vector<T> g_in(in.size(), T(0));
    auto& w = st.similarity_fc.tensors[2 * i];
    auto& b = st.similarity_fc.tensors[2 * i + 1];
    fc_backward(in.data(), static_cast<int>(in.size()), w.value.data(),
                arch.fc_sizes[i], g_vec.data(), g_in.data(),
                train_fc ? w.grad.data() : nullptr,
                train_fc ? b.grad.data() : nullptr);
    if (i > 0)
      relu_backward(tr.fc.pre[i - 1].data(), g_in.size(), g_in.data(),
                    g_in.data());
    g_vec = std::move(g_in);
  }

  // Split the concat gradient between the two streams.
  const std::size_t half = g_vec.size() / 2;
  detail::stream_backward(st, tr.query, g_vec.data());
  detail::stream_backward(st, tr.search, g_vec.data() + half);
}

}  // namespace plm
