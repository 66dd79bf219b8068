#pragma once

// Self-describing network checkpoints: a small magic/version prefix, a JSON
// header (architecture, tensor catalog, channel means, init seed, optional
// trainer state), then raw little-endian tensor bytes in catalog order.
// Writing is fully deterministic so equal states produce equal files.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plm/network.hpp"
#include "plm/rng.hpp"

namespace plm {

inline constexpr char kCheckpointMagic[4] = {'P', 'L', 'M', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Momentum buffers and progress counters carried across pretraining resumes.
template <typename T>
struct TrainerState {
  std::vector<std::vector<T>> velocity;  // one buffer per tensor, group order
  int epochs_done = 0;
  long long iterations_done = 0;

  template <typename S>
  static TrainerState zeros_like(const NetworkState<S>& st) {
    TrainerState ts;
    for (auto* g : st.groups())
      for (auto& t : g->tensors)
        ts.velocity.emplace_back(t.value.size(), T(0));
    return ts;
  }
};

namespace detail {

inline nlohmann::json lrn_to_json(const LrnConfig& l) {
  return {{"local_size", l.local_size}, {"alpha", l.alpha}, {"beta", l.beta}, {"k", l.k}};
}

inline LrnConfig lrn_from_json(const nlohmann::json& j) {
  LrnConfig l;
  l.local_size = j.at("local_size").get<int>();
  l.alpha = j.at("alpha").get<double>();
  l.beta = j.at("beta").get<double>();
  l.k = j.at("k").get<double>();
  return l;
}

inline nlohmann::json arch_to_json(const ArchitectureConfig& a) {
  return {{"name", a.name},
          {"extractor_channels", a.extractor_channels},
          {"compression_ratio", a.compression_ratio},
          {"fc_sizes", a.fc_sizes},
          {"decoder_depth", a.decoder_depth},
          {"lrn", lrn_to_json(a.lrn)},
          {"single_layer_mode", a.single_layer_mode}};
}

inline ArchitectureConfig arch_from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  a.name = j.at("name").get<std::string>();
  a.extractor_channels = j.at("extractor_channels").get<std::vector<int>>();
  a.compression_ratio = j.at("compression_ratio").get<int>();
  a.fc_sizes = j.at("fc_sizes").get<std::vector<int>>();
  a.decoder_depth = j.at("decoder_depth").get<int>();
  a.lrn = lrn_from_json(j.at("lrn"));
  a.single_layer_mode = j.at("single_layer_mode").get<bool>();
  return a;
}

template <typename T>
const char* dtype_name() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const NetworkState<T>& st,
                     const TrainerState<T>* trainer = nullptr) {
  nlohmann::json groups = nlohmann::json::array();
  for (auto* g : st.groups()) {
    nlohmann::json tensors = nlohmann::json::array();
    for (auto& t : g->tensors)
      tensors.push_back({{"name", t.name}, {"dims", t.dims}});
    groups.push_back({{"name", g->name}, {"trainable", g->trainable}, {"tensors", tensors}});
  }
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"dtype", detail::dtype_name<T>()},
      {"arch", detail::arch_to_json(st.arch)},
      {"init_seed", std::to_string(st.init_seed)},
      {"channel_means", st.channel_means},
      {"groups", groups},
  };
  if (trainer) {
    header["trainer"] = {{"epochs_done", trainer->epochs_done},
                         {"iterations_done", trainer->iterations_done},
                         {"velocity", true}};
  }
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 4);
  std::uint32_t ver = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto* g : st.groups())
    for (auto& t : g->tensors)
      f.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(T)));
  if (trainer) {
    for (auto& v : trainer->velocity)
      f.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(T)));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint: " + path);
}

template <typename T>
struct LoadedCheckpoint {
  NetworkState<T> state;
  std::optional<TrainerState<T>> trainer;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof ver);
  if (ver != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(ver));
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != detail::dtype_name<T>())
    throw std::runtime_error("checkpoint dtype " + dtype + " does not match requested " +
                             detail::dtype_name<T>());

  LoadedCheckpoint<T> out;
  out.state.arch = detail::arch_from_json(header.at("arch"));
  out.state.arch.validate();
  out.state.init_seed = std::stoull(header.at("init_seed").get<std::string>());
  auto means = header.at("channel_means").get<std::vector<double>>();
  if (means.size() != 3) throw std::runtime_error("checkpoint: expected 3 channel means");
  std::copy(means.begin(), means.end(), out.state.channel_means.begin());

  auto groups_json = header.at("groups");
  auto groups = out.state.groups();
  if (groups_json.size() != groups.size())
    throw std::runtime_error("checkpoint: unexpected group count");
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& gj = groups_json[gi];
    if (gj.at("name").get<std::string>() != groups[gi]->name)
      throw std::runtime_error("checkpoint: group order mismatch");
    groups[gi]->trainable = gj.at("trainable").get<bool>();
    for (const auto& tj : gj.at("tensors")) {
      ParamTensor<T> t;
      t.name = tj.at("name").get<std::string>();
      t.dims = tj.at("dims").get<std::vector<int>>();
      t.value.assign(Tensor<T>::numel_of(t.dims), T(0));
      groups[gi]->tensors.push_back(std::move(t));
    }
  }
  for (auto* g : groups)
    for (auto& t : g->tensors) {
      f.read(reinterpret_cast<char*>(t.value.data()),
             static_cast<std::streamsize>(t.value.size() * sizeof(T)));
      if (!f) throw std::runtime_error("truncated checkpoint tensors: " + path);
    }

  if (header.contains("trainer")) {
    TrainerState<T> ts;
    ts.epochs_done = header["trainer"].at("epochs_done").get<int>();
    ts.iterations_done = header["trainer"].at("iterations_done").get<long long>();
    for (auto* g : groups)
      for (auto& t : g->tensors) {
        std::vector<T> v(t.value.size());
        f.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(T)));
        if (!f) throw std::runtime_error("truncated trainer state: " + path);
        ts.velocity.push_back(std::move(v));
      }
    out.trainer = std::move(ts);
  }
  return out;
}

/// FNV-1a64 over the file bytes, as 16 hex digits. Used to assert that a
/// checkpoint on disk was or wasn't touched.
inline std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace plm
