#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace plm {

/// Keys accepted in config files and surfaced by RunConfig. Anything else in
/// a file is treated as a typo and rejected.
///
///   seed                root seed; all randomness derives from it
///   arch.profile        architecture profile name (plm, plm_s, tiny)
///   loss                l1 | l2sq
///   lr, momentum, weight_decay, batch_size, epochs
///                       optimizer settings (epochs applies to pretraining)
///   lr_drop_every, lr_drop_factor
///                       learning-rate schedule (epochs between drops, factor)
///   iterations          adaptation iteration count
///   data_root           dataset root (frames + annotations)
///   out_dir             artifact output directory
///   threshold           foreground decision threshold in (0,1)
///   postprocess         off | wm
///   update.every, update.iterations
///                       periodic re-adaptation cadence and step count
///   refs_per_seq, targets_per_ref, crops_per_combo, min_frame_gap
///                       pretraining pair-generation counts
///   finetune_pairs      adaptation pair count
///   protocol            davis | jumpcut | errorrate
///   jumpcut.distance, jumpcut.last_key
///                       key-frame stride and final key index
///   tolerance           contour-match tolerance in pixels (-1 = from diagonal)
inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "seed",          "arch.profile",   "loss",
      "lr",            "momentum",       "weight_decay",
      "batch_size",    "epochs",         "lr_drop_every",
      "lr_drop_factor", "iterations",    "data_root",
      "out_dir",       "threshold",      "postprocess",
      "update.every",  "update.iterations",
      "refs_per_seq",  "targets_per_ref", "crops_per_combo",
      "min_frame_gap", "finetune_pairs", "protocol",
      "jumpcut.distance", "jumpcut.last_key", "tolerance",
  };
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses flat `key = value` text: one pair per line, '#' starts a comment,
/// blank lines ignored, a repeated key's last occurrence wins.
inline std::map<std::string, std::string> parse_config_text(
    const std::string& text, const std::string& origin = "<config>") {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": empty key");
    if (!known_config_keys().count(key))
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), path);
}

/// Merged configuration with "defaults < file < flags" precedence. Typed
/// getters take the command's default and record the value actually used, so
/// resolved() is a complete snapshot of what the run saw — including
/// defaults nothing overrode.
class RunConfig {
 public:
  void load_file(const std::string& path) {
    for (auto& [k, v] : parse_config_file(path)) file_[k] = v;
  }

  /// Flag layer; `key` must be a known key (callers pass literals).
  void set_flag(const std::string& key, const std::string& value) {
    if (!known_config_keys().count(key))
      throw std::invalid_argument("unknown config key: " + key);
    flags_[key] = value;
  }

  bool is_set(const std::string& key) const {
    return flags_.count(key) || file_.count(key);
  }

  std::string str(const std::string& key, const std::string& def) const {
    std::string v = raw(key, def);
    resolved_[key] = v;
    return v;
  }

  double num(const std::string& key, double def) const {
    std::string v = raw(key, fmt(def));
    resolved_[key] = v;
    return parse_double(key, v);
  }

  long long integer(const std::string& key, long long def) const {
    std::string v = raw(key, std::to_string(def));
    resolved_[key] = v;
    return parse_int(key, v);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t def) const {
    std::string v = raw(key, std::to_string(def));
    resolved_[key] = v;
    std::size_t pos = 0;
    std::uint64_t out = 0;
    try {
      out = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != v.size())
      throw std::invalid_argument("config: " + key + " must be an unsigned integer, got '" + v + "'");
    return out;
  }

  /// Every key looked up so far, with the value the run used.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (auto& [k, v] : resolved_) j[k] = v;
    return j;
  }

 private:
  std::string raw(const std::string& key, const std::string& def) const {
    if (auto it = flags_.find(key); it != flags_.end()) return it->second;
    if (auto it = file_.find(key); it != file_.end()) return it->second;
    return def;
  }

  static std::string fmt(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip
    return std::string(buf, res.ptr);
  }

  static double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != v.size())
      throw std::invalid_argument("config: " + key + " must be a number, got '" + v + "'");
    return out;
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != v.size())
      throw std::invalid_argument("config: " + key + " must be an integer, got '" + v + "'");
    return out;
  }

  std::map<std::string, std::string> file_, flags_;
  mutable std::map<std::string, std::string> resolved_;
};

}  // namespace plm
