#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "mcg/dataio.hpp"
#include "mcg/model.hpp"
#include "mcg/train.hpp"

namespace mcg {

/// Flat key=value settings. Blank lines and '#' comments are ignored.
using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

/// Shortest text that parses back to the same double.
inline std::string fmt_double(double d) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, ptr);
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "<config>") {
  KeyValues kv;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  return parse_key_values(in, path);
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
}

/// Throws ConfigError for keys no consumer recognises.
inline void reject_unknown_keys(const KeyValues& kv, const std::set<std::string>& known) {
  for (const auto& [k, _] : kv)
    if (!known.contains(k)) throw ConfigError("unknown config key '" + k + "'");
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

inline const std::set<std::string>& model_keys() {
  static const std::set<std::string> k{"base_channels", "state_dim",        "stage_depths", "conv_kernel", "expansion",
                                       "dw_kernel",     "decoder_channels", "stc_blocks",   "use_flow",    "use_2ds"};
  return k;
}

inline void apply(ModelConfig& m, const KeyValues& kv) {
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "base_channels") m.encoder.base_channels = parse_number<std::size_t>(k, v);
    else if (k == "state_dim") m.encoder.state_dim = parse_number<std::size_t>(k, v);
    else if (k == "conv_kernel") m.encoder.conv_kernel = parse_number<std::size_t>(k, v);
    else if (k == "expansion") m.encoder.expansion = parse_number<std::size_t>(k, v);
    else if (k == "decoder_channels") m.decoder_channels = parse_number<std::size_t>(k, v);
    else if (k == "stc_blocks") m.stc.blocks = parse_number<std::size_t>(k, v);
    else if (k == "use_flow") m.use_flow = detail::parse_bool(k, v);
    else if (k == "use_2ds") m.encoder.use_2ds = detail::parse_bool(k, v);
    else if (k == "dw_kernel") {
      if (v == "3x3") m.encoder.dw_kernel = DepthwiseKernel::K3x3;
      else if (v == "1x3") m.encoder.dw_kernel = DepthwiseKernel::K1x3;
      else throw ConfigError("dw_kernel must be 3x3 or 1x3");
    } else if (k == "stage_depths") {
      std::istringstream ss(v);
      std::string item;
      std::size_t i = 0;
      while (std::getline(ss, item, ',')) {
        if (i == 4) throw ConfigError("stage_depths takes four values");
        m.encoder.stage_depths[i++] = parse_number<std::size_t>(k, detail::trim(item));
      }
      if (i != 4) throw ConfigError("stage_depths takes four values");
    }
  }
}

inline KeyValues to_key_values(const ModelConfig& m) {
  const auto& d = m.encoder.stage_depths;
  return {{"base_channels", std::to_string(m.encoder.base_channels)},
          {"state_dim", std::to_string(m.encoder.state_dim)},
          {"stage_depths", std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + "," + std::to_string(d[3])},
          {"conv_kernel", std::to_string(m.encoder.conv_kernel)},
          {"expansion", std::to_string(m.encoder.expansion)},
          {"dw_kernel", m.encoder.dw_kernel == DepthwiseKernel::K3x3 ? "3x3" : "1x3"},
          {"decoder_channels", std::to_string(m.decoder_channels)},
          {"stc_blocks", std::to_string(m.stc.blocks)},
          {"use_flow", m.use_flow ? "true" : "false"},
          {"use_2ds", m.encoder.use_2ds ? "true" : "false"}};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline const std::set<std::string>& train_keys() {
  static const std::set<std::string> k{"lr",          "beta1",       "beta2", "batch_size", "steps",
                                       "ce_weight",   "dice_weight", "seed",  "flip",       "log_every",
                                       "grad_clip"};
  return k;
}

inline void apply(TrainConfig& t, const KeyValues& kv) {
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "lr") t.adam.lr = parse_number<double>(k, v);
    else if (k == "beta1") t.adam.beta1 = parse_number<double>(k, v);
    else if (k == "beta2") t.adam.beta2 = parse_number<double>(k, v);
    else if (k == "batch_size") t.batch_size = parse_number<std::size_t>(k, v);
    else if (k == "steps") t.steps = parse_number<std::size_t>(k, v);
    else if (k == "ce_weight") t.weights.ce = parse_number<double>(k, v);
    else if (k == "dice_weight") t.weights.dice = parse_number<double>(k, v);
    else if (k == "seed") t.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "flip") t.flip_augment = detail::parse_bool(k, v);
    else if (k == "log_every") t.log_every = parse_number<std::size_t>(k, v);
    else if (k == "grad_clip") t.grad_clip = parse_number<double>(k, v);
  }
}

inline KeyValues to_key_values(const TrainConfig& t) {
  using detail::fmt_double;
  return {{"lr", fmt_double(t.adam.lr)},
          {"beta1", fmt_double(t.adam.beta1)},
          {"beta2", fmt_double(t.adam.beta2)},
          {"batch_size", std::to_string(t.batch_size)},
          {"steps", std::to_string(t.steps)},
          {"ce_weight", fmt_double(t.weights.ce)},
          {"dice_weight", fmt_double(t.weights.dice)},
          {"seed", std::to_string(t.seed)},
          {"flip", t.flip_augment ? "true" : "false"},
          {"log_every", std::to_string(t.log_every)},
          {"grad_clip", fmt_double(t.grad_clip)}};
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

inline const std::set<std::string>& synth_keys() {
  static const std::set<std::string> k{"count",    "size",          "min_changes", "max_changes", "min_size",
                                       "max_size", "static_shapes", "ellipse_prob", "insert_prob", "jitter",
                                       "noise",    "seed",          "separate_changes"};
  return k;
}

inline void apply(SynthConfig& s, const KeyValues& kv) {
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "count") s.count = parse_number<std::size_t>(k, v);
    else if (k == "size") s.height = s.width = parse_number<std::size_t>(k, v);
    else if (k == "min_changes") s.min_changes = parse_number<std::size_t>(k, v);
    else if (k == "max_changes") s.max_changes = parse_number<std::size_t>(k, v);
    else if (k == "min_size") s.min_size = parse_number<std::size_t>(k, v);
    else if (k == "max_size") s.max_size = parse_number<std::size_t>(k, v);
    else if (k == "static_shapes") s.static_shapes = parse_number<std::size_t>(k, v);
    else if (k == "ellipse_prob") s.ellipse_prob = parse_number<double>(k, v);
    else if (k == "insert_prob") s.insert_prob = parse_number<double>(k, v);
    else if (k == "jitter") s.jitter = parse_number<double>(k, v);
    else if (k == "noise") s.noise_sigma = parse_number<double>(k, v);
    else if (k == "seed") s.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "separate_changes") s.separate_changes = detail::parse_bool(k, v);
  }
}

inline KeyValues to_key_values(const SynthConfig& s) {
  using detail::fmt_double;
  return {{"count", std::to_string(s.count)},
          {"size", std::to_string(s.height)},
          {"min_changes", std::to_string(s.min_changes)},
          {"max_changes", std::to_string(s.max_changes)},
          {"min_size", std::to_string(s.min_size)},
          {"max_size", std::to_string(s.max_size)},
          {"static_shapes", std::to_string(s.static_shapes)},
          {"ellipse_prob", fmt_double(s.ellipse_prob)},
          {"insert_prob", fmt_double(s.insert_prob)},
          {"jitter", fmt_double(s.jitter)},
          {"noise", fmt_double(s.noise_sigma)},
          {"seed", std::to_string(s.seed)},
          {"separate_changes", s.separate_changes ? "true" : "false"}};
}

}  // namespace mcg
