#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sev {

enum class Architecture { stat_pool, attentive_stat, self_attentive, serialized };

inline const char* architecture_name(Architecture a) {
  switch (a) {
    case Architecture::stat_pool: return "stat_pool";
    case Architecture::attentive_stat: return "attentive_stat";
    case Architecture::self_attentive: return "self_attentive";
    case Architecture::serialized: return "serialized";
  }
  throw std::logic_error("architecture_name: bad enum");
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "stat_pool") return Architecture::stat_pool;
  if (s == "attentive_stat") return Architecture::attentive_stat;
  if (s == "self_attentive") return Architecture::self_attentive;
  if (s == "serialized") return Architecture::serialized;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

// Everything needed to build a model. Defaults are the desk-scale training
// setup; paper_model_config() gives the full-size dimensions.
struct ModelConfig {
  Architecture architecture = Architecture::serialized;
  std::size_t num_layers = 2;             // attention stack depth N
  std::size_t d = 64;                     // frame feature dim inside the stack
  std::size_t d_k = 32;                   // query/key dim
  std::size_t d_ff = 128;                 // feed-forward inner dim
  std::size_t d_emb = 64;                 // embedding dim
  std::size_t input_dim = 26;             // acoustic feature dim
  std::size_t tdnn_channels = 64;         // first four TDNN layers
  std::size_t tdnn_final_channels = 128;  // fifth TDNN layer (baselines)
  std::size_t attn_hidden = 64;           // baseline attention hidden size
  std::size_t num_speakers = 16;
  double dropout = 0.1;
  std::uint64_t seed = 42;
};

inline ModelConfig paper_model_config(std::size_t n_layers = 6) {
  ModelConfig cfg;
  cfg.architecture = Architecture::serialized;
  cfg.num_layers = n_layers;
  cfg.d = 256;
  cfg.d_k = 128;
  cfg.d_ff = 512;
  cfg.d_emb = 256;
  cfg.input_dim = 26;
  cfg.tdnn_channels = 512;
  cfg.tdnn_final_channels = 1500;
  cfg.attn_hidden = 500;
  cfg.num_speakers = 5994;
  cfg.dropout = 0.1;
  return cfg;
}

struct OptimizerConfig {
  double lr = 1e-3;
  double lr_decay = 0.6;  // multiplies the learning rate after each epoch
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Feature pipeline applied identically at train and extraction time. A
// window of 0 disables sliding CMN. The full-scale setup uses a 300-frame
// window (3 s at a 10 ms shift).
struct PreprocessConfig {
  std::size_t cmn_window = 0;
  bool vad = false;
  double vad_k = 0.5;
};

struct TrainConfig {
  OptimizerConfig opt;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t chunk_frames = 200;
  std::string train_manifest;
  PreprocessConfig preprocess;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    const long long x = std::stoll(v);
    if (x < 0) throw std::invalid_argument("negative");
    return std::size_t(x);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config: bad value '" + v + "' for " + key);
}

}  // namespace detail

// `key = value` lines; '#' starts a comment; unknown keys are rejected.
inline Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    }

    auto& m = cfg.model;
    auto& t = cfg.train;
    if (key == "architecture") m.architecture = parse_architecture(value);
    else if (key == "num_layers") m.num_layers = detail::parse_size(key, value);
    else if (key == "d") m.d = detail::parse_size(key, value);
    else if (key == "d_k") m.d_k = detail::parse_size(key, value);
    else if (key == "d_ff") m.d_ff = detail::parse_size(key, value);
    else if (key == "d_emb") m.d_emb = detail::parse_size(key, value);
    else if (key == "input_dim") m.input_dim = detail::parse_size(key, value);
    else if (key == "tdnn_channels") m.tdnn_channels = detail::parse_size(key, value);
    else if (key == "tdnn_final_channels") m.tdnn_final_channels = detail::parse_size(key, value);
    else if (key == "attn_hidden") m.attn_hidden = detail::parse_size(key, value);
    else if (key == "num_speakers") m.num_speakers = detail::parse_size(key, value);
    else if (key == "dropout") m.dropout = detail::parse_double(key, value);
    else if (key == "seed") m.seed = std::uint64_t(detail::parse_size(key, value));
    else if (key == "lr") t.opt.lr = detail::parse_double(key, value);
    else if (key == "lr_decay") t.opt.lr_decay = detail::parse_double(key, value);
    else if (key == "weight_decay") t.opt.weight_decay = detail::parse_double(key, value);
    else if (key == "epochs") t.epochs = detail::parse_size(key, value);
    else if (key == "batch_size") t.batch_size = detail::parse_size(key, value);
    else if (key == "chunk_frames") t.chunk_frames = detail::parse_size(key, value);
    else if (key == "train_manifest") t.train_manifest = value;
    else if (key == "cmn_window") t.preprocess.cmn_window = detail::parse_size(key, value);
    else if (key == "vad") t.preprocess.vad = detail::parse_bool(key, value);
    else if (key == "vad_k") t.preprocess.vad_k = detail::parse_double(key, value);
    else {
      throw std::invalid_argument("config: unknown key '" + key + "' on line " +
                                  std::to_string(lineno));
    }
  }
  return cfg;
}

inline Config parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace sev
