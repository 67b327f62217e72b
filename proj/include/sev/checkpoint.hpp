#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sev/config.hpp"
#include "sev/model.hpp"

namespace sev {

// Checkpoint layout: "SAEM" | version u32 | count u32 | entries, where each
// entry is {name-length u32, name bytes, rank u32, extents u32 x rank,
// float32 payload}. Little-endian throughout. Besides the parameter store
// (including batch-norm running stats), reserved "config.*" entries embed
// the numeric model configuration so a checkpoint rebuilds its own
// architecture. Round trips are bit-exact.

namespace detail::ckpt {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) {
  put_u32(os, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  std::vector<unsigned char> bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated " + std::string(what) +
                               " at byte " + std::to_string(pos) + " in " + path);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                      (std::uint32_t(bytes[pos + 2]) << 16) |
                      (std::uint32_t(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

struct RawEntry {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

inline void write_entry(std::ostream& os, const std::string& name,
                        const std::vector<std::uint32_t>& extents,
                        const std::vector<float>& values) {
  put_u32(os, std::uint32_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  put_u32(os, std::uint32_t(extents.size()));
  std::size_t n = 1;
  for (auto e : extents) {
    put_u32(os, e);
    n *= e;
  }
  if (n != values.size()) {
    throw std::logic_error("checkpoint: entry '" + name + "' extents disagree with payload");
  }
  for (float v : values) put_f32(os, v);
}

}  // namespace detail::ckpt

template <typename S>
struct LoadedModel {
  Model<S> model;
  PreprocessConfig preprocess;
};

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const Model<S>& m,
                     const PreprocessConfig& preprocess = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());

  using detail::ckpt::write_entry;
  const auto& cfg = m.cfg;
  std::vector<std::pair<std::string, float>> scalars = {
      {"config.architecture", float(int(cfg.architecture))},
      {"config.num_layers", float(cfg.num_layers)},
      {"config.d", float(cfg.d)},
      {"config.d_k", float(cfg.d_k)},
      {"config.d_ff", float(cfg.d_ff)},
      {"config.d_emb", float(cfg.d_emb)},
      {"config.input_dim", float(cfg.input_dim)},
      {"config.tdnn_channels", float(cfg.tdnn_channels)},
      {"config.tdnn_final_channels", float(cfg.tdnn_final_channels)},
      {"config.attn_hidden", float(cfg.attn_hidden)},
      {"config.num_speakers", float(cfg.num_speakers)},
      {"config.dropout", float(cfg.dropout)},
      {"config.cmn_window", float(preprocess.cmn_window)},
      {"config.vad", preprocess.vad ? 1.0f : 0.0f},
      {"config.vad_k", float(preprocess.vad_k)},
  };
  const std::uint32_t count =
      std::uint32_t(scalars.size() + 1 + m.params.entries().size());

  os.write("SAEM", 4);
  detail::ckpt::put_u32(os, 1);  // version
  detail::ckpt::put_u32(os, count);
  for (const auto& [name, value] : scalars) write_entry(os, name, {1}, {value});
  // 64-bit seed split into two bit-cast float32 halves so it survives exactly
  write_entry(os, "config.seed", {2},
              {std::bit_cast<float>(std::uint32_t(cfg.seed & 0xffffffffu)),
               std::bit_cast<float>(std::uint32_t(cfg.seed >> 32))});

  for (const auto& e : m.params.entries()) {
    std::vector<std::uint32_t> extents;
    for (auto x : e.tensor.shape()) extents.push_back(std::uint32_t(x));
    std::vector<float> values(e.tensor.size());
    auto d = e.tensor.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = float(d[i]);
    write_entry(os, e.name, extents, values);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

template <typename S>
LoadedModel<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  detail::ckpt::Reader r;
  r.path = path.string();
  r.bytes.assign((std::istreambuf_iterator<char>(is)),
                 std::istreambuf_iterator<char>());
  r.need(4, "magic");
  if (std::memcmp(r.bytes.data(), "SAEM", 4) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t count = r.u32("entry count");

  std::vector<detail::ckpt::RawEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    detail::ckpt::RawEntry e;
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    e.name.assign(reinterpret_cast<const char*>(r.bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("rank");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.extents.push_back(r.u32("extent"));
      n *= e.extents.back();
    }
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = r.f32("payload");
    entries.push_back(std::move(e));
  }
  if (r.pos != r.bytes.size()) {
    throw std::runtime_error("load_checkpoint: " +
                             std::to_string(r.bytes.size() - r.pos) +
                             " trailing bytes in " + path.string());
  }

  std::map<std::string, const detail::ckpt::RawEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto config_scalar = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->values.size() != 1) {
      throw std::runtime_error("load_checkpoint: missing " + name);
    }
    return double(it->second->values[0]);
  };

  ModelConfig cfg;
  const int arch = int(config_scalar("config.architecture"));
  if (arch < 0 || arch > 3) {
    throw std::runtime_error("load_checkpoint: bad architecture code");
  }
  cfg.architecture = Architecture(arch);
  cfg.num_layers = std::size_t(config_scalar("config.num_layers"));
  cfg.d = std::size_t(config_scalar("config.d"));
  cfg.d_k = std::size_t(config_scalar("config.d_k"));
  cfg.d_ff = std::size_t(config_scalar("config.d_ff"));
  cfg.d_emb = std::size_t(config_scalar("config.d_emb"));
  cfg.input_dim = std::size_t(config_scalar("config.input_dim"));
  cfg.tdnn_channels = std::size_t(config_scalar("config.tdnn_channels"));
  cfg.tdnn_final_channels = std::size_t(config_scalar("config.tdnn_final_channels"));
  cfg.attn_hidden = std::size_t(config_scalar("config.attn_hidden"));
  cfg.num_speakers = std::size_t(config_scalar("config.num_speakers"));
  cfg.dropout = config_scalar("config.dropout");
  {
    auto it = by_name.find("config.seed");
    if (it == by_name.end() || it->second->values.size() != 2) {
      throw std::runtime_error("load_checkpoint: missing config.seed");
    }
    const std::uint64_t lo = std::bit_cast<std::uint32_t>(it->second->values[0]);
    const std::uint64_t hi = std::bit_cast<std::uint32_t>(it->second->values[1]);
    cfg.seed = lo | (hi << 32);
  }

  LoadedModel<S> out{build_model<S>(cfg), {}};
  out.preprocess.cmn_window = std::size_t(config_scalar("config.cmn_window"));
  out.preprocess.vad = config_scalar("config.vad") != 0.0;
  out.preprocess.vad_k = config_scalar("config.vad_k");

  for (auto& e : out.model.params.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) {
      throw std::runtime_error("load_checkpoint: missing parameter '" + e.name + "'");
    }
    const auto& raw = *it->second;
    const auto& shape = e.tensor.shape();
    bool shape_ok = raw.extents.size() == shape.size();
    for (std::size_t k = 0; shape_ok && k < shape.size(); ++k) {
      shape_ok = raw.extents[k] == shape[k];
    }
    if (!shape_ok || raw.values.size() != e.tensor.size()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + e.name + "'");
    }
    auto dst = e.tensor.data_mut();
    for (std::size_t k = 0; k < raw.values.size(); ++k) dst[k] = S(raw.values[k]);
  }
  return out;
}

}  // namespace sev
