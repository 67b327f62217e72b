#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sev/config.hpp"
#include "sev/rng.hpp"
#include "sev/tensor.hpp"

namespace sev::data {

// A variable-length sequence of frame-level features, row-major T x dim.
struct FrameSequence {
  std::string utt_id;
  std::string speaker_id;  // empty when unlabeled
  std::size_t dim = 0;
  std::vector<float> frames;

  std::size_t num_frames() const { return dim == 0 ? 0 : frames.size() / dim; }

  float at(std::size_t t, std::size_t j) const { return frames[t * dim + j]; }
  float& at(std::size_t t, std::size_t j) { return frames[t * dim + j]; }
};

template <typename S>
Tensor<S> to_tensor(const FrameSequence& fs, bool requires_grad = false) {
  std::vector<S> data(fs.frames.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = S(fs.frames[i]);
  return Tensor<S>::from_data({fs.num_frames(), fs.dim}, std::move(data),
                              requires_grad);
}

// ---------------------------------------------------------------------------
// feature files: "SAEF" | version u32=1 | T u32 | d u32 | T*d float32
// little-endian, one utterance per file, utterance id = file stem
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void write_features(const std::filesystem::path& path,
                           const FrameSequence& fs) {
  if (fs.num_frames() == 0 || fs.dim == 0) {
    throw std::invalid_argument("write_features: empty sequence '" + fs.utt_id + "'");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_features: cannot open " + path.string());
  os.write("SAEF", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, std::uint32_t(fs.num_frames()));
  detail::put_u32(os, std::uint32_t(fs.dim));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(fs.frames.data()),
           std::streamsize(fs.frames.size() * 4));
  if (!os) throw std::runtime_error("write_features: write failed for " + path.string());
}

inline FrameSequence read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_features: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& what, std::size_t offset) {
    throw std::runtime_error("read_features: " + what + " at byte " +
                             std::to_string(offset) + " in " + path.string());
  };
  if (bytes.size() < 16) fail("truncated header", bytes.size());
  if (std::memcmp(bytes.data(), "SAEF", 4) != 0) fail("bad magic", 0);
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != 1) fail("unsupported version " + std::to_string(version), 4);
  const std::uint32_t t_len = detail::get_u32(bytes.data() + 8);
  const std::uint32_t d = detail::get_u32(bytes.data() + 12);
  if (t_len == 0) fail("header frame count is zero", 8);
  if (d == 0) fail("header dim is zero", 12);
  const std::size_t expected = std::size_t(t_len) * d * 4;
  if (bytes.size() - 16 != expected) {
    fail("payload is " + std::to_string(bytes.size() - 16) + " bytes, header implies " +
             std::to_string(expected),
         16);
  }
  FrameSequence fs;
  fs.utt_id = path.stem().string();
  fs.dim = d;
  fs.frames.resize(std::size_t(t_len) * d);
  std::memcpy(fs.frames.data(), bytes.data() + 16, expected);
  return fs;
}

// ---------------------------------------------------------------------------
// manifests and trial lists
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string utt_id;
  std::string speaker_id;
  std::string rel_path;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_manifest: cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string extra;
    if (!(ss >> e.utt_id >> e.speaker_id >> e.rel_path) || (ss >> extra)) {
      throw std::runtime_error("read_manifest: malformed line " +
                               std::to_string(lineno) + " in " + path.string());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_manifest: cannot open " + path.string());
  for (const auto& e : entries) {
    os << e.utt_id << ' ' << e.speaker_id << ' ' << e.rel_path << '\n';
  }
}

// Loads every utterance named by a manifest; relative paths resolve against
// the manifest's directory.
inline std::vector<FrameSequence> load_manifest_features(
    const std::filesystem::path& manifest_path) {
  const auto root = manifest_path.parent_path();
  std::vector<FrameSequence> out;
  for (const auto& e : read_manifest(manifest_path)) {
    FrameSequence fs = read_features(root / e.rel_path);
    fs.utt_id = e.utt_id;
    fs.speaker_id = e.speaker_id;
    out.push_back(std::move(fs));
  }
  return out;
}

struct Trial {
  std::string enroll;
  std::string test;
  bool target = false;
};

using TrialSet = std::vector<Trial>;

inline TrialSet read_trials(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_trials: cannot open " + path.string());
  TrialSet trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Trial t;
    std::string label, extra;
    if (!(ss >> t.enroll >> t.test >> label) || (ss >> extra) ||
        (label != "target" && label != "nontarget")) {
      throw std::runtime_error("read_trials: malformed line " +
                               std::to_string(lineno) + " in " + path.string());
    }
    t.target = label == "target";
    trials.push_back(std::move(t));
  }
  return trials;
}

inline void write_trials(const std::filesystem::path& path, const TrialSet& trials) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_trials: cannot open " + path.string());
  for (const auto& t : trials) {
    os << t.enroll << ' ' << t.test << ' ' << (t.target ? "target" : "nontarget")
       << '\n';
  }
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

// Subtracts from each frame the mean of a window centered on it, truncated
// at the sequence edges. A window covering the whole sequence from every
// position reduces to global mean subtraction.
inline FrameSequence sliding_cmn(const FrameSequence& x, std::size_t window_frames) {
  if (window_frames == 0) {
    throw std::invalid_argument("sliding_cmn: window must be >= 1");
  }
  const std::size_t t_len = x.num_frames(), d = x.dim;
  const std::size_t before = (window_frames - 1) / 2;
  const std::size_t after = window_frames / 2;
  FrameSequence out = x;
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::size_t lo = t >= before ? t - before : 0;
    const std::size_t hi = std::min(t + after, t_len - 1);
    const double count = double(hi - lo + 1);
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t s = lo; s <= hi; ++s) m += double(x.at(s, j));
      out.at(t, j) = float(double(x.at(t, j)) - m / count);
    }
  }
  return out;
}

// Energy-threshold voice activity detection. Frame energy is feature 0 (the
// first cepstral coefficient convention); frames with c0 >= mean(c0) -
// k * std(c0) are kept. At least one frame always survives: if the
// threshold rejects everything, the maximum-energy frame is kept.
inline FrameSequence energy_vad(const FrameSequence& x, double k = 0.5) {
  const std::size_t t_len = x.num_frames(), d = x.dim;
  if (t_len == 0 || d == 0) {
    throw std::invalid_argument("energy_vad: empty sequence");
  }
  double mean = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) mean += double(x.at(t, 0));
  mean /= double(t_len);
  double var = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const double c = double(x.at(t, 0)) - mean;
    var += c * c;
  }
  var /= double(t_len);
  const double threshold = mean - k * std::sqrt(var);

  FrameSequence out;
  out.utt_id = x.utt_id;
  out.speaker_id = x.speaker_id;
  out.dim = d;
  std::size_t best = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (double(x.at(t, 0)) >= threshold) {
      out.frames.insert(out.frames.end(), x.frames.begin() + t * d,
                        x.frames.begin() + (t + 1) * d);
    }
    if (x.at(t, 0) > x.at(best, 0)) best = t;
  }
  if (out.frames.empty()) {
    out.frames.assign(x.frames.begin() + best * d, x.frames.begin() + (best + 1) * d);
  }
  return out;
}

// CMN followed by VAD, matching how features are conditioned before the
// network at both training and extraction time.
inline FrameSequence apply_preprocess(const FrameSequence& fs,
                                      const PreprocessConfig& pc) {
  FrameSequence out = fs;
  if (pc.cmn_window > 0) out = sliding_cmn(out, pc.cmn_window);
  if (pc.vad) out = energy_vad(out, pc.vad_k);
  return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

// Stand-in training data: each speaker is a random linear map from a
// low-rank latent space plus an offset; utterances are AR(1)-smoothed
// Gaussian latent paths through that map plus observation noise.
struct SyntheticSpeakerModel {
  std::vector<float> basis;   // dim x latent_rank, row-major
  std::vector<float> offset;  // dim
};

struct SynthConfig {
  std::size_t num_speakers = 16;
  std::size_t utts_per_speaker = 20;
  std::size_t eval_utts_per_speaker = 4;  // held out for trials
  std::size_t min_frames = 200;
  std::size_t max_frames = 400;
  std::size_t dim = 26;
  std::size_t latent_rank = 6;
  double ar_coeff = 0.9;
  double noise_scale = 0.1;
  double offset_scale = 1.0;
  double min_speaker_separation = 2.0;
  std::uint64_t seed = 42;
};

struct SynthCorpus {
  std::vector<std::string> speakers;
  std::vector<SyntheticSpeakerModel> models;
  std::vector<FrameSequence> train_utts;
  std::vector<FrameSequence> eval_utts;
  TrialSet trials;  // all pairs over the held-out utterances
};

inline SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.num_speakers < 2) {
    throw std::invalid_argument("synth_corpus: need at least 2 speakers");
  }
  if (cfg.utts_per_speaker <= cfg.eval_utts_per_speaker) {
    throw std::invalid_argument(
        "synth_corpus: utts_per_speaker must exceed eval_utts_per_speaker");
  }
  if (cfg.min_frames == 0 || cfg.max_frames < cfg.min_frames) {
    throw std::invalid_argument("synth_corpus: degenerate frame range");
  }
  if (cfg.dim == 0 || cfg.latent_rank == 0) {
    throw std::invalid_argument("synth_corpus: degenerate dimensions");
  }

  Rng rng(cfg.seed);
  SynthCorpus corpus;

  auto sq_dist = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double c = double(a[i]) - double(b[i]);
      s += c * c;
    }
    return s;
  };

  const double min_sep2 = cfg.min_speaker_separation * cfg.min_speaker_separation;
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) {
    SyntheticSpeakerModel m;
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      m.offset.resize(cfg.dim);
      for (auto& v : m.offset) v = float(rng.normal(0.0, cfg.offset_scale));
      m.basis.resize(cfg.dim * cfg.latent_rank);
      const double bscale = 1.0 / std::sqrt(double(cfg.latent_rank));
      for (auto& v : m.basis) v = float(rng.normal(0.0, bscale));
      ok = true;
      for (const auto& prev : corpus.models) {
        if (sq_dist(m.offset, prev.offset) < min_sep2 ||
            sq_dist(m.basis, prev.basis) < min_sep2) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) {
      throw std::runtime_error("synth_corpus: could not separate speakers; lower min_speaker_separation");
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "spk%03zu", s);
    corpus.speakers.emplace_back(buf);
    corpus.models.push_back(std::move(m));
  }

  const double rho = cfg.ar_coeff;
  const double innov = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  std::vector<double> z(cfg.latent_rank);
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) {
    const auto& m = corpus.models[s];
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      const std::size_t t_len =
          cfg.min_frames + rng.uniform_int(cfg.max_frames - cfg.min_frames + 1);
      FrameSequence fs;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-u%03zu", corpus.speakers[s].c_str(), u);
      fs.utt_id = buf;
      fs.speaker_id = corpus.speakers[s];
      fs.dim = cfg.dim;
      fs.frames.resize(t_len * cfg.dim);
      for (auto& v : z) v = rng.normal();
      for (std::size_t t = 0; t < t_len; ++t) {
        if (t > 0) {
          for (auto& v : z) v = rho * v + innov * rng.normal();
        }
        for (std::size_t j = 0; j < cfg.dim; ++j) {
          double acc = double(m.offset[j]);
          for (std::size_t r = 0; r < cfg.latent_rank; ++r) {
            acc += double(m.basis[j * cfg.latent_rank + r]) * z[r];
          }
          acc += cfg.noise_scale * rng.normal();
          fs.frames[t * cfg.dim + j] = float(acc);
        }
      }
      const bool held_out = u + cfg.eval_utts_per_speaker >= cfg.utts_per_speaker;
      (held_out ? corpus.eval_utts : corpus.train_utts).push_back(std::move(fs));
    }
  }

  // trials: every pair of held-out utterances, labeled by speaker equality
  for (std::size_t i = 0; i < corpus.eval_utts.size(); ++i) {
    for (std::size_t j = i + 1; j < corpus.eval_utts.size(); ++j) {
      corpus.trials.push_back({corpus.eval_utts[i].utt_id,
                               corpus.eval_utts[j].utt_id,
                               corpus.eval_utts[i].speaker_id ==
                                   corpus.eval_utts[j].speaker_id});
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// chunking and batching
// ---------------------------------------------------------------------------

struct TrainItem {
  std::vector<float> chunk;  // chunk_frames x dim
  int label = 0;
};

struct Batch {
  std::vector<TrainItem> items;
};

// Fixed-length crop: random start for long utterances, wrap-padding from
// frame 0 for short ones (a 150-frame utterance padded to 200 repeats
// frames 0..49).
inline std::vector<float> crop_chunk(const FrameSequence& fs,
                                     std::size_t chunk_frames, Rng& rng) {
  const std::size_t t_len = fs.num_frames(), d = fs.dim;
  std::vector<float> out(chunk_frames * d);
  if (t_len >= chunk_frames) {
    const std::size_t start =
        t_len == chunk_frames ? 0 : rng.uniform_int(t_len - chunk_frames + 1);
    std::copy(fs.frames.begin() + start * d,
              fs.frames.begin() + (start + chunk_frames) * d, out.begin());
  } else {
    for (std::size_t t = 0; t < chunk_frames; ++t) {
      const std::size_t src = t % t_len;
      std::copy(fs.frames.begin() + src * d, fs.frames.begin() + (src + 1) * d,
                out.begin() + t * d);
    }
  }
  return out;
}

// One epoch of label-paired batches: utterance order shuffled, one random
// crop per utterance, ceil(N / batch_size) batches with the final partial
// batch kept.
inline std::vector<Batch> make_epoch_batches(
    const std::vector<FrameSequence>& utts, const std::vector<int>& labels,
    std::size_t chunk_frames, std::size_t batch_size, Rng& rng) {
  if (utts.empty()) throw std::invalid_argument("make_epoch_batches: empty corpus");
  if (labels.size() != utts.size()) {
    throw std::invalid_argument("make_epoch_batches: label count mismatch");
  }
  if (chunk_frames == 0 || batch_size == 0) {
    throw std::invalid_argument("make_epoch_batches: zero chunk or batch size");
  }
  std::vector<std::size_t> order(utts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::vector<Batch> batches;
  batches.reserve((utts.size() + batch_size - 1) / batch_size);
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    Batch b;
    const std::size_t end = std::min(pos + batch_size, order.size());
    b.items.reserve(end - pos);
    for (std::size_t i = pos; i < end; ++i) {
      const std::size_t idx = order[i];
      b.items.push_back({crop_chunk(utts[idx], chunk_frames, rng), labels[idx]});
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Maps speaker ids to contiguous labels (sorted order) and labels each
// utterance.
struct LabeledCorpus {
  std::vector<FrameSequence> utts;
  std::vector<int> labels;
  std::vector<std::string> speakers;  // label -> speaker id
};

inline LabeledCorpus label_corpus(std::vector<FrameSequence> utts) {
  LabeledCorpus c;
  std::map<std::string, int> ids;
  for (const auto& u : utts) {
    if (u.speaker_id.empty()) {
      throw std::invalid_argument("label_corpus: utterance '" + u.utt_id +
                                  "' has no speaker");
    }
    ids.emplace(u.speaker_id, 0);
  }
  int next = 0;
  for (auto& [spk, label] : ids) {
    label = next++;
    c.speakers.push_back(spk);
  }
  c.labels.reserve(utts.size());
  for (const auto& u : utts) c.labels.push_back(ids[u.speaker_id]);
  c.utts = std::move(utts);
  return c;
}

}  // namespace sev::data
