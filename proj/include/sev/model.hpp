#pragma once

#include <atomic>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sev/config.hpp"
#include "sev/data.hpp"
#include "sev/layers.hpp"
#include "sev/pooling.hpp"
#include "sev/rng.hpp"
#include "sev/serialized.hpp"
#include "sev/tensor.hpp"

namespace sev {

template <typename S>
struct ParamEntry {
  std::string name;
  Tensor<S> tensor;
  bool trainable = true;
};

// Named parameter store. Registration order is the construction order of the
// model and fixes both checkpoint layout and optimizer state order.
template <typename S>
class ParamRegistry {
 public:
  void add(std::string name, Tensor<S> t, bool trainable = true) {
    if (!t.defined()) return;
    for (const auto& e : entries_) {
      if (e.name == name) {
        throw std::logic_error("registry: duplicate parameter '" + name + "'");
      }
    }
    entries_.push_back({std::move(name), std::move(t), trainable});
  }

  std::vector<ParamEntry<S>>& entries() { return entries_; }
  const std::vector<ParamEntry<S>>& entries() const { return entries_; }

  ParamEntry<S>* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      if (e.trainable) e.tensor.zero_grad();
    }
  }

 private:
  std::vector<ParamEntry<S>> entries_;
};

struct ComponentCount {
  std::string name;
  std::size_t count = 0;
};

template <typename S>
std::size_t total_trainable(const ParamRegistry<S>& reg) {
  std::size_t n = 0;
  for (const auto& e : reg.entries()) {
    if (e.trainable) n += e.tensor.size();
  }
  return n;
}

template <typename S>
std::vector<ComponentCount> parameter_breakdown(const ParamRegistry<S>& reg) {
  std::vector<ComponentCount> out;
  for (const auto& e : reg.entries()) {
    if (e.trainable) out.push_back({e.name, e.tensor.size()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

// Full speaker-embedding network: TDNN front-end, one of four temporal
// aggregators, and a speaker classifier. The extractable embedding is the
// pre-activation output of the first post-pooling affine (baselines) or the
// pre-activation head sum (serialized stack).
template <typename S>
struct Model {
  ModelConfig cfg;
  std::vector<layers::TdnnLayerParams<S>> frontend;
  pooling::AttentiveStatParams<S> attentive;       // attentive_stat only
  pooling::SelfAttentivePoolParams<S> self_att;    // self_attentive only
  serialized::SerializedStackParams<S> stack;      // serialized only
  layers::DenseParams<S> emb_affine;               // baselines: pooled -> embedding
  layers::NormParams<S> emb_bn;                    // baselines: BN after ReLU(embedding)
  layers::DenseParams<S> cls_hidden;               // serialized classifier hidden layer
  layers::NormParams<S> cls_hidden_bn;
  layers::DenseParams<S> cls_out;                  // -> num_speakers logits
  ParamRegistry<S> params;
  Rng rng;  // continues past init; supplies dropout masks and batch order
};

namespace detail {

template <typename S>
void register_dense(ParamRegistry<S>& reg, const std::string& prefix,
                    const layers::DenseParams<S>& p) {
  reg.add(prefix + ".W", p.W);
  reg.add(prefix + ".b", p.b);
}

template <typename S>
void register_norm(ParamRegistry<S>& reg, const std::string& prefix,
                   const layers::NormParams<S>& p) {
  reg.add(prefix + ".gain", p.gain);
  reg.add(prefix + ".bias", p.bias);
  reg.add(prefix + ".running_mean", p.running_mean, /*trainable=*/false);
  reg.add(prefix + ".running_var", p.running_var, /*trainable=*/false);
}

template <typename S>
void register_tdnn(ParamRegistry<S>& reg, const std::string& prefix,
                   const layers::TdnnLayerParams<S>& p) {
  register_dense(reg, prefix, p.affine);
  if (p.activation) register_norm(reg, prefix + ".bn", p.bn);
}

}  // namespace detail

template <typename S>
Model<S> build_model(const ModelConfig& cfg) {
  if (cfg.input_dim == 0 || cfg.d == 0 || cfg.d_k == 0 || cfg.d_ff == 0 ||
      cfg.d_emb == 0 || cfg.tdnn_channels == 0 || cfg.tdnn_final_channels == 0 ||
      cfg.attn_hidden == 0 || cfg.num_speakers == 0) {
    throw std::invalid_argument("build_model: dimensions must be positive");
  }
  if (cfg.architecture == Architecture::serialized && cfg.num_layers == 0) {
    throw std::invalid_argument("build_model: serialized model needs num_layers >= 1");
  }

  Model<S> m;
  m.cfg = cfg;
  m.rng = Rng(cfg.seed);
  Rng& rng = m.rng;
  const std::size_t c = cfg.tdnn_channels;
  const bool is_serialized = cfg.architecture == Architecture::serialized;

  using Tdnn = layers::TdnnLayerParams<S>;
  m.frontend.push_back(Tdnn::init({-2, -1, 0, 1, 2}, c, cfg.input_dim, rng));
  m.frontend.push_back(Tdnn::init({-2, 0, 2}, c, c, rng));
  m.frontend.push_back(Tdnn::init({-3, 0, 3}, c, c, rng));
  if (is_serialized) {
    // linear projection into the attention stack, no ReLU / batch norm
    m.frontend.push_back(Tdnn::init({0}, cfg.d, c, rng, /*activation=*/false));
  } else {
    m.frontend.push_back(Tdnn::init({0}, c, c, rng));
    m.frontend.push_back(Tdnn::init({0}, cfg.tdnn_final_channels, c, rng));
  }
  for (std::size_t i = 0; i < m.frontend.size(); ++i) {
    detail::register_tdnn(m.params, "frontend.tdnn" + std::to_string(i + 1),
                          m.frontend[i]);
  }

  switch (cfg.architecture) {
    case Architecture::stat_pool:
      break;
    case Architecture::attentive_stat:
      m.attentive = pooling::AttentiveStatParams<S>::init(
          cfg.attn_hidden, cfg.tdnn_final_channels, rng);
      detail::register_dense(m.params, "pool.attentive.score", m.attentive.score);
      m.params.add("pool.attentive.v", m.attentive.v);
      m.params.add("pool.attentive.k", m.attentive.k);
      break;
    case Architecture::self_attentive:
      // keys come from the 4th TDNN layer's output through one transform
      m.self_att = pooling::SelfAttentivePoolParams<S>::init(cfg.attn_hidden, c, rng);
      detail::register_dense(m.params, "pool.selfatt.key", m.self_att.key);
      m.params.add("pool.selfatt.q", m.self_att.q);
      break;
    case Architecture::serialized:
      m.stack = serialized::SerializedStackParams<S>::init(
          cfg.num_layers, cfg.d, cfg.d_k, cfg.d_ff, cfg.d_emb, cfg.dropout, rng);
      for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string p = "stack.layer" + std::to_string(i);
        auto& lp = m.stack.layer_params[i];
        detail::register_norm(m.params, p + ".attn_norm", lp.attn_norm);
        m.params.add(p + ".W_q", lp.W_q);
        m.params.add(p + ".W_k", lp.W_k);
        detail::register_dense(m.params, p + ".residual", lp.residual_affine);
        detail::register_dense(m.params, p + ".head", lp.head_affine);
        detail::register_norm(m.params, p + ".ffw_norm", lp.ffw_norm);
        detail::register_dense(m.params, p + ".ffw1", lp.ffw1);
        detail::register_dense(m.params, p + ".ffw2", lp.ffw2);
      }
      detail::register_norm(m.params, "stack.emb_bn", m.stack.emb_bn);
      break;
  }

  if (!is_serialized) {
    m.emb_affine = layers::DenseParams<S>::init(
        cfg.d_emb, 2 * cfg.tdnn_final_channels, rng);
    detail::register_dense(m.params, "classifier.embedding", m.emb_affine);
    m.emb_bn = layers::NormParams<S>::batch_norm_init(cfg.d_emb);
    detail::register_norm(m.params, "classifier.emb_bn", m.emb_bn);
  } else {
    m.cls_hidden = layers::DenseParams<S>::init(cfg.d_emb, cfg.d_emb, rng);
    detail::register_dense(m.params, "classifier.hidden", m.cls_hidden);
    m.cls_hidden_bn = layers::NormParams<S>::batch_norm_init(cfg.d_emb);
    detail::register_norm(m.params, "classifier.hidden_bn", m.cls_hidden_bn);
  }
  m.cls_out = layers::DenseParams<S>::init(cfg.num_speakers, cfg.d_emb, rng);
  detail::register_dense(m.params, "classifier.softmax", m.cls_out);
  return m;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

template <typename S>
struct FrontendOut {
  Tensor<S> frames;  // input to the aggregator
  Tensor<S> tap;     // 4th-layer output (key source for self-attentive pooling)
};

template <typename S>
FrontendOut<S> frontend_forward(Model<S>& m, const Tensor<S>& x, Mode mode) {
  Tensor<S> h = x;
  Tensor<S> tap;
  for (std::size_t i = 0; i < m.frontend.size(); ++i) {
    h = layers::tdnn_forward(h, m.frontend[i], mode);
    if (i == 3) tap = h;
  }
  return {h, tap};
}

// Pre-activation utterance embedding for any architecture.
template <typename S>
Tensor<S> embed_utterance(Model<S>& m, const Tensor<S>& x, Mode mode, Rng& rng) {
  FrontendOut<S> fe = frontend_forward(m, x, mode);
  switch (m.cfg.architecture) {
    case Architecture::stat_pool:
      return dense(pooling::statistics_pool(fe.frames).concatenated(), m.emb_affine);
    case Architecture::attentive_stat:
      return dense(pooling::attentive_stats_pool(fe.frames, m.attentive).concatenated(),
                   m.emb_affine);
    case Architecture::self_attentive:
      return dense(
          pooling::self_attentive_pool(fe.frames, m.self_att, fe.tap).concatenated(),
          m.emb_affine);
    case Architecture::serialized:
      return serialized::serialized_embed(fe.frames, m.stack, mode, rng);
  }
  throw std::logic_error("embed_utterance: bad architecture");
}

// Classifier on a batch of embeddings: ReLU + batch norm, the serialized
// model's hidden layer when present, then the softmax layer's logits.
template <typename S>
Tensor<S> classify_batch(Model<S>& m, const Tensor<S>& embeddings, Mode mode) {
  const bool is_serialized = m.cfg.architecture == Architecture::serialized;
  Tensor<S> z = relu(embeddings);
  z = layers::batch_norm(z, is_serialized ? m.stack.emb_bn : m.emb_bn, mode);
  if (is_serialized) {
    z = layers::batch_norm(relu(dense(z, m.cls_hidden)), m.cls_hidden_bn, mode);
  }
  return dense(z, m.cls_out);
}

// Full-utterance eval-mode embedding. Deterministic: no sampling happens in
// eval mode and the model is only read, so concurrent calls on independent
// utterances are safe.
template <typename S>
std::vector<S> extract_embedding(Model<S>& m, const data::FrameSequence& fs) {
  if (fs.num_frames() == 0) {
    throw std::invalid_argument("extract_embedding: empty utterance '" +
                                fs.utt_id + "'");
  }
  Rng unused(0);
  Tensor<S> e = embed_utterance(m, data::to_tensor<S>(fs), Mode::eval, unused);
  return std::vector<S>(e.data().begin(), e.data().end());
}

template <typename S>
std::vector<std::vector<S>> extract_embeddings(
    Model<S>& m, const std::vector<data::FrameSequence>& utts,
    unsigned threads = 1) {
  std::vector<std::vector<S>> out(utts.size());
  if (threads <= 1 || utts.size() < 2) {
    for (std::size_t i = 0; i < utts.size(); ++i) {
      out[i] = extract_embedding(m, utts[i]);
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= utts.size()) return;
      out[i] = extract_embedding(m, utts[i]);
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::min<unsigned>(threads, unsigned(utts.size()));
  pool.reserve(n);
  for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace sev
