#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sev/layers.hpp"
#include "sev/pooling.hpp"
#include "sev/tensor.hpp"

namespace sev::serialized {

// One layer of the serialized attention stack: a pre-normalized
// input-aware self-attention module followed by a pre-normalized
// feed-forward module, each with a residual connection. The layer also
// emits one utterance-level vector (its "head").
template <typename S>
struct SerializedLayerParams {
  layers::NormParams<S> attn_norm;          // [d]
  Tensor<S> W_q;                            // [d_k x 2d], no bias
  Tensor<S> W_k;                            // [d_k x d], no bias
  layers::DenseParams<S> residual_affine;   // [d x d]
  layers::DenseParams<S> head_affine;       // [d_emb x 2d]
  layers::NormParams<S> ffw_norm;           // [d]
  layers::DenseParams<S> ffw1;              // [d_ff x d]
  layers::DenseParams<S> ffw2;              // [d x d_ff]

  static SerializedLayerParams init(std::size_t d, std::size_t d_k,
                                    std::size_t d_ff, std::size_t d_emb,
                                    Rng& rng) {
    SerializedLayerParams p;
    p.attn_norm = layers::NormParams<S>::layer_norm_init(d);
    p.W_q = layers::init_weight<S>(d_k, 2 * d, rng);
    p.W_k = layers::init_weight<S>(d_k, d, rng);
    p.residual_affine = layers::DenseParams<S>::init(d, d, rng);
    p.head_affine = layers::DenseParams<S>::init(d_emb, 2 * d, rng);
    p.ffw_norm = layers::NormParams<S>::layer_norm_init(d);
    p.ffw1 = layers::DenseParams<S>::init(d_ff, d, rng);
    p.ffw2 = layers::DenseParams<S>::init(d, d_ff, rng);
    return p;
  }
};

// Stack of N identical layers plus the ReLU + batch norm applied to the
// summed heads on the classifier side.
template <typename S>
struct SerializedStackParams {
  std::vector<SerializedLayerParams<S>> layer_params;
  layers::NormParams<S> emb_bn;  // batch norm on ReLU(head sum)
  double dropout_rate = 0.1;

  static SerializedStackParams init(std::size_t n_layers, std::size_t d,
                                    std::size_t d_k, std::size_t d_ff,
                                    std::size_t d_emb, double dropout_rate,
                                    Rng& rng) {
    if (n_layers == 0) {
      throw std::invalid_argument("serialized stack: need at least one layer");
    }
    SerializedStackParams p;
    p.layer_params.reserve(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
      p.layer_params.push_back(
          SerializedLayerParams<S>::init(d, d_k, d_ff, d_emb, rng));
    }
    p.emb_bn = layers::NormParams<S>::batch_norm_init(d_emb);
    p.dropout_rate = dropout_rate;
    return p;
  }

  std::size_t num_layers() const { return layer_params.size(); }
};

// Query derived from the utterance itself: q = W_q [mu; sigma] with
// (mu, sigma) the plain statistics of the input sequence. One query per
// sequence.
template <typename S>
Tensor<S> input_aware_query(const Tensor<S>& h, const Tensor<S>& w_q) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("input_aware_query: expected nonempty [T x d] input");
  }
  pooling::PoolingStats<S> stats = pooling::statistics_pool(h);
  const std::size_t d_k = w_q.shape()[0];
  const std::size_t two_d = w_q.shape()[1];
  Tensor<S> pooled = stats.concatenated();  // [2d]
  if (pooled.size() != two_d) {
    throw std::invalid_argument("input_aware_query: pooled dim " +
                                std::to_string(pooled.size()) +
                                " does not match W_q " +
                                shape_to_string(w_q.shape()));
  }
  return reshape(matmul(w_q, reshape(pooled, {two_d, 1})), {d_k});
}

template <typename S>
struct AttentionModuleOut {
  Tensor<S> frames;               // [T x d], input plus broadcast residual
  pooling::PoolingStats<S> stats; // weighted stats of the normalized input
};

// Pre-normalized input-aware self-attention. The layer-normalized input x
// supplies query (via statistics pooling), keys (W_k x_t) and values (x_t
// itself). The affine-transformed weighted mean is added back to every
// frame; the (mu~, sigma~) pair feeds the layer's head.
template <typename S>
AttentionModuleOut<S> self_attention_module(const Tensor<S>& h,
                                            const SerializedLayerParams<S>& p,
                                            Mode mode, Rng& rng,
                                            double dropout_rate) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("self_attention_module: expected nonempty [T x d] input");
  }
  const std::size_t t_len = h.shape()[0];
  const std::size_t d_k = p.W_k.shape()[0];

  Tensor<S> x = layers::layer_norm(h, p.attn_norm);
  Tensor<S> q = input_aware_query(x, p.W_q);                      // [d_k]
  Tensor<S> keys = dense(x, layers::DenseParams<S>{p.W_k, {}});   // [T x d_k]
  Tensor<S> scores = matmul(keys, reshape(q, {d_k, 1}));          // [T x 1]
  scores = scale(reshape(scores, {t_len}), S(1.0 / std::sqrt(double(d_k))));
  Tensor<S> alpha = softmax_over_time(scores);
  pooling::PoolingStats<S> stats = pooling::weighted_stats(x, alpha);

  Tensor<S> res = dense(stats.mu, p.residual_affine);             // [d]
  res = layers::dropout(res, dropout_rate, mode, rng);
  Tensor<S> frames = add_row(h, res);
  return {frames, stats};
}

// Pre-normalized position-wise feed-forward:
// h + dropout(W2 relu(W1 layer_norm(h) + b1) + b2).
template <typename S>
Tensor<S> feed_forward_module(const Tensor<S>& h,
                              const SerializedLayerParams<S>& p, Mode mode,
                              Rng& rng, double dropout_rate) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("feed_forward_module: expected nonempty [T x d] input");
  }
  Tensor<S> z = layers::layer_norm(h, p.ffw_norm);
  Tensor<S> out = dense(relu(dense(z, p.ffw1)), p.ffw2);
  out = layers::dropout(out, dropout_rate, mode, rng);
  return add(h, out);
}

// Runs the stack and returns the sum of the per-layer heads: the
// extractable utterance embedding. The classifier applies ReLU + batch norm
// (emb_bn) on top of this value; extraction reads it as-is.
template <typename S>
Tensor<S> serialized_embed(const Tensor<S>& h, SerializedStackParams<S>& p,
                           Mode mode, Rng& rng) {
  if (p.num_layers() == 0) {
    throw std::invalid_argument("serialized_embed: empty stack");
  }
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("serialized_embed: expected nonempty [T x d] input");
  }
  Tensor<S> frames = h;
  Tensor<S> head_sum;
  for (auto& layer : p.layer_params) {
    AttentionModuleOut<S> attn =
        self_attention_module(frames, layer, mode, rng, p.dropout_rate);
    Tensor<S> head = dense(attn.stats.concatenated(), layer.head_affine);
    head_sum = head_sum.defined() ? add(head_sum, head) : head;
    frames = feed_forward_module(attn.frames, layer, mode, rng, p.dropout_rate);
  }
  return head_sum;
}

// Exact number of trainable scalars in one layer, by direct summation of
// parameter extents.
template <typename S>
std::size_t layer_parameter_count(const SerializedLayerParams<S>& p) {
  auto count = [](const Tensor<S>& t) { return t.defined() ? t.size() : 0; };
  return count(p.attn_norm.gain) + count(p.attn_norm.bias) + count(p.W_q) +
         count(p.W_k) + count(p.residual_affine.W) + count(p.residual_affine.b) +
         count(p.head_affine.W) + count(p.head_affine.b) + count(p.ffw_norm.gain) +
         count(p.ffw_norm.bias) + count(p.ffw1.W) + count(p.ffw1.b) +
         count(p.ffw2.W) + count(p.ffw2.b);
}

}  // namespace sev::serialized
