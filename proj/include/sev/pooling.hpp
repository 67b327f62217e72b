#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "sev/layers.hpp"
#include "sev/tensor.hpp"

namespace sev::pooling {

// Per-utterance first and second order statistics. sigma is elementwise
// nonnegative by construction (epsilon-guarded square root).
template <typename S>
struct PoolingStats {
  Tensor<S> mu;     // [d]
  Tensor<S> sigma;  // [d]

  Tensor<S> concatenated() const { return concat(mu, sigma); }
};

// Equal-weight mean and standard deviation over the time axis.
template <typename S>
PoolingStats<S> statistics_pool(const Tensor<S>& h) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("statistics_pool: expected nonempty [T x d] input");
  }
  Tensor<S> mu = reduce_mean(h, 0);
  Tensor<S> m2 = reduce_mean(mul(h, h), 0);
  Tensor<S> sigma = sqrt_guarded(sub(m2, mul(mu, mu)));
  return {mu, sigma};
}

// Weighted mean and weighted standard deviation. Weights must be
// nonnegative and sum to 1 within 1e-6 (validated in double so tolerance is
// independent of S).
template <typename S>
PoolingStats<S> weighted_stats(const Tensor<S>& h, const Tensor<S>& alpha) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("weighted_stats: expected nonempty [T x d] input");
  }
  const std::size_t t_len = h.shape()[0], d = h.shape()[1];
  if (alpha.rank() != 1 || alpha.size() != t_len) {
    throw std::invalid_argument("weighted_stats: weights " +
                                shape_to_string(alpha.shape()) +
                                " do not match " + std::to_string(t_len) +
                                " frames");
  }
  double sum = 0.0;
  for (S w : alpha.data()) {
    if (double(w) < -1e-9) {
      throw std::invalid_argument("weighted_stats: negative weight");
    }
    sum += double(w);
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("weighted_stats: weights sum to " +
                                std::to_string(sum) + ", expected 1");
  }
  Tensor<S> a = reshape(alpha, {1, t_len});
  Tensor<S> mu = reshape(matmul(a, h), {d});
  Tensor<S> m2 = reshape(matmul(a, mul(h, h)), {d});
  Tensor<S> sigma = sqrt_guarded(sub(m2, mul(mu, mu)));
  return {mu, sigma};
}

// Scoring network of attentive statistics pooling: per-frame scalar score
// e_t = v^T relu(W h_t + b) + k, softmax-normalized over frames.
template <typename S>
struct AttentiveStatParams {
  layers::DenseParams<S> score;  // W [a x d], b [a]
  Tensor<S> v;                   // [a]
  Tensor<S> k;                   // [1]

  static AttentiveStatParams init(std::size_t hidden, std::size_t d, Rng& rng) {
    AttentiveStatParams p;
    p.score = layers::DenseParams<S>::init(hidden, d, rng);
    p.v = layers::init_vector<S>(hidden, rng);
    p.k = Tensor<S>::zeros({1}, true);
    return p;
  }
};

template <typename S>
Tensor<S> attentive_scores(const Tensor<S>& h, const AttentiveStatParams<S>& p) {
  const std::size_t t_len = h.shape()[0];
  const std::size_t hidden = p.v.size();
  Tensor<S> u = relu(dense(h, p.score));                       // [T x a]
  Tensor<S> e = matmul(u, reshape(p.v, {hidden, 1}));          // [T x 1]
  e = add_row(e, p.k);                                         // + k
  return reshape(e, {t_len});
}

template <typename S>
PoolingStats<S> attentive_stats_pool(const Tensor<S>& h,
                                     const AttentiveStatParams<S>& p) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("attentive_stats_pool: expected nonempty [T x d] input");
  }
  Tensor<S> alpha = softmax_over_time(attentive_scores(h, p));
  return weighted_stats(h, alpha);
}

// Scaled dot-product pooling with a globally learned query. Keys come from a
// one-layer transform of `key_source` (defaults to the value sequence
// itself); values are the input frames untouched.
template <typename S>
struct SelfAttentivePoolParams {
  layers::DenseParams<S> key;  // [d_k x d_key_in]
  Tensor<S> q;                 // [d_k], trainable

  static SelfAttentivePoolParams init(std::size_t d_k, std::size_t key_in,
                                      Rng& rng) {
    SelfAttentivePoolParams p;
    p.key = layers::DenseParams<S>::init(d_k, key_in, rng);
    p.q = layers::init_vector<S>(d_k, rng);
    return p;
  }
};

template <typename S>
PoolingStats<S> self_attentive_pool(const Tensor<S>& h,
                                    const SelfAttentivePoolParams<S>& p,
                                    const Tensor<S>& key_source) {
  if (h.rank() != 2 || h.shape()[0] == 0) {
    throw std::invalid_argument("self_attentive_pool: expected nonempty [T x d] input");
  }
  if (key_source.shape()[0] != h.shape()[0]) {
    throw std::invalid_argument("self_attentive_pool: key source length " +
                                std::to_string(key_source.shape()[0]) +
                                " does not match " +
                                std::to_string(h.shape()[0]) + " frames");
  }
  const std::size_t t_len = h.shape()[0];
  const std::size_t d_k = p.q.size();
  Tensor<S> keys = dense(key_source, p.key);                     // [T x d_k]
  Tensor<S> scores = matmul(keys, reshape(p.q, {d_k, 1}));       // [T x 1]
  scores = scale(reshape(scores, {t_len}), S(1.0 / std::sqrt(double(d_k))));
  Tensor<S> alpha = softmax_over_time(scores);
  return weighted_stats(h, alpha);
}

template <typename S>
PoolingStats<S> self_attentive_pool(const Tensor<S>& h,
                                    const SelfAttentivePoolParams<S>& p) {
  return self_attentive_pool(h, p, h);
}

}  // namespace sev::pooling
