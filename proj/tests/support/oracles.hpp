#pragma once

// Independent reference implementations used as test oracles: plain loops
// over flat vectors, no Tensor machinery, no shared code with the library
// forward paths. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sev/serialized.hpp"
#include "sev/tensor.hpp"

namespace oracle {

inline constexpr double kEps = 1e-8;  // sqrt guard, mirrors the production value

// row-major T x d matrix as a flat vector
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
};

struct DenseRef {
  std::size_t out = 0, in = 0;
  std::vector<double> w;  // out x in
  std::vector<double> b;  // empty when no bias
};

struct NormRef {
  std::vector<double> gain, bias;
};

inline std::vector<double> dense_vec(const std::vector<double>& x,
                                     const DenseRef& p) {
  std::vector<double> y(p.out);
  for (std::size_t o = 0; o < p.out; ++o) {
    double acc = p.b.empty() ? 0.0 : p.b[o];
    for (std::size_t i = 0; i < p.in; ++i) acc += p.w[o * p.in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline Mat dense_mat(const Mat& x, const DenseRef& p) {
  Mat y{x.rows, p.out, std::vector<double>(x.rows * p.out)};
  for (std::size_t t = 0; t < x.rows; ++t) {
    std::vector<double> row(x.v.begin() + t * x.cols, x.v.begin() + (t + 1) * x.cols);
    const auto out = dense_vec(row, p);
    std::copy(out.begin(), out.end(), y.v.begin() + t * p.out);
  }
  return y;
}

inline Mat layer_norm(const Mat& x, const NormRef& p) {
  Mat y = x;
  for (std::size_t t = 0; t < x.rows; ++t) {
    double m = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) m += x.at(t, j);
    m /= double(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      var += (x.at(t, j) - m) * (x.at(t, j) - m);
    }
    var /= double(x.cols);
    const double r = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < x.cols; ++j) {
      y.at(t, j) = (x.at(t, j) - m) * r * p.gain[j] + p.bias[j];
    }
  }
  return y;
}

inline std::vector<double> softmax(const std::vector<double>& e) {
  const double mx = *std::max_element(e.begin(), e.end());
  std::vector<double> a(e.size());
  double z = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    a[i] = std::exp(e[i] - mx);
    z += a[i];
  }
  for (auto& v : a) v /= z;
  return a;
}

inline void stats(const Mat& h, std::vector<double>& mu, std::vector<double>& sigma) {
  mu.assign(h.cols, 0.0);
  sigma.assign(h.cols, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    for (std::size_t j = 0; j < h.cols; ++j) {
      mu[j] += h.at(t, j);
      sigma[j] += h.at(t, j) * h.at(t, j);
    }
  }
  for (std::size_t j = 0; j < h.cols; ++j) {
    mu[j] /= double(h.rows);
    const double m2 = sigma[j] / double(h.rows);
    sigma[j] = std::sqrt(std::max(0.0, m2 - mu[j] * mu[j] + kEps));
  }
}

inline void weighted_stats(const Mat& h, const std::vector<double>& alpha,
                           std::vector<double>& mu, std::vector<double>& sigma) {
  mu.assign(h.cols, 0.0);
  sigma.assign(h.cols, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    for (std::size_t j = 0; j < h.cols; ++j) {
      mu[j] += alpha[t] * h.at(t, j);
      sigma[j] += alpha[t] * h.at(t, j) * h.at(t, j);
    }
  }
  for (std::size_t j = 0; j < h.cols; ++j) {
    sigma[j] = std::sqrt(std::max(0.0, sigma[j] - mu[j] * mu[j] + kEps));
  }
}

// one serialized layer, plain copies of the production parameters
struct LayerRef {
  std::size_t d = 0, d_k = 0, d_ff = 0, d_emb = 0;
  NormRef attn_norm;
  std::vector<double> w_q;  // d_k x 2d
  std::vector<double> w_k;  // d_k x d
  DenseRef residual, head;
  NormRef ffw_norm;
  DenseRef ffw1, ffw2;
};

struct AttentionOut {
  Mat frames;
  std::vector<double> mu, sigma;
};

inline AttentionOut attention_module(const Mat& h, const LayerRef& p) {
  const Mat x = layer_norm(h, p.attn_norm);
  std::vector<double> mu, sg;
  stats(x, mu, sg);
  std::vector<double> pooled(mu);
  pooled.insert(pooled.end(), sg.begin(), sg.end());
  std::vector<double> q(p.d_k, 0.0);
  for (std::size_t k = 0; k < p.d_k; ++k) {
    for (std::size_t j = 0; j < 2 * p.d; ++j) {
      q[k] += p.w_q[k * 2 * p.d + j] * pooled[j];
    }
  }
  std::vector<double> scores(h.rows, 0.0);
  for (std::size_t t = 0; t < h.rows; ++t) {
    for (std::size_t k = 0; k < p.d_k; ++k) {
      double key = 0.0;
      for (std::size_t j = 0; j < p.d; ++j) key += p.w_k[k * p.d + j] * x.at(t, j);
      scores[t] += q[k] * key;
    }
    scores[t] /= std::sqrt(double(p.d_k));
  }
  const std::vector<double> alpha = softmax(scores);

  AttentionOut out;
  weighted_stats(x, alpha, out.mu, out.sigma);
  const std::vector<double> res = dense_vec(out.mu, p.residual);
  out.frames = h;
  for (std::size_t t = 0; t < h.rows; ++t) {
    for (std::size_t j = 0; j < h.cols; ++j) out.frames.at(t, j) += res[j];
  }
  return out;
}

inline Mat ffw_module(const Mat& h, const LayerRef& p) {
  const Mat z = layer_norm(h, p.ffw_norm);
  Mat out = h;
  for (std::size_t t = 0; t < h.rows; ++t) {
    std::vector<double> row(z.v.begin() + t * z.cols, z.v.begin() + (t + 1) * z.cols);
    std::vector<double> inner = dense_vec(row, p.ffw1);
    for (auto& v : inner) v = std::max(0.0, v);
    const std::vector<double> o = dense_vec(inner, p.ffw2);
    for (std::size_t j = 0; j < h.cols; ++j) out.at(t, j) += o[j];
  }
  return out;
}

// serialized stack: sum of per-layer heads (pre-activation embedding)
inline std::vector<double> serialized_embed(const Mat& h,
                                            const std::vector<LayerRef>& layers) {
  Mat frames = h;
  std::vector<double> sum(layers.front().d_emb, 0.0);
  for (const auto& p : layers) {
    const AttentionOut attn = attention_module(frames, p);
    std::vector<double> pooled(attn.mu);
    pooled.insert(pooled.end(), attn.sigma.begin(), attn.sigma.end());
    const std::vector<double> head = dense_vec(pooled, p.head);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += head[j];
    frames = ffw_module(attn.frames, p);
  }
  return sum;
}

// conversions from production parameters

template <typename S>
DenseRef dense_ref(const sev::layers::DenseParams<S>& p) {
  DenseRef r;
  r.out = p.out_dim();
  r.in = p.in_dim();
  r.w.assign(p.W.data().begin(), p.W.data().end());
  if (p.b.defined()) r.b.assign(p.b.data().begin(), p.b.data().end());
  return r;
}

template <typename S>
NormRef norm_ref(const sev::layers::NormParams<S>& p) {
  return {std::vector<double>(p.gain.data().begin(), p.gain.data().end()),
          std::vector<double>(p.bias.data().begin(), p.bias.data().end())};
}

template <typename S>
LayerRef layer_ref(const sev::serialized::SerializedLayerParams<S>& p) {
  LayerRef r;
  r.d = p.W_k.shape()[1];
  r.d_k = p.W_k.shape()[0];
  r.d_ff = p.ffw1.out_dim();
  r.d_emb = p.head_affine.out_dim();
  r.attn_norm = norm_ref(p.attn_norm);
  r.w_q.assign(p.W_q.data().begin(), p.W_q.data().end());
  r.w_k.assign(p.W_k.data().begin(), p.W_k.data().end());
  r.residual = dense_ref(p.residual_affine);
  r.head = dense_ref(p.head_affine);
  r.ffw_norm = norm_ref(p.ffw_norm);
  r.ffw1 = dense_ref(p.ffw1);
  r.ffw2 = dense_ref(p.ffw2);
  return r;
}

template <typename S>
Mat mat_of(const sev::Tensor<S>& t) {
  Mat m;
  m.rows = t.shape()[0];
  m.cols = t.shape()[1];
  m.v.assign(t.data().begin(), t.data().end());
  return m;
}

// ---------------------------------------------------------------------------
// brute-force detection metrics
// ---------------------------------------------------------------------------

struct Rates {
  double far = 0.0, frr = 0.0;
};

inline Rates rates_at(const std::vector<double>& targets,
                      const std::vector<double>& nontargets, double th) {
  std::size_t fa = 0, fr = 0;
  for (double s : nontargets) fa += s >= th;
  for (double s : targets) fr += s < th;
  return {double(fa) / double(nontargets.size()),
          double(fr) / double(targets.size())};
}

// Exhaustive threshold sweep over every score breakpoint with linear
// interpolation at the FAR/FRR crossing.
inline double eer_bruteforce(const std::vector<double>& targets,
                             const std::vector<double>& nontargets) {
  std::vector<double> thresholds(targets);
  thresholds.insert(thresholds.end(), nontargets.begin(), nontargets.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  Rates prev{1.0, 0.0};
  for (double th : thresholds) {
    const Rates cur = rates_at(targets, nontargets, th);
    if (cur.frr >= cur.far) {
      const double dp = prev.far - prev.frr;
      const double dc = cur.frr - cur.far;
      const double t = dp + dc > 0.0 ? dp / (dp + dc) : 0.0;
      return prev.far + t * (cur.far - prev.far);
    }
    prev = cur;
  }
  const double dp = prev.far - prev.frr;
  const double t = dp + 1.0 > 0.0 ? dp / (dp + 1.0) : 0.0;
  return prev.far + t * (0.0 - prev.far);
}

inline double min_dcf_bruteforce(const std::vector<double>& targets,
                                 const std::vector<double>& nontargets,
                                 double p_target, double c_miss = 1.0,
                                 double c_fa = 1.0) {
  std::vector<double> thresholds(targets);
  thresholds.insert(thresholds.end(), nontargets.begin(), nontargets.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  auto cost = [&](const Rates& r) {
    return c_miss * r.frr * p_target + c_fa * r.far * (1.0 - p_target);
  };
  double best = std::min(cost({1.0, 0.0}), cost({0.0, 1.0}));
  for (double th : thresholds) {
    best = std::min(best, cost(rates_at(targets, nontargets, th)));
  }
  return best / std::min(c_miss * p_target, c_fa * (1.0 - p_target));
}

}  // namespace oracle
