#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sev/rng.hpp"
#include "sev/tensor.hpp"

namespace sev::layers {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Variance-preserving uniform init, bound sqrt(6/(in+out)).
template <typename S>
Tensor<S> init_weight(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(in + out));
  std::vector<S> w(out * in);
  for (auto& v : w) v = S(rng.uniform(-bound, bound));
  return Tensor<S>::from_data({out, in}, std::move(w), true);
}

// Rank-1 trainable leaf with the same init, treated as a 1 x n projection.
template <typename S>
Tensor<S> init_vector(std::size_t n, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(n + 1));
  std::vector<S> w(n);
  for (auto& v : w) v = S(rng.uniform(-bound, bound));
  return Tensor<S>::from_data({n}, std::move(w), true);
}

template <typename S>
struct DenseParams {
  Tensor<S> W;  // [out x in]
  Tensor<S> b;  // [out]; undefined when the layer has no bias

  static DenseParams init(std::size_t out, std::size_t in, Rng& rng,
                          bool bias = true) {
    DenseParams p;
    p.W = init_weight<S>(out, in, rng);
    if (bias) p.b = Tensor<S>::zeros({out}, true);
    return p;
  }

  std::size_t out_dim() const { return W.shape()[0]; }
  std::size_t in_dim() const { return W.shape()[1]; }
};

// y = x W^T + b along the trailing dim. Accepts [T x in] or a bare [in]
// vector (returns [T x out] or [out] respectively).
template <typename S>
Tensor<S> dense(const Tensor<S>& x, const DenseParams<S>& p) {
  const std::size_t out = p.out_dim(), in = p.in_dim();
  const bool vec = x.rank() == 1;
  if ((vec && x.size() != in) || (!vec && (x.rank() != 2 || x.shape()[1] != in))) {
    throw std::invalid_argument("dense: input " + shape_to_string(x.shape()) +
                                " does not match weight " +
                                shape_to_string(p.W.shape()));
  }
  const std::size_t rows = vec ? 1 : x.shape()[0];
  const bool has_bias = p.b.defined();
  std::vector<S> y(rows * out);
  {
    auto dx = x.data();
    auto dw = p.W.data();
    const S* db = has_bias ? p.b.data().data() : nullptr;
    for (std::size_t t = 0; t < rows; ++t) {
      for (std::size_t o = 0; o < out; ++o) {
        S acc = db ? db[o] : S(0);
        const S* xr = dx.data() + t * in;
        const S* wr = dw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
        y[t * out + o] = acc;
      }
    }
  }
  Shape out_shape = vec ? Shape{out} : Shape{rows, out};
  std::vector<Tensor<S>> inputs{x, p.W};
  if (has_bias) inputs.push_back(p.b);
  return make_op<S>(
      "dense", std::move(out_shape), std::move(y), std::move(inputs),
      [rows, out, in](detail::Node<S>& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        detail::Node<S>* pb = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
        for (std::size_t t = 0; t < rows; ++t) {
          const S* g = n.grad.data() + t * out;
          if (px.requires_grad) {
            S* gx = px.grad.data() + t * in;
            for (std::size_t o = 0; o < out; ++o) {
              const S go = g[o];
              const S* wr = pw.data.data() + o * in;
              for (std::size_t i = 0; i < in; ++i) gx[i] += go * wr[i];
            }
          }
          if (pw.requires_grad) {
            const S* xr = px.data.data() + t * in;
            for (std::size_t o = 0; o < out; ++o) {
              const S go = g[o];
              S* gw = pw.grad.data() + o * in;
              for (std::size_t i = 0; i < in; ++i) gw[i] += go * xr[i];
            }
          }
          if (pb && pb->requires_grad) {
            for (std::size_t o = 0; o < out; ++o) pb->grad[o] += g[o];
          }
        }
      });
}

// Gain/bias of a normalization layer; batch norm additionally carries
// running statistics (non-trainable state, updated in train mode).
template <typename S>
struct NormParams {
  Tensor<S> gain;
  Tensor<S> bias;
  Tensor<S> running_mean;  // batch norm only
  Tensor<S> running_var;   // batch norm only

  static NormParams layer_norm_init(std::size_t d) {
    NormParams p;
    p.gain = Tensor<S>::full({d}, S(1), true);
    p.bias = Tensor<S>::zeros({d}, true);
    return p;
  }

  static NormParams batch_norm_init(std::size_t d) {
    NormParams p = layer_norm_init(d);
    p.running_mean = Tensor<S>::zeros({d});
    p.running_var = Tensor<S>::full({d}, S(1));
    return p;
  }

  std::size_t dim() const { return gain.shape()[0]; }
};

// Per-position normalization over the feature dim to zero mean / unit
// variance, then gain and bias. Accepts [T x d] or [d].
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const NormParams<S>& p) {
  const std::size_t d = p.dim();
  const bool vec = x.rank() == 1;
  if ((vec && x.size() != d) || (!vec && (x.rank() != 2 || x.shape()[1] != d))) {
    throw std::invalid_argument("layer_norm: input " +
                                shape_to_string(x.shape()) +
                                " does not match dim " + std::to_string(d));
  }
  const std::size_t rows = vec ? 1 : x.shape()[0];
  std::vector<S> y(rows * d);
  std::vector<S> inv_std(rows);
  std::vector<S> mean(rows);
  {
    auto dx = x.data();
    auto dg = p.gain.data();
    auto db = p.bias.data();
    for (std::size_t t = 0; t < rows; ++t) {
      const S* xr = dx.data() + t * d;
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += double(xr[j]);
      m /= double(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = double(xr[j]) - m;
        var += c * c;
      }
      var /= double(d);
      const double r = 1.0 / std::sqrt(var + kSqrtEps);
      mean[t] = S(m);
      inv_std[t] = S(r);
      for (std::size_t j = 0; j < d; ++j) {
        const double xh = (double(xr[j]) - m) * r;
        y[t * d + j] = S(xh * double(dg[j]) + double(db[j]));
      }
    }
  }
  return make_op<S>(
      "layer_norm", x.shape(), std::move(y), {x, p.gain, p.bias},
      [rows, d, mean = std::move(mean),
       inv_std = std::move(inv_std)](detail::Node<S>& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        for (std::size_t t = 0; t < rows; ++t) {
          const S* g = n.grad.data() + t * d;
          const S* xr = px.data.data() + t * d;
          const double m = double(mean[t]);
          const double r = double(inv_std[t]);
          double sum_gh = 0.0, sum_ghxh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xh = (double(xr[j]) - m) * r;
            const double gh = double(g[j]) * double(pg.data[j]);
            sum_gh += gh;
            sum_ghxh += gh * xh;
            if (pg.requires_grad) pg.grad[j] += S(double(g[j]) * xh);
            if (pb.requires_grad) pb.grad[j] += g[j];
          }
          if (px.requires_grad) {
            for (std::size_t j = 0; j < d; ++j) {
              const double xh = (double(xr[j]) - m) * r;
              const double gh = double(g[j]) * double(pg.data[j]);
              px.grad[t * d + j] +=
                  S(r * (gh - sum_gh / double(d) - xh * sum_ghxh / double(d)));
            }
          }
        }
      });
}

// Batch normalization over the leading axis of a [B x d] input. Train mode
// normalizes by (biased) batch statistics and momentum-blends them into the
// running stats; eval mode normalizes by the running stats.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, NormParams<S>& p, Mode mode,
                     double momentum = kBatchNormMomentum,
                     double eps = kBatchNormEps) {
  const std::size_t d = p.dim();
  if (x.rank() != 2 || x.shape()[1] != d) {
    throw std::invalid_argument("batch_norm: input " +
                                shape_to_string(x.shape()) +
                                " does not match dim " + std::to_string(d));
  }
  const std::size_t b_count = x.shape()[0];
  if (mode == Mode::train && b_count < 2) {
    throw std::invalid_argument(
        "batch_norm: train mode requires batch size >= 2, got " +
        std::to_string(b_count));
  }

  std::vector<S> y(b_count * d);
  auto dx = x.data();
  auto dg = p.gain.data();
  auto db = p.bias.data();

  if (mode == Mode::eval) {
    std::vector<S> rinv(d);
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (std::size_t j = 0; j < d; ++j) {
      rinv[j] = S(1.0 / std::sqrt(double(rv[j]) + eps));
    }
    for (std::size_t b = 0; b < b_count; ++b) {
      for (std::size_t j = 0; j < d; ++j) {
        y[b * d + j] = S((double(dx[b * d + j]) - double(rm[j])) *
                             double(rinv[j]) * double(dg[j]) +
                         double(db[j]));
      }
    }
    return make_op<S>(
        "batch_norm_eval", x.shape(), std::move(y), {x, p.gain, p.bias},
        [b_count, d, rinv = std::move(rinv),
         rm_copy = std::vector<S>(p.running_mean.data().begin(),
                                  p.running_mean.data().end())](
            detail::Node<S>& n) {
          auto& px = *n.parents[0];
          auto& pg = *n.parents[1];
          auto& pb = *n.parents[2];
          for (std::size_t b = 0; b < b_count; ++b) {
            for (std::size_t j = 0; j < d; ++j) {
              const S g = n.grad[b * d + j];
              if (px.requires_grad) {
                px.grad[b * d + j] += g * pg.data[j] * rinv[j];
              }
              if (pg.requires_grad) {
                const S xh = (px.data[b * d + j] - rm_copy[j]) * rinv[j];
                pg.grad[j] += g * xh;
              }
              if (pb.requires_grad) pb.grad[j] += g;
            }
          }
        });
  }

  // train mode
  std::vector<S> bmean(d), binv(d);
  {
    auto rm = p.running_mean.data_mut();
    auto rv = p.running_var.data_mut();
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t b = 0; b < b_count; ++b) m += double(dx[b * d + j]);
      m /= double(b_count);
      double var = 0.0;
      for (std::size_t b = 0; b < b_count; ++b) {
        const double c = double(dx[b * d + j]) - m;
        var += c * c;
      }
      var /= double(b_count);
      bmean[j] = S(m);
      binv[j] = S(1.0 / std::sqrt(var + eps));
      rm[j] = S((1.0 - momentum) * double(rm[j]) + momentum * m);
      rv[j] = S((1.0 - momentum) * double(rv[j]) + momentum * var);
    }
    for (std::size_t b = 0; b < b_count; ++b) {
      for (std::size_t j = 0; j < d; ++j) {
        const double xh = (double(dx[b * d + j]) - double(bmean[j])) * double(binv[j]);
        y[b * d + j] = S(xh * double(dg[j]) + double(db[j]));
      }
    }
  }
  return make_op<S>(
      "batch_norm", x.shape(), std::move(y), {x, p.gain, p.bias},
      [b_count, d, bmean = std::move(bmean),
       binv = std::move(binv)](detail::Node<S>& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        for (std::size_t j = 0; j < d; ++j) {
          const double m = double(bmean[j]);
          const double r = double(binv[j]);
          double sum_gh = 0.0, sum_ghxh = 0.0;
          for (std::size_t b = 0; b < b_count; ++b) {
            const double xh = (double(px.data[b * d + j]) - m) * r;
            const double gh = double(n.grad[b * d + j]) * double(pg.data[j]);
            sum_gh += gh;
            sum_ghxh += gh * xh;
            if (pg.requires_grad) pg.grad[j] += S(double(n.grad[b * d + j]) * xh);
            if (pb.requires_grad) pb.grad[j] += n.grad[b * d + j];
          }
          if (px.requires_grad) {
            for (std::size_t b = 0; b < b_count; ++b) {
              const double xh = (double(px.data[b * d + j]) - m) * r;
              const double gh = double(n.grad[b * d + j]) * double(pg.data[j]);
              px.grad[b * d + j] += S(r * (gh - sum_gh / double(b_count) -
                                           xh * sum_ghxh / double(b_count)));
            }
          }
        }
      });
}

// Inverted dropout: zeroes each element with probability `rate` in train
// mode and scales survivors by 1/(1-rate); identity in eval mode.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const S inv = S(1.0 / (1.0 - rate));
  std::vector<S> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? S(0) : inv;
  std::vector<S> y(x.size());
  auto dx = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = dx[i] * mask[i];
  return make_op<S>("dropout", x.shape(), std::move(y), {x},
                    [mask = std::move(mask)](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        p.grad[i] += n.grad[i] * mask[i];
                      }
                    });
}

// Mean negative log softmax probability of the true class, computed with
// log-sum-exp stabilization. Gradient is (softmax(logits) - one_hot)/B.
template <typename S>
Tensor<S> cross_entropy_softmax(const Tensor<S>& logits,
                                const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy_softmax: expected [B x S] logits, got " +
                                shape_to_string(logits.shape()));
  }
  const std::size_t b_count = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != b_count) {
    throw std::invalid_argument("cross_entropy_softmax: " +
                                std::to_string(labels.size()) + " labels for " +
                                std::to_string(b_count) + " rows");
  }
  std::vector<S> probs(b_count * classes);
  double total = 0.0;
  auto dz = logits.data();
  for (std::size_t b = 0; b < b_count; ++b) {
    const int label = labels[b];
    if (label < 0 || std::size_t(label) >= classes) {
      throw std::invalid_argument("cross_entropy_softmax: label " +
                                  std::to_string(label) + " out of range [0, " +
                                  std::to_string(classes) + ") at row " +
                                  std::to_string(b));
    }
    const S* row = dz.data() + b * classes;
    double mx = double(row[0]);
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, double(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(double(row[j]) - mx);
    const double lse = mx + std::log(z);
    total += lse - double(row[label]);
    for (std::size_t j = 0; j < classes; ++j) {
      probs[b * classes + j] = S(std::exp(double(row[j]) - lse));
    }
  }
  const S loss = S(total / double(b_count));
  return make_op<S>(
      "cross_entropy_softmax", {1}, {loss}, {logits},
      [b_count, classes, labels, probs = std::move(probs)](detail::Node<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        const S g = n.grad[0] / S(b_count);
        for (std::size_t b = 0; b < b_count; ++b) {
          for (std::size_t j = 0; j < classes; ++j) {
            const S onehot = std::size_t(labels[b]) == j ? S(1) : S(0);
            p.grad[b * classes + j] += g * (probs[b * classes + j] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// time-delay layer
// ---------------------------------------------------------------------------

template <typename S>
struct TdnnLayerParams {
  std::vector<int> context;  // strictly increasing offsets
  DenseParams<S> affine;     // [out x (in * |context|)]
  NormParams<S> bn;
  bool activation = true;  // ReLU + batch norm after the affine

  static TdnnLayerParams init(std::vector<int> context, std::size_t out,
                              std::size_t in, Rng& rng, bool activation = true) {
    for (std::size_t i = 1; i < context.size(); ++i) {
      if (context[i] <= context[i - 1]) {
        throw std::invalid_argument("tdnn: context offsets must be strictly increasing");
      }
    }
    TdnnLayerParams p;
    p.affine = DenseParams<S>::init(out, in * context.size(), rng);
    p.context = std::move(context);
    if (activation) p.bn = NormParams<S>::batch_norm_init(out);
    p.activation = activation;
    return p;
  }
};

// Splices context frames (edge-replicated), applies the affine, then ReLU +
// batch norm over the time axis unless the layer is a bare projection.
// Output length always equals input length.
template <typename S>
Tensor<S> tdnn_forward(const Tensor<S>& x, TdnnLayerParams<S>& p, Mode mode) {
  if (x.rank() != 2 || x.shape()[0] == 0) {
    throw std::invalid_argument("tdnn_forward: expected nonempty [T x d] input");
  }
  Tensor<S> h = dense(time_gather(x, p.context), p.affine);
  if (!p.activation) return h;
  return batch_norm(relu(h), p.bn, mode);
}

}  // namespace sev::layers
