#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sev {

enum class Mode { train, eval };

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Guard added under every square root so zero variance stays differentiable.
inline constexpr double kSqrtEps = 1e-8;

namespace debug {

// Count of sqrt inputs that were negative beyond the epsilon guard.
inline std::atomic<std::uint64_t>& sqrt_clamp_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

// When enabled, every op output is scanned for NaN/Inf. On by default in
// debug builds only.
inline bool& finite_checks() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

}  // namespace debug

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // same length as data when requires_grad
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

// Dense n-dimensional value participating in a define-by-run reverse-mode
// graph. Copying a Tensor copies a handle, not the storage; the graph is
// rebuilt on every forward pass and freed when the last handle to its
// output goes away. Leaf tensors (parameters) persist across passes.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<S> data,
                          bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor: shape " + shape_to_string(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
    }
    auto n = std::make_shared<detail::Node<S>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    validate_shape(shape);
    std::vector<S> data(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  // Internal: wrap an already-built node.
  static Tensor attach(std::shared_ptr<detail::Node<S>> node) {
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const S> data() const { return node_->data; }
  std::span<S> data_mut() { return node_->data; }
  std::span<const S> grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->ensure_grad();
    return *this;
  }

  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  S item() const {
    if (size() != 1) {
      throw std::invalid_argument("item: tensor " + shape_to_string(shape()) +
                                  " is not a scalar");
    }
    return node_->data[0];
  }

  S at(std::size_t i) const { return node_->data.at(i); }

  S at(std::size_t i, std::size_t j) const {
    if (rank() != 2) {
      throw std::invalid_argument("at(i,j): tensor is not rank 2");
    }
    return node_->data.at(i * shape()[1] + j);
  }

  std::shared_ptr<detail::Node<S>> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : node_(std::move(n)) {}

  static void validate_shape(const Shape& shape) {
    for (auto e : shape) {
      if (e == 0) {
        throw std::invalid_argument("tensor: zero extent in shape " +
                                    shape_to_string(shape));
      }
    }
  }

  std::shared_ptr<detail::Node<S>> node_;
};

namespace detail {

template <typename S>
void check_finite(const Node<S>& n) {
  for (S v : n.data) {
    if (!std::isfinite(double(v))) {
      throw std::logic_error(std::string("non-finite value produced by op '") +
                             n.op + "'");
    }
  }
}

}  // namespace detail

// Builds an op node. `backprop` receives the finished node and must add into
// parents' grad buffers (guarding on each parent's requires_grad). Parents
// and the closure are only retained when some input requires grad.
template <typename S>
Tensor<S> make_op(const char* name, Shape shape, std::vector<S> data,
                  std::vector<Tensor<S>> inputs,
                  std::function<void(detail::Node<S>&)> backprop) {
  auto n = std::make_shared<detail::Node<S>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = name;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.node()->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->ensure_grad();
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backprop = std::move(backprop);
  }
  if (debug::finite_checks()) detail::check_finite(*n);
  return Tensor<S>::attach(std::move(n));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Populates d(loss)/d(tensor) for every requires_grad tensor reachable from
// `loss`. Gradients accumulate additively when a tensor feeds multiple
// consumers. Calling twice on the same graph is an error: rebuild the
// forward pass (or zero_grad the leaves) first.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  auto root = loss.node();
  if (root->data.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_to_string(root->shape));
  }
  if (root->backward_done) {
    throw std::logic_error(
        "backward: already called on this graph; rebuild the forward pass");
  }
  root->backward_done = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversed post-order is a topological order,
  // so each node's grad is complete before its backprop runs.
  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> visited;
  std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
  visited.insert(root.get());
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<S>* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<S> out(a.size());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_op<S>("add", a.shape(), std::move(out), {a, b},
                    [](detail::Node<S>& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        if (pa.requires_grad) pa.grad[i] += n.grad[i];
                        if (pb.requires_grad) pb.grad[i] += n.grad[i];
                      }
                    });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<S> out(a.size());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_op<S>("sub", a.shape(), std::move(out), {a, b},
                    [](detail::Node<S>& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        if (pa.requires_grad) pa.grad[i] += n.grad[i];
                        if (pb.requires_grad) pb.grad[i] -= n.grad[i];
                      }
                    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<S> out(a.size());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_op<S>("mul", a.shape(), std::move(out), {a, b},
                    [](detail::Node<S>& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.data[i];
                        if (pb.requires_grad) pb.grad[i] += n.grad[i] * pa.data[i];
                      }
                    });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] > S(0) ? dx[i] : S(0);
  return make_op<S>("relu", x.shape(), std::move(out), {x},
                    [](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        if (p.data[i] > S(0)) p.grad[i] += n.grad[i];
                      }
                    });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = S(std::tanh(double(dx[i])));
  return make_op<S>("tanh", x.shape(), std::move(out), {x},
                    [](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        const S y = n.data[i];
                        p.grad[i] += n.grad[i] * (S(1) - y * y);
                      }
                    });
}

// sqrt(x + eps), the variance -> standard deviation path. Inputs negative
// beyond the guard are clamped to zero and counted in a debug statistic; the
// gradient through a clamped element is zero.
template <typename S>
Tensor<S> sqrt_guarded(const Tensor<S>& x, S eps = S(kSqrtEps)) {
  std::vector<S> out(x.size());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    S u = dx[i] + eps;
    if (u < S(0)) {
      u = S(0);
      debug::sqrt_clamp_count().fetch_add(1, std::memory_order_relaxed);
    }
    out[i] = S(std::sqrt(double(u)));
  }
  return make_op<S>("sqrt", x.shape(), std::move(out), {x},
                    [eps](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        if (p.data[i] + eps > S(0)) {
                          p.grad[i] += n.grad[i] / (S(2) * n.data[i]);
                        }
                      }
                    });
}

// y = c * x (scalar broadcast).
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  std::vector<S> out(x.size());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * dx[i];
  return make_op<S>("scale", x.shape(), std::move(out), {x},
                    [c](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        p.grad[i] += c * n.grad[i];
                      }
                    });
}

// Adds a length-d row vector to every row of a [T x d] matrix.
template <typename S>
Tensor<S> add_row(const Tensor<S>& m, const Tensor<S>& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.shape()[1] != v.shape()[0]) {
    throw std::invalid_argument("add_row: incompatible shapes " +
                                shape_to_string(m.shape()) + " and " +
                                shape_to_string(v.shape()));
  }
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<S> out(m.size());
  auto dm = m.data(), dv = v.data();
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t j = 0; j < cols; ++j) out[t * cols + j] = dm[t * cols + j] + dv[j];
  }
  return make_op<S>("add_row", m.shape(), std::move(out), {m, v},
                    [rows, cols](detail::Node<S>& n) {
                      auto& pm = *n.parents[0];
                      auto& pv = *n.parents[1];
                      for (std::size_t t = 0; t < rows; ++t) {
                        for (std::size_t j = 0; j < cols; ++j) {
                          const S g = n.grad[t * cols + j];
                          if (pm.requires_grad) pm.grad[t * cols + j] += g;
                          if (pv.requires_grad) pv.grad[j] += g;
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: operands must be rank 2, got " +
                                shape_to_string(a.shape()) + " and " +
                                shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  std::vector<S> out(m * n, S(0));
  {
    auto da = a.data(), db = b.data();
    // double accumulation keeps reductions insensitive to operand ordering
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = double(da[i * k + p]);
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(db[p * n + j]);
      }
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = S(acc[j]);
    }
  }
  return make_op<S>(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<S>& n_) {
        auto& pa = *n_.parents[0];
        auto& pb = *n_.parents[1];
        if (pa.requires_grad) {
          // dA = dC . B^T
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                acc += double(n_.grad[i * n + j]) * double(pb.data[p * n + j]);
              }
              pa.grad[i * k + p] += S(acc);
            }
          }
        }
        if (pb.requires_grad) {
          // dB = A^T . dC
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const S av = pa.data[i * k + p];
              for (std::size_t j = 0; j < n; ++j) {
                pb.grad[p * n + j] += av * n_.grad[i * n + j];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Tensor<S> reduce_impl(const Tensor<S>& x, std::size_t axis, bool mean) {
  if (axis >= x.rank()) {
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) +
                                " out of range for " +
                                shape_to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];

  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};

  std::vector<S> out(outer * inner);
  auto dx = x.data();
  const double inv = mean ? 1.0 / double(extent) : 1.0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (std::size_t a = 0; a < extent; ++a) {
        acc += double(dx[(o * extent + a) * inner + i]);
      }
      out[o * inner + i] = S(acc * inv);
    }
  }
  const S gscale = S(inv);
  return make_op<S>(mean ? "reduce_mean" : "reduce_sum", std::move(out_shape),
                    std::move(out), {x},
                    [outer, inner, extent, gscale](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t a = 0; a < extent; ++a) {
                          for (std::size_t i = 0; i < inner; ++i) {
                            p.grad[(o * extent + a) * inner + i] +=
                                gscale * n.grad[o * inner + i];
                          }
                        }
                      }
                    });
}

}  // namespace detail

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x, std::size_t axis) {
  return detail::reduce_impl(x, axis, true);
}

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x, std::size_t axis) {
  return detail::reduce_impl(x, axis, false);
}

// Sum of all elements -> scalar.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  double acc = 0.0;
  for (S v : x.data()) acc += double(v);
  return make_op<S>("sum_all", {1}, {S(acc)}, {x}, [](detail::Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    const S g = n.grad[0];
    for (auto& gv : p.grad) gv += g;
  });
}

// ---------------------------------------------------------------------------
// softmax over the temporal axis
// ---------------------------------------------------------------------------

// Rank-1 softmax, numerically stabilized by max subtraction. Scores must be
// finite. Output is nonnegative and sums to 1 within 1e-6 (internal
// computation is double regardless of S so the stored sum deviates only by
// per-element cast error).
template <typename S>
Tensor<S> softmax_over_time(const Tensor<S>& scores) {
  if (scores.rank() != 1) {
    throw std::invalid_argument("softmax_over_time: expected rank-1 scores, got " +
                                shape_to_string(scores.shape()));
  }
  const std::size_t t_len = scores.size();
  auto ds = scores.data();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t_len; ++i) {
    if (!std::isfinite(double(ds[i]))) {
      throw std::invalid_argument("softmax_over_time: non-finite score");
    }
    mx = std::max(mx, double(ds[i]));
  }
  std::vector<double> e(t_len);
  double z = 0.0;
  for (std::size_t i = 0; i < t_len; ++i) {
    e[i] = std::exp(double(ds[i]) - mx);
    z += e[i];
  }
  std::vector<S> out(t_len);
  for (std::size_t i = 0; i < t_len; ++i) out[i] = S(e[i] / z);
  return make_op<S>("softmax_over_time", scores.shape(), std::move(out),
                    {scores}, [](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      double dot = 0.0;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        dot += double(n.grad[i]) * double(n.data[i]);
                      }
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        p.grad[i] += S(double(n.data[i]) * (double(n.grad[i]) - dot));
                      }
                    });
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " +
                                shape_to_string(x.shape()) + " as " +
                                shape_to_string(shape));
  }
  std::vector<S> out(x.data().begin(), x.data().end());
  return make_op<S>("reshape", std::move(shape), std::move(out), {x},
                    [](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        p.grad[i] += n.grad[i];
                      }
                    });
}

// Concatenation of two rank-1 tensors.
template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw std::invalid_argument("concat: expected rank-1 operands, got " +
                                shape_to_string(a.shape()) + " and " +
                                shape_to_string(b.shape()));
  }
  const std::size_t p = a.size(), q = b.size();
  std::vector<S> out(p + q);
  std::copy(a.data().begin(), a.data().end(), out.begin());
  std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<std::ptrdiff_t>(p));
  return make_op<S>("concat", {p + q}, std::move(out), {a, b},
                    [p, q](detail::Node<S>& n) {
                      auto& pa = *n.parents[0];
                      auto& pb = *n.parents[1];
                      if (pa.requires_grad) {
                        for (std::size_t i = 0; i < p; ++i) pa.grad[i] += n.grad[i];
                      }
                      if (pb.requires_grad) {
                        for (std::size_t i = 0; i < q; ++i) pb.grad[i] += n.grad[p + i];
                      }
                    });
}

// Stacks B rank-1 tensors of equal length d into a [B x d] matrix.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const std::size_t d = rows[0].size();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != d) {
      throw std::invalid_argument("stack_rows: rows must be rank-1 of equal length");
    }
  }
  const std::size_t b_count = rows.size();
  std::vector<S> out(b_count * d);
  for (std::size_t r = 0; r < b_count; ++r) {
    std::copy(rows[r].data().begin(), rows[r].data().end(),
              out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return make_op<S>("stack_rows", {b_count, d}, std::move(out), rows,
                    [d](detail::Node<S>& n) {
                      for (std::size_t r = 0; r < n.parents.size(); ++r) {
                        auto& p = *n.parents[r];
                        if (!p.requires_grad) continue;
                        for (std::size_t i = 0; i < d; ++i) {
                          p.grad[i] += n.grad[r * d + i];
                        }
                      }
                    });
}

// Splices temporally offset copies of each frame: out[t] is the
// concatenation of x[clamp(t+off)] over the given offsets (edge frames
// replicated), so output length equals input length.
template <typename S>
Tensor<S> time_gather(const Tensor<S>& x, const std::vector<int>& offsets) {
  if (x.rank() != 2) {
    throw std::invalid_argument("time_gather: expected [T x d] input, got " +
                                shape_to_string(x.shape()));
  }
  if (offsets.empty()) throw std::invalid_argument("time_gather: no offsets");
  const std::size_t t_len = x.shape()[0], d = x.shape()[1];
  const std::size_t k = offsets.size();
  std::vector<S> out(t_len * k * d);
  auto dx = x.data();
  auto clamp_t = [t_len](long t) {
    return static_cast<std::size_t>(std::clamp<long>(t, 0, long(t_len) - 1));
  };
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t src = clamp_t(long(t) + offsets[c]);
      std::copy(dx.begin() + static_cast<std::ptrdiff_t>(src * d),
                dx.begin() + static_cast<std::ptrdiff_t>((src + 1) * d),
                out.begin() + static_cast<std::ptrdiff_t>((t * k + c) * d));
    }
  }
  return make_op<S>("time_gather", {t_len, k * d}, std::move(out), {x},
                    [t_len, d, offsets, clamp_t](detail::Node<S>& n) {
                      auto& p = *n.parents[0];
                      if (!p.requires_grad) return;
                      const std::size_t k = offsets.size();
                      for (std::size_t t = 0; t < t_len; ++t) {
                        for (std::size_t c = 0; c < k; ++c) {
                          const std::size_t src = clamp_t(long(t) + offsets[c]);
                          for (std::size_t j = 0; j < d; ++j) {
                            p.grad[src * d + j] += n.grad[(t * k + c) * d + j];
                          }
                        }
                      }
                    });
}

}  // namespace sev
