#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "sev/rng.hpp"
#include "sev/serialized.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sev;
using sev::test::gradcheck;
using sev::test::random_tensor;

namespace {
using T = Tensor<double>;
using Layer = serialized::SerializedLayerParams<double>;
using Stack = serialized::SerializedStackParams<double>;

T permute_frames(const T& h, Rng& rng) {
  const std::size_t t_len = h.shape()[0], d = h.shape()[1];
  std::vector<std::size_t> order(t_len);
  std::iota(order.begin(), order.end(), std::size_t(0));
  rng.shuffle(order.begin(), order.end());
  std::vector<double> out(h.size());
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < d; ++j) out[t * d + j] = h.at(order[t], j);
  }
  return T::from_data({t_len, d}, std::move(out));
}

void zero_tensor(Tensor<double>& t) {
  std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
}

std::vector<Tensor<double>> layer_leaves(Layer& p) {
  return {p.attn_norm.gain, p.attn_norm.bias, p.W_q, p.W_k,
          p.residual_affine.W, p.residual_affine.b, p.head_affine.W,
          p.head_affine.b, p.ffw_norm.gain, p.ffw_norm.bias, p.ffw1.W,
          p.ffw1.b, p.ffw2.W, p.ffw2.b};
}
}  // namespace

TEST_CASE("input_aware_query") {
  Rng rng(41);
  SECTION("zero W_q gives a zero query and uniform attention downstream") {
    T w_q = T::zeros({3, 8}, true);
    T h = random_tensor({5, 4}, rng, 1.0, false);
    T q = serialized::input_aware_query(h, w_q);
    for (std::size_t i = 0; i < 3; ++i) CHECK(q.at(i) == 0.0);
  }
  SECTION("constant input pools to [c; sqrt(eps)]") {
    T w_q = random_tensor({2, 4}, rng, 1.0, false);
    T h = T::full({6, 2}, 3.0);
    T q = serialized::input_aware_query(h, w_q);
    const double se = std::sqrt(1e-8);
    for (std::size_t k = 0; k < 2; ++k) {
      const double expect = w_q.at(k, 0) * 3.0 + w_q.at(k, 1) * 3.0 +
                            w_q.at(k, 2) * se + w_q.at(k, 3) * se;
      CHECK(q.at(k) == Catch::Approx(expect).margin(1e-9));
    }
  }
  SECTION("matches a scalar-loop computation on random input") {
    for (int rep = 0; rep < 20; ++rep) {
      T w_q = random_tensor({3, 8}, rng, 1.0, false);
      T h = random_tensor({3, 4}, rng, 1.0, false);
      T q = serialized::input_aware_query(h, w_q);

      const oracle::Mat hm = oracle::mat_of(h);
      std::vector<double> mu, sg;
      oracle::stats(hm, mu, sg);
      std::vector<double> pooled(mu);
      pooled.insert(pooled.end(), sg.begin(), sg.end());
      for (std::size_t k = 0; k < 3; ++k) {
        double expect = 0.0;
        for (std::size_t j = 0; j < 8; ++j) expect += w_q.at(k, j) * pooled[j];
        CHECK(q.at(k) == Catch::Approx(expect).margin(1e-9));
      }
    }
  }
}

TEST_CASE("self_attention_module") {
  Rng rng(42);
  SECTION("zero residual affine leaves frames untouched") {
    Layer p = Layer::init(4, 2, 6, 4, rng);
    zero_tensor(p.residual_affine.W);
    zero_tensor(p.residual_affine.b);
    T h = random_tensor({5, 4}, rng, 1.0, false);
    auto out = serialized::self_attention_module(h, p, Mode::eval, rng, 0.1);
    for (std::size_t i = 0; i < h.size(); ++i) {
      CHECK(out.frames.data()[i] == Catch::Approx(h.data()[i]).margin(1e-12));
    }
  }
  SECTION("single frame gets weight one and degenerate sigma") {
    Layer p = Layer::init(4, 2, 6, 4, rng);
    T h = random_tensor({1, 4}, rng, 1.0, false);
    auto out = serialized::self_attention_module(h, p, Mode::eval, rng, 0.1);
    T x = layers::layer_norm(h, p.attn_norm);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.stats.mu.at(j) == Catch::Approx(x.at(0, j)).margin(1e-9));
      CHECK(out.stats.sigma.at(j) ==
            Catch::Approx(std::sqrt(1e-8)).margin(1e-6));
    }
  }
  SECTION("matches the scalar-loop oracle") {
    for (int rep = 0; rep < 20; ++rep) {
      Layer p = Layer::init(4, 2, 6, 4, rng);
      T h = random_tensor({5, 4}, rng, 1.0, false);
      auto got = serialized::self_attention_module(h, p, Mode::eval, rng, 0.1);
      const auto ref =
          oracle::attention_module(oracle::mat_of(h), oracle::layer_ref(p));
      for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(got.frames.data()[i] == Catch::Approx(ref.frames.v[i]).margin(1e-9));
      }
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(got.stats.mu.at(j) == Catch::Approx(ref.mu[j]).margin(1e-9));
        CHECK(got.stats.sigma.at(j) == Catch::Approx(ref.sigma[j]).margin(1e-9));
      }
    }
  }
}

TEST_CASE("feed_forward_module") {
  Rng rng(43);
  SECTION("zero second transform is the identity") {
    Layer p = Layer::init(4, 2, 6, 4, rng);
    zero_tensor(p.ffw2.W);
    zero_tensor(p.ffw2.b);
    T h = random_tensor({5, 4}, rng, 1.0, false);
    T y = serialized::feed_forward_module(h, p, Mode::eval, rng, 0.1);
    for (std::size_t i = 0; i < h.size(); ++i) {
      CHECK(y.data()[i] == Catch::Approx(h.data()[i]).margin(1e-12));
    }
  }
  SECTION("hand case, d=2 d_ff=3") {
    Layer p;
    p.ffw_norm = layers::NormParams<double>::layer_norm_init(2);
    p.ffw1.W = T::from_data({3, 2}, {1, 0, 0, 1, 1, 1}, true);
    p.ffw1.b = T::from_data({3}, {0.5, -0.5, 0}, true);
    p.ffw2.W = T::from_data({2, 3}, {1, 1, 0, 0, 1, 1}, true);
    p.ffw2.b = T::from_data({2}, {0.1, 0.2}, true);
    T h = T::from_data({1, 2}, {1, -1});
    T y = serialized::feed_forward_module(h, p, Mode::eval, rng, 0.1);
    CHECK(y.at(0, 0) == Catch::Approx(2.6).margin(1e-6));
    CHECK(y.at(0, 1) == Catch::Approx(-0.8).margin(1e-6));
  }
  SECTION("acts per frame: permuting frames permutes outputs") {
    Layer p = Layer::init(3, 2, 5, 3, rng);
    T h = random_tensor({6, 3}, rng, 1.0, false);
    T y = serialized::feed_forward_module(h, p, Mode::eval, rng, 0.1);
    // reverse the frames
    std::vector<double> rev(h.size());
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t j = 0; j < 3; ++j) rev[t * 3 + j] = h.at(5 - t, j);
    }
    T yr = serialized::feed_forward_module(T::from_data({6, 3}, rev), p,
                                           Mode::eval, rng, 0.1);
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(yr.at(t, j) == Catch::Approx(y.at(5 - t, j)).margin(1e-12));
      }
    }
  }
  SECTION("matches the scalar-loop oracle") {
    for (int rep = 0; rep < 20; ++rep) {
      Layer p = Layer::init(4, 2, 6, 4, rng);
      T h = random_tensor({4, 4}, rng, 1.0, false);
      T y = serialized::feed_forward_module(h, p, Mode::eval, rng, 0.1);
      const auto ref = oracle::ffw_module(oracle::mat_of(h), oracle::layer_ref(p));
      for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(y.data()[i] == Catch::Approx(ref.v[i]).margin(1e-9));
      }
    }
  }
}

TEST_CASE("serialized_embed") {
  Rng rng(44);
  SECTION("N = 1 reduces to a single block's head") {
    Stack stack = Stack::init(1, 4, 2, 6, 4, 0.1, rng);
    T h = random_tensor({5, 4}, rng, 1.0, false);
    T e = serialized::serialized_embed(h, stack, Mode::eval, rng);
    auto attn = serialized::self_attention_module(h, stack.layer_params[0],
                                                  Mode::eval, rng, 0.1);
    T head = dense(attn.stats.concatenated(), stack.layer_params[0].head_affine);
    REQUIRE(e.size() == head.size());
    for (std::size_t j = 0; j < e.size(); ++j) {
      CHECK(e.at(j) == Catch::Approx(head.at(j)).margin(1e-12));
    }
  }
  SECTION("embedding dimension holds for every T and N") {
    for (std::size_t n : {std::size_t(1), std::size_t(2), std::size_t(3)}) {
      Stack stack = Stack::init(n, 4, 2, 6, 5, 0.1, rng);
      for (std::size_t t_len : {std::size_t(1), std::size_t(2), std::size_t(17)}) {
        T h = random_tensor({t_len, 4}, rng, 1.0, false);
        CHECK(serialized::serialized_embed(h, stack, Mode::eval, rng).size() == 5);
      }
    }
  }
  SECTION("frame permutation invariance") {
    Stack stack = Stack::init(2, 4, 2, 6, 4, 0.1, rng);
    for (int rep = 0; rep < 20; ++rep) {
      T h = random_tensor({2 + rng.uniform_int(20), 4}, rng, 1.0, false);
      T e1 = serialized::serialized_embed(h, stack, Mode::eval, rng);
      T e2 = serialized::serialized_embed(permute_frames(h, rng), stack,
                                          Mode::eval, rng);
      for (std::size_t j = 0; j < e1.size(); ++j) {
        CHECK(e1.at(j) == Catch::Approx(e2.at(j)).margin(1e-9));
      }
    }
  }
  SECTION("matches the scalar-loop oracle over the whole stack") {
    for (int rep = 0; rep < 20; ++rep) {
      Stack stack = Stack::init(2, 4, 2, 6, 4, 0.1, rng);
      T h = random_tensor({5, 4}, rng, 1.0, false);
      T e = serialized::serialized_embed(h, stack, Mode::eval, rng);
      std::vector<oracle::LayerRef> refs;
      for (const auto& lp : stack.layer_params) refs.push_back(oracle::layer_ref(lp));
      const auto expect = oracle::serialized_embed(oracle::mat_of(h), refs);
      for (std::size_t j = 0; j < e.size(); ++j) {
        CHECK(e.at(j) == Catch::Approx(expect[j]).margin(1e-9));
      }
    }
  }
  SECTION("with attention and FFW weights zeroed, only the heads remain") {
    Stack stack = Stack::init(3, 4, 2, 6, 4, 0.1, rng);
    for (auto& lp : stack.layer_params) {
      zero_tensor(lp.W_q);
      zero_tensor(lp.W_k);
      zero_tensor(lp.residual_affine.W);
      zero_tensor(lp.residual_affine.b);
      zero_tensor(lp.ffw1.W);
      zero_tensor(lp.ffw1.b);
      zero_tensor(lp.ffw2.W);
      zero_tensor(lp.ffw2.b);
    }
    T h = random_tensor({6, 4}, rng, 1.0, false);
    T e = serialized::serialized_embed(h, stack, Mode::eval, rng);

    // direct composition: every layer sees the same frames, uniform weights
    auto ln = layers::NormParams<double>::layer_norm_init(4);
    auto stats = pooling::statistics_pool(layers::layer_norm(h, ln));
    T direct;
    for (const auto& lp : stack.layer_params) {
      T head = dense(stats.concatenated(), lp.head_affine);
      direct = direct.defined() ? add(direct, head) : head;
    }
    for (std::size_t j = 0; j < e.size(); ++j) {
      CHECK(e.at(j) == Catch::Approx(direct.at(j)).margin(1e-9));
    }

    // and the classifier-side view batch-normalizes the ReLU of that sum
    T post1 = layers::batch_norm(reshape(relu(e), {1, e.size()}), stack.emb_bn,
                                 Mode::eval);
    T post2 = layers::batch_norm(reshape(relu(direct), {1, direct.size()}),
                                 stack.emb_bn, Mode::eval);
    for (std::size_t j = 0; j < e.size(); ++j) {
      CHECK(post1.at(0, j) == Catch::Approx(post2.at(0, j)).margin(1e-9));
    }
  }
  SECTION("end-to-end gradients on a tiny stack") {
    Stack stack = Stack::init(2, 8, 4, 16, 8, 0.1, rng);
    T h = random_tensor({5, 8}, rng);
    auto forward = [&]() -> T {
      T e = serialized::serialized_embed(h, stack, Mode::eval, rng);
      return sum_all(mul(e, e));
    };
    std::vector<T> leaves{h};
    for (auto& lp : stack.layer_params) {
      for (auto& t : layer_leaves(lp)) leaves.push_back(t);
    }
    CHECK(gradcheck(forward, leaves) < 1e-4);
  }
}

TEST_CASE("parameter counts") {
  Rng rng(45);
  SECTION("per-layer count by closed-form summation at full-scale dims") {
    const std::size_t d = 256, d_k = 128, d_ff = 512, d_emb = 256;
    Layer p = Layer::init(d, d_k, d_ff, d_emb, rng);
    const std::size_t w_q = d_k * 2 * d;
    const std::size_t w_k = d_k * d;
    const std::size_t residual = d * d + d;
    const std::size_t head = d_emb * 2 * d + d_emb;
    const std::size_t ffw = d_ff * d + d_ff + d * d_ff + d;
    const std::size_t norms = 2 * 2 * d;
    CHECK(w_q == 65536u);
    CHECK(w_k == 32768u);
    CHECK(residual == 65792u);
    CHECK(head == 131328u);
    CHECK(serialized::layer_parameter_count(p) ==
          w_q + w_k + residual + head + ffw + norms);
    CHECK(serialized::layer_parameter_count(p) == 559360u);
  }
  SECTION("consecutive stack depths differ by exactly one layer") {
    Stack s4 = Stack::init(4, 16, 8, 32, 16, 0.1, rng);
    Stack s5 = Stack::init(5, 16, 8, 32, 16, 0.1, rng);
    auto stack_count = [](const Stack& s) {
      std::size_t n = 0;
      for (const auto& lp : s.layer_params) {
        n += serialized::layer_parameter_count(lp);
      }
      return n;
    };
    CHECK(stack_count(s5) - stack_count(s4) ==
          serialized::layer_parameter_count(s4.layer_params[0]));
  }
  SECTION("full-scale per-layer delta tracks the published totals") {
    // published totals: 4.99M (N=6), 4.44M (N=5), 3.88M (N=4)
    Rng r2(46);
    Layer p = Layer::init(256, 128, 512, 256, r2);
    const double per_layer = double(serialized::layer_parameter_count(p));
    CHECK(std::abs(per_layer - (4.99e6 - 4.44e6)) / (4.99e6 - 4.44e6) < 0.02);
    CHECK(std::abs(2.0 * per_layer - 2.0 * (4.99e6 - 4.44e6)) /
              (2.0 * (4.99e6 - 4.44e6)) <
          0.02);
    CHECK(std::abs(per_layer - (4.44e6 - 3.88e6)) / (4.44e6 - 3.88e6) < 0.02);
  }
}
