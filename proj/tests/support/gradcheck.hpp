#pragma once

// Central finite-difference gradient checking for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sev/tensor.hpp"

namespace sev::test {

// `forward` must rebuild a fresh graph from the current leaf values and
// return a scalar loss. Returns the worst relative error between analytic
// and central-difference gradients over every element of every leaf, with
// rel = |a - n| / max(1, |a|, |n|).
inline double gradcheck(const std::function<Tensor<double>()>& forward,
                        std::vector<Tensor<double>> leaves,
                        double step = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  Tensor<double> loss = forward();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) {
    analytic.emplace_back(l.grad().begin(), l.grad().end());
  }

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].data_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = double(values[i]);
      values[i] = orig + step;
      const double fp = forward().item();
      values[i] = orig - step;
      const double fm = forward().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[li][i];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0,
                                    bool requires_grad = true) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = scale * rng.normal();
  return Tensor<double>::from_data(std::move(shape), std::move(data),
                                   requires_grad);
}

}  // namespace sev::test
