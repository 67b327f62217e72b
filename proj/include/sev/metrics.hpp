#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sev::metrics {

// Cosine similarity in [-1, 1]. Zero-norm vectors are an error.
template <typename S>
double cosine_score(std::span<const S> a, std::span<const S> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("cosine_score: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("cosine_score: zero-norm vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct EvalMetrics {
  double eer = 0.0;           // fraction, not percent
  double eer_threshold = 0.0;
  double min_dcf_p01 = 0.0;
  double min_dcf_p001 = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

namespace detail {

// Operating point at threshold th with the accept-iff-score>=th convention.
struct OperatingPoint {
  double far = 0.0;  // fraction of nontargets at or above threshold
  double frr = 0.0;  // fraction of targets below threshold
};

inline OperatingPoint point_at(const std::vector<double>& targets_sorted,
                               const std::vector<double>& nontargets_sorted,
                               double th) {
  const auto tar_below = std::size_t(
      std::lower_bound(targets_sorted.begin(), targets_sorted.end(), th) -
      targets_sorted.begin());
  const auto non_below = std::size_t(
      std::lower_bound(nontargets_sorted.begin(), nontargets_sorted.end(), th) -
      nontargets_sorted.begin());
  OperatingPoint p;
  p.frr = double(tar_below) / double(targets_sorted.size());
  p.far = double(nontargets_sorted.size() - non_below) /
          double(nontargets_sorted.size());
  return p;
}

inline void require_both_classes(std::size_t n_target, std::size_t n_nontarget) {
  if (n_target == 0 || n_nontarget == 0) {
    throw std::invalid_argument(
        "metrics: need at least one target and one nontarget trial");
  }
}

}  // namespace detail

// Equal error rate: sweeps thresholds at the score breakpoints (plus the
// accept-all and reject-all extremes) and linearly interpolates the crossing
// of the false-accept and false-reject rates. Ties resolve toward the lower
// threshold. The returned value depends only on score ranks, so any strictly
// increasing transform of the scores leaves it unchanged.
inline EerResult compute_eer(std::vector<double> target_scores,
                             std::vector<double> nontarget_scores) {
  detail::require_both_classes(target_scores.size(), nontarget_scores.size());
  std::sort(target_scores.begin(), target_scores.end());
  std::sort(nontarget_scores.begin(), nontarget_scores.end());

  std::vector<double> breakpoints;
  breakpoints.reserve(target_scores.size() + nontarget_scores.size());
  std::merge(target_scores.begin(), target_scores.end(),
             nontarget_scores.begin(), nontarget_scores.end(),
             std::back_inserter(breakpoints));
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()),
                    breakpoints.end());

  // accept-all start: FAR 1, FRR 0
  detail::OperatingPoint prev{1.0, 0.0};
  double prev_th = breakpoints.front();
  for (double th : breakpoints) {
    const auto cur = detail::point_at(target_scores, nontarget_scores, th);
    if (cur.frr >= cur.far) {
      const double d_prev = prev.far - prev.frr;
      const double d_cur = cur.frr - cur.far;
      const double t = d_prev + d_cur > 0.0 ? d_prev / (d_prev + d_cur) : 0.0;
      return {prev.far + t * (cur.far - prev.far),
              prev_th + t * (th - prev_th)};
    }
    prev = cur;
    prev_th = th;
  }
  // reject-all end: FAR 0, FRR 1
  const detail::OperatingPoint end{0.0, 1.0};
  const double d_prev = prev.far - prev.frr;
  const double d_cur = end.frr - end.far;
  const double t = d_prev + d_cur > 0.0 ? d_prev / (d_prev + d_cur) : 0.0;
  return {prev.far + t * (end.far - prev.far), prev_th};
}

// Minimum of the prior-weighted detection cost over all thresholds,
// normalized by the best constant decision min(c_miss * p, c_fa * (1-p))
// unless `normalized` is false. The normalized value never exceeds 1.
inline double compute_min_dcf(std::vector<double> target_scores,
                              std::vector<double> nontarget_scores,
                              double p_target, double c_miss = 1.0,
                              double c_fa = 1.0, bool normalized = true) {
  detail::require_both_classes(target_scores.size(), nontarget_scores.size());
  if (p_target <= 0.0 || p_target >= 1.0) {
    throw std::invalid_argument("compute_min_dcf: p_target must be in (0, 1)");
  }
  std::sort(target_scores.begin(), target_scores.end());
  std::sort(nontarget_scores.begin(), nontarget_scores.end());

  std::vector<double> breakpoints;
  breakpoints.reserve(target_scores.size() + nontarget_scores.size());
  std::merge(target_scores.begin(), target_scores.end(),
             nontarget_scores.begin(), nontarget_scores.end(),
             std::back_inserter(breakpoints));
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()),
                    breakpoints.end());

  auto cost = [&](const detail::OperatingPoint& p) {
    return c_miss * p.frr * p_target + c_fa * p.far * (1.0 - p_target);
  };
  // accept-all and reject-all are always candidate decisions
  double best = std::min(cost({1.0, 0.0}), cost({0.0, 1.0}));
  for (double th : breakpoints) {
    best = std::min(best, cost(detail::point_at(target_scores, nontarget_scores, th)));
  }
  if (normalized) {
    best /= std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  }
  return best;
}

// EER plus normalized minDCF at target priors 0.01 and 0.001.
inline EvalMetrics evaluate_scores(const std::vector<double>& target_scores,
                                   const std::vector<double>& nontarget_scores) {
  EvalMetrics m;
  const EerResult eer = compute_eer(target_scores, nontarget_scores);
  m.eer = eer.eer;
  m.eer_threshold = eer.threshold;
  m.min_dcf_p01 = compute_min_dcf(target_scores, nontarget_scores, 0.01);
  m.min_dcf_p001 = compute_min_dcf(target_scores, nontarget_scores, 0.001);
  return m;
}

}  // namespace sev::metrics
