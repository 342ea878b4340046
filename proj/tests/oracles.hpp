#pragma once

// Independent test oracles. Everything here recomputes expected values by a
// route that shares no code with the library: explicit loops, exhaustive
// enumeration, and central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dpmkit/common.hpp"

namespace oracles {

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

// Central finite difference of a scalar function w.r.t. one entry of a
// parameter matrix owned by the caller.
inline double central_diff(std::function<double()> f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double fp = f();
  x = saved - h;
  const double fm = f();
  x = saved;
  return (fp - fm) / (2.0 * h);
}

// Checks a sampled subset of entries of `param` against analytic `grad`.
// Returns the worst relative error seen.
inline double check_grad_subset(std::function<double()> f, dpmkit::Mat& param,
                                const dpmkit::Mat& grad, int samples,
                                std::mt19937_64& rng, double h = 1e-5) {
  std::uniform_int_distribution<size_t> pick(0, param.size() - 1);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const size_t i = pick(rng);
    const double fd = central_diff(f, param.a[i], h);
    // absolute comparison when both are tiny
    if (std::abs(fd) < 1e-9 && std::abs(grad.a[i]) < 1e-9) continue;
    worst = std::max(worst, rel_err(grad.a[i], fd));
  }
  return worst;
}

// Brute-force average precision: precision accumulated at each hit position.
inline double average_precision(const std::vector<int>& relevance) {
  int hits = 0;
  double ap = 0.0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i]) {
      ++hits;
      ap += double(hits) / double(i + 1);
    }
  }
  return hits == 0 ? 0.0 : ap / hits;
}

// Cell-counting IoU / OIoU on 0/1 vectors.
inline double iou_cells(const std::vector<int>& a, const std::vector<int>& b) {
  int inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return double(inter) / double(uni);
}

inline double oiou_cells(const std::vector<int>& a, const std::vector<int>& b) {
  int inter = 0, cand = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    cand += b[i] ? 1 : 0;
  }
  return double(inter) / double(cand);
}

// Exhaustive cyclic-shift rolled OIoU over an h x w grid, shifts in steps of
// `stride` columns.
inline double rolled_oiou_exhaustive(const std::vector<int>& target,
                                     const std::vector<int>& cand, int h, int w,
                                     int stride) {
  double best = 0.0;
  for (int shift = 0; shift < std::max(w, 1); shift += stride) {
    std::vector<int> rolled(target.size());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) rolled[r * w + (c + shift) % w] = target[r * w + c];
    best = std::max(best, oiou_cells(rolled, cand));
    if (stride <= 0) break;
  }
  return best;
}

}  // namespace oracles
