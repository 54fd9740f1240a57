// Copyright 2026 The RegionSpot Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef REGIONSPOT_ALIGNMENT_HPP_
#define REGIONSPOT_ALIGNMENT_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "regionspot/common.hpp"
#include "regionspot/encoders.hpp"
#include "regionspot/errors.hpp"

namespace regionspot {

// Default loss and scoring constants. Alpha/gamma follow the focal-loss
// convention for dense prediction; the temperature starts at the usual
// contrastive 1/0.07 scale.
inline constexpr double kDefaultFocalAlpha = 0.25;
inline constexpr double kDefaultFocalGamma = 2.0;
inline constexpr double kDefaultTemperatureInit = 14.3;

// Region-vs-category logits: temperature * <normalized token, embedding>.
template <typename S>
struct MatchingScoresT {
  Mat<S> logits;  // N x K
  S temperature = S(1);
};
using MatchingScores = MatchingScoresT<float>;

template <typename S>
struct MatchingCache {
  Mat<S> tokens_hat;  // row-normalized tokens
  Mat<S> norms;       // N x 1, pre-normalization row norms
  Mat<S> cosines;     // N x K, logits / temperature
};

// Tokens are L2-normalized row-wise before the dot product so logits stay
// bounded by the temperature.
template <typename S>
MatchingScoresT<S> matching_scores(const Mat<S>& tokens, const Mat<S>& embeddings, S temperature,
                                   MatchingCache<S>* cache = nullptr) {
  if (tokens.cols() != embeddings.cols()) {
    throw ShapeError("matching_scores: token dim " + std::to_string(tokens.cols()) +
                     " != embedding dim " + std::to_string(embeddings.cols()));
  }
  const Eigen::Index n = tokens.rows();
  Mat<S> tokens_hat(n, tokens.cols());
  Mat<S> norms(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    S norm = tokens.row(i).norm();
    norm = std::max(norm, static_cast<S>(1e-12));
    tokens_hat.row(i) = tokens.row(i) / norm;
    norms(i, 0) = norm;
  }
  Mat<S> cosines = tokens_hat * embeddings.transpose();
  MatchingScoresT<S> out;
  out.temperature = temperature;
  out.logits = cosines * temperature;
  if (cache) {
    cache->tokens_hat = std::move(tokens_hat);
    cache->norms = std::move(norms);
    cache->cosines = std::move(cosines);
  }
  return out;
}

// Backward through matching_scores. Returns d_tokens; writes the
// temperature gradient. Embeddings come from the frozen text encoder, so
// no gradient flows into them.
template <typename S>
Mat<S> matching_scores_backward(const Mat<S>& d_logits, const MatchingCache<S>& cache,
                                const Mat<S>& embeddings, S temperature, S* d_temperature) {
  if (d_temperature) *d_temperature = (d_logits.array() * cache.cosines.array()).sum();
  Mat<S> d_hat = (d_logits * embeddings) * temperature;  // N x C
  Mat<S> d_tokens(d_hat.rows(), d_hat.cols());
  for (Eigen::Index i = 0; i < d_hat.rows(); ++i) {
    const S dot = (d_hat.row(i).array() * cache.tokens_hat.row(i).array()).sum();
    d_tokens.row(i) = (d_hat.row(i) - cache.tokens_hat.row(i) * dot) / cache.norms(i, 0);
  }
  return d_tokens;
}

// Multi-hot region targets; at most one positive per row under
// single-label ingestion, all-zero rows mark background regions.
using RegionTargets = MatF;

template <typename S>
Mat<S> targets_from_indices(const std::vector<int>& indices, int vocab_size) {
  Mat<S> t = Mat<S>::Zero(static_cast<Eigen::Index>(indices.size()), vocab_size);
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= 0) {
      if (indices[i] >= vocab_size) {
        throw RangeError("target index " + std::to_string(indices[i]) +
                         " outside vocabulary of size " + std::to_string(vocab_size));
      }
      t(static_cast<Eigen::Index>(i), indices[i]) = S(1);
    }
  }
  return t;
}

template <typename S>
struct FocalLossResult {
  S value = S(0);
  bool empty_input = false;
};

namespace detail {

template <typename S>
S softplus(S x) {
  // log(1 + exp(x)), overflow-safe.
  if (x > S(30)) return x;
  if (x < S(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

// Per-element sigmoid focal loss, FL = -alpha_t (1 - p_t)^gamma log(p_t),
// averaged over all N*K elements.
template <typename S>
FocalLossResult<S> focal_loss(const Mat<S>& logits, const Mat<S>& targets, S alpha, S gamma,
                              Mat<S>* d_logits = nullptr) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("focal_loss: logits " + std::to_string(logits.rows()) + "x" +
                     std::to_string(logits.cols()) + " vs targets " +
                     std::to_string(targets.rows()) + "x" + std::to_string(targets.cols()));
  }
  if (!(alpha > S(0) && alpha < S(1))) throw RangeError("focal_loss: alpha must be in (0,1)");
  if (gamma < S(0)) throw RangeError("focal_loss: gamma must be >= 0");
  FocalLossResult<S> res;
  if (logits.size() == 0) {
    res.empty_input = true;
    if (d_logits) *d_logits = Mat<S>(logits.rows(), logits.cols());
    return res;
  }
  if (d_logits) d_logits->resize(logits.rows(), logits.cols());
  const S inv_count = S(1) / static_cast<S>(logits.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const bool positive = targets(i, j) > S(0.5);
      const S sgn = positive ? S(1) : S(-1);
      const S q = sgn * logits(i, j);
      const S alpha_t = positive ? alpha : S(1) - alpha;
      const S u = detail::sigmoid(-q);        // 1 - p_t
      const S nlp = detail::softplus(-q);     // -log(p_t)
      const S u_pow = std::pow(u, gamma);
      total += static_cast<double>(alpha_t * u_pow * nlp);
      if (d_logits) {
        // d/dq of alpha_t u^gamma softplus(-q), then chain through q = sgn*z.
        const S d_q = -alpha_t * u_pow * (gamma * (S(1) - u) * nlp + u);
        (*d_logits)(i, j) = sgn * d_q * inv_count;
      }
    }
  }
  res.value = static_cast<S>(total / static_cast<double>(logits.size()));
  return res;
}

struct PredictedLabel {
  std::string category;
  double probability = 0.0;
  int category_index = 0;
};

// Sigmoid probabilities ranked per region; ties break by ascending
// category index.
inline std::vector<std::vector<PredictedLabel>> predict_labels(
    const MatF& logits, const std::vector<std::string>& names, int top_k) {
  const int k_total = static_cast<int>(logits.cols());
  if (static_cast<int>(names.size()) != k_total) {
    throw ShapeError("predict_labels: " + std::to_string(names.size()) + " names for " +
                     std::to_string(k_total) + " logit columns");
  }
  if (top_k < 0 || top_k > k_total) {
    throw RangeError("predict_labels: top_k " + std::to_string(top_k) + " outside [0, " +
                     std::to_string(k_total) + "]");
  }
  std::vector<std::vector<PredictedLabel>> out(static_cast<size_t>(logits.rows()));
  std::vector<int> order(static_cast<size_t>(k_total));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (logits(i, a) != logits(i, b)) return logits(i, a) > logits(i, b);
      return a < b;
    });
    auto& row = out[static_cast<size_t>(i)];
    row.reserve(static_cast<size_t>(top_k));
    for (int r = 0; r < top_k; ++r) {
      const int idx = order[static_cast<size_t>(r)];
      row.push_back({names[static_cast<size_t>(idx)],
                     static_cast<double>(detail::sigmoid(logits(i, idx))), idx});
    }
  }
  return out;
}

}  // namespace regionspot

#endif  // REGIONSPOT_ALIGNMENT_HPP_
