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

#ifndef REGIONSPOT_FUSION_HPP_
#define REGIONSPOT_FUSION_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "regionspot/common.hpp"
#include "regionspot/encoders.hpp"
#include "regionspot/errors.hpp"

namespace regionspot {

struct FusionConfig {
  int depth = 3;
  int c_dim = 256;
  int num_heads = 4;
  bool use_class_token = true;
  bool use_self_attention = true;
  int ffn_expansion = 4;

  int head_dim() const { return c_dim / num_heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);

  bool operator==(const FusionConfig&) const = default;
};

// All parameters are stored as row-major matrices; vector-shaped entries
// (biases, norm gains) are 1 x n so the whole set can be visited
// uniformly for the optimizer and checkpoint serialization.
template <typename S>
struct Linear {
  Mat<S> w;  // in x out
  Mat<S> b;  // 1 x out
};

template <typename S>
struct LayerNormParams {
  Mat<S> gamma;  // 1 x C
  Mat<S> beta;   // 1 x C
};

template <typename S>
struct AttentionParams {
  Linear<S> q, k, v, out;
};

template <typename S>
struct BlockParams {
  LayerNormParams<S> ln_self, ln_cross, ln_ffn;
  AttentionParams<S> self_attn, cross_attn;
  Linear<S> ffn1, ffn2;
};

// The only trainable parameters in the system besides the alignment
// temperature.
template <typename S>
struct FusionParams {
  Linear<S> projector;  // d_loc -> C
  std::vector<BlockParams<S>> blocks;

  template <typename F>
  void for_each(F&& f) {
    visit_linear(f, "projector", projector);
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      auto& blk = blocks[i];
      visit_norm(f, p + "ln_self", blk.ln_self);
      visit_attn(f, p + "self_attn", blk.self_attn);
      visit_norm(f, p + "ln_cross", blk.ln_cross);
      visit_attn(f, p + "cross_attn", blk.cross_attn);
      visit_norm(f, p + "ln_ffn", blk.ln_ffn);
      visit_linear(f, p + "ffn1", blk.ffn1);
      visit_linear(f, p + "ffn2", blk.ffn2);
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<FusionParams*>(this)->for_each(
        [&](const std::string& name, Mat<S>& m) { f(name, static_cast<const Mat<S>&>(m)); });
  }

  size_t parameter_count() const {
    size_t n = 0;
    for_each([&](const std::string&, const Mat<S>& m) { n += static_cast<size_t>(m.size()); });
    return n;
  }

  uint64_t checksum_bits() const {
    uint64_t h = 0xCBF29CE484222325ULL;
    for_each([&](const std::string& name, const Mat<S>& m) {
      h = fnv1a64(name.data(), name.size(), h);
      h = checksum(m, h);
    });
    return h;
  }

 private:
  template <typename F>
  static void visit_linear(F& f, const std::string& prefix, Linear<S>& lin) {
    f(prefix + ".weight", lin.w);
    f(prefix + ".bias", lin.b);
  }
  template <typename F>
  static void visit_norm(F& f, const std::string& prefix, LayerNormParams<S>& ln) {
    f(prefix + ".gamma", ln.gamma);
    f(prefix + ".beta", ln.beta);
  }
  template <typename F>
  static void visit_attn(F& f, const std::string& prefix, AttentionParams<S>& attn) {
    visit_linear(f, prefix + ".q", attn.q);
    visit_linear(f, prefix + ".k", attn.k);
    visit_linear(f, prefix + ".v", attn.v);
    visit_linear(f, prefix + ".out", attn.out);
  }
};

using FusionParamsF = FusionParams<float>;

// Softmax attention matrix of one fusion layer, averaged over heads.
// Rows are probability vectors.
template <typename S>
struct AttentionRecordT {
  Mat<S> weights;  // N x (M or M+1)
  int layer_index = 0;
};
using AttentionRecord = AttentionRecordT<float>;

template <typename S>
struct FusionResult {
  Mat<S> tokens;  // N x C region semantic tokens
  std::vector<AttentionRecordT<S>> attention;
};

struct RegionSemanticTokens {
  MatF tokens;  // N x C
};

namespace detail {

template <typename S>
Mat<S> zeros_like_mat(const Mat<S>& m) {
  return Mat<S>::Zero(m.rows(), m.cols());
}

}  // namespace detail

// --- parameter construction -------------------------------------------------

template <typename S>
void shape_params(const FusionConfig& cfg, int d_loc, int d_vil, FusionParams<S>& p) {
  const int c = cfg.c_dim;
  auto lin = [](int in, int out) {
    Linear<S> l;
    l.w = Mat<S>::Zero(in, out);
    l.b = Mat<S>::Zero(1, out);
    return l;
  };
  auto norm = [&](int dim) {
    LayerNormParams<S> n;
    n.gamma = Mat<S>::Ones(1, dim);
    n.beta = Mat<S>::Zero(1, dim);
    return n;
  };
  p.projector = lin(d_loc, c);
  p.blocks.resize(static_cast<size_t>(cfg.depth));
  for (auto& blk : p.blocks) {
    blk.ln_self = norm(c);
    blk.self_attn = {lin(c, c), lin(c, c), lin(c, c), lin(c, c)};
    blk.ln_cross = norm(c);
    blk.cross_attn = {lin(c, c), lin(d_vil, c), lin(d_vil, c), lin(c, c)};
    blk.ln_ffn = norm(c);
    blk.ffn1 = lin(c, c * cfg.ffn_expansion);
    blk.ffn2 = lin(c * cfg.ffn_expansion, c);
  }
}

// Deterministic given seed: weights get scaled uniform values, biases and
// norm offsets zero, norm gains one. Values are drawn in double and cast,
// so float and double instantiations agree to rounding.
template <typename S>
FusionParams<S> init_fusion_parameters(const FusionConfig& cfg, int d_loc, int d_vil,
                                       uint64_t seed) {
  cfg.validate();
  FusionParams<S> p;
  shape_params(cfg, d_loc, d_vil, p);
  Rng rng(mix_seed(seed, 0x66757369ULL));
  p.for_each([&](const std::string& name, Mat<S>& m) {
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0) {
      const double bound = std::sqrt(6.0 / (static_cast<double>(m.rows()) + m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c2 = 0; c2 < m.cols(); ++c2) {
          m(r, c2) = static_cast<S>(rng.uniform(-bound, bound));
        }
      }
    }
    // biases, betas stay zero; gammas stay one.
  });
  return p;
}

template <typename S>
FusionParams<S> zeros_like(const FusionParams<S>& src) {
  FusionParams<S> z;
  z.projector.w = detail::zeros_like_mat(src.projector.w);
  z.projector.b = detail::zeros_like_mat(src.projector.b);
  z.blocks.resize(src.blocks.size());
  for (size_t i = 0; i < src.blocks.size(); ++i) {
    auto zero_lin = [](const Linear<S>& l) {
      return Linear<S>{detail::zeros_like_mat(l.w), detail::zeros_like_mat(l.b)};
    };
    auto zero_norm = [](const LayerNormParams<S>& n) {
      return LayerNormParams<S>{detail::zeros_like_mat(n.gamma), detail::zeros_like_mat(n.beta)};
    };
    const auto& s = src.blocks[i];
    auto& d = z.blocks[i];
    d.ln_self = zero_norm(s.ln_self);
    d.self_attn = {zero_lin(s.self_attn.q), zero_lin(s.self_attn.k), zero_lin(s.self_attn.v),
                   zero_lin(s.self_attn.out)};
    d.ln_cross = zero_norm(s.ln_cross);
    d.cross_attn = {zero_lin(s.cross_attn.q), zero_lin(s.cross_attn.k), zero_lin(s.cross_attn.v),
                    zero_lin(s.cross_attn.out)};
    d.ln_ffn = zero_norm(s.ln_ffn);
    d.ffn1 = zero_lin(s.ffn1);
    d.ffn2 = zero_lin(s.ffn2);
  }
  return z;
}

// --- primitive layers --------------------------------------------------------

template <typename S>
Mat<S> linear_forward(const Mat<S>& x, const Linear<S>& p) {
  if (x.cols() != p.w.rows()) {
    throw ShapeError("linear layer expects input dim " + std::to_string(p.w.rows()) + ", got " +
                     std::to_string(x.cols()));
  }
  return (x * p.w).rowwise() + p.b.row(0);
}

// Accumulates parameter gradients; returns the input gradient.
template <typename S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const Linear<S>& p, Linear<S>& grad) {
  grad.w.noalias() += x.transpose() * dy;
  grad.b.row(0) += dy.colwise().sum();
  return dy * p.w.transpose();
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct LayerNormCache {
  Mat<S> x_hat;    // N x C
  Mat<S> inv_std;  // N x 1
};

template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, const LayerNormParams<S>& p,
                          LayerNormCache<S>* cache) {
  const Eigen::Index n = x.rows(), c = x.cols();
  Mat<S> x_hat(n, c);
  Mat<S> inv_std(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(c);
    const S is = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    x_hat.row(i) = (x.row(i).array() - mean) * is;
    inv_std(i, 0) = is;
  }
  Mat<S> y = (x_hat.array().rowwise() * p.gamma.row(0).array()).rowwise() +
             p.beta.row(0).array();
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LayerNormCache<S>& cache,
                           const LayerNormParams<S>& p, LayerNormParams<S>& grad) {
  const Eigen::Index n = dy.rows(), c = dy.cols();
  grad.gamma.row(0) += (dy.array() * cache.x_hat.array()).colwise().sum().matrix();
  grad.beta.row(0) += dy.colwise().sum();
  Mat<S> dx(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxh = (dy.row(i).array() * p.gamma.row(0).array()).matrix();
    const S sum_dxh = dxh.sum();
    const S sum_dxh_xhat = (dxh.array() * cache.x_hat.row(i).array()).sum();
    dx.row(i) = (cache.inv_std(i, 0) / static_cast<S>(c)) *
                (static_cast<S>(c) * dxh.array() - sum_dxh -
                 cache.x_hat.row(i).array() * sum_dxh_xhat)
                    .matrix();
  }
  return dx;
}

template <typename S>
S gelu_scalar(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
  const S pdf = std::exp(S(-0.5) * x * x) * static_cast<S>(0.3989422804014326779);
  return cdf + x * pdf;
}

// --- attention ----------------------------------------------------------------

template <typename S>
struct AttentionCache {
  Mat<S> x;       // query source
  Mat<S> memory;  // key/value source
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // per head, N x R
};

// Multi-head scaled dot-product attention without an output projection:
// concat_h( softmax(Q_h K_h^T / sqrt(C/H)) V_h ). With one head this is
// exactly softmax(F_p K_v^T / sqrt(C)) V_v.
template <typename S>
Mat<S> attention_forward(const Mat<S>& x, const Mat<S>& memory, const AttentionParams<S>& p,
                         int num_heads, AttentionCache<S>* cache) {
  if (memory.rows() == 0) {
    throw InvalidInputError("attention requires at least one key/value row");
  }
  const Mat<S> q = linear_forward(x, p.q);
  const Mat<S> k = linear_forward(memory, p.k);
  const Mat<S> v = linear_forward(memory, p.v);
  const Eigen::Index n = q.rows(), r = k.rows(), c = q.cols();
  const Eigen::Index dh = c / num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> ctx(n, c);
  std::vector<Mat<S>> probs(static_cast<size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Mat<S> logits = qh * kh.transpose() * scale;  // N x R
    Mat<S> a(n, r);
    for (Eigen::Index i = 0; i < n; ++i) {
      const S row_max = logits.row(i).maxCoeff();
      a.row(i) = (logits.row(i).array() - row_max).exp();
      a.row(i) /= a.row(i).sum();
    }
    ctx.middleCols(h * dh, dh) = a * vh;
    probs[static_cast<size_t>(h)] = std::move(a);
  }
  if (cache) {
    cache->x = x;
    cache->memory = memory;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->probs = std::move(probs);
  }
  return ctx;
}

// Backward through attention_forward. Accumulates parameter gradients into
// `grad`; returns the query-source gradient. When `memory_grad` is set the
// key/value-source gradient is added to the returned matrix as well (used
// for self-attention where x and memory are the same tokens); otherwise the
// memory is treated as frozen input.
template <typename S>
Mat<S> attention_backward(const Mat<S>& d_ctx, const AttentionCache<S>& cache,
                          const AttentionParams<S>& p, int num_heads, bool memory_grad,
                          AttentionParams<S>& grad) {
  const Eigen::Index c = cache.q.cols();
  const Eigen::Index dh = c / num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> dq = Mat<S>::Zero(cache.q.rows(), c);
  Mat<S> dk = Mat<S>::Zero(cache.k.rows(), c);
  Mat<S> dv = Mat<S>::Zero(cache.v.rows(), c);
  for (int h = 0; h < num_heads; ++h) {
    const auto& a = cache.probs[static_cast<size_t>(h)];
    const auto dctx_h = d_ctx.middleCols(h * dh, dh);
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);

    dv.middleCols(h * dh, dh).noalias() += a.transpose() * dctx_h;
    Mat<S> da = dctx_h * vh.transpose();  // N x R
    Mat<S> dlogits(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const S dot = (da.row(i).array() * a.row(i).array()).sum();
      dlogits.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix() * scale;
    }
    dq.middleCols(h * dh, dh).noalias() += dlogits * kh;
    dk.middleCols(h * dh, dh).noalias() += dlogits.transpose() * qh;
  }

  Mat<S> dx = linear_backward(dq, cache.x, p.q, grad.q);
  Mat<S> dmem = linear_backward(dk, cache.memory, p.k, grad.k);
  dmem += linear_backward(dv, cache.memory, p.v, grad.v);
  if (memory_grad) dx += dmem;
  return dx;
}

// --- spec-level operations ----------------------------------------------------

// Row-wise projection from localization space into the ViL feature space.
template <typename S>
Mat<S> project_position_tokens(const Mat<S>& p_tokens, const Linear<S>& projector) {
  if (p_tokens.cols() != projector.w.rows()) {
    throw ShapeError("projector expects tokens of dim " + std::to_string(projector.w.rows()) +
                     ", got " + std::to_string(p_tokens.cols()));
  }
  if (!all_finite(p_tokens)) throw InvalidInputError("position tokens contain non-finite values");
  return linear_forward(p_tokens, projector);
}

template <typename S>
Mat<S> assemble_memory(const Mat<S>& grid_tokens, const Mat<S>& class_token,
                       bool use_class_token) {
  if (!use_class_token) return grid_tokens;
  Mat<S> memory(grid_tokens.rows() + 1, grid_tokens.cols());
  memory.topRows(grid_tokens.rows()) = grid_tokens;
  memory.row(grid_tokens.rows()) = class_token.row(0);
  return memory;
}

template <typename S>
struct CrossAttentionOut {
  Mat<S> output;              // N x C
  AttentionRecordT<S> record;  // head-averaged probabilities
};

// The fusion core: queries are projected region tokens, keys and values are
// separate linear projections of the semantic feature map (grid tokens plus
// the class token appended as one extra row when enabled).
template <typename S>
CrossAttentionOut<S> cross_attention(const Mat<S>& queries, const Mat<S>& grid_tokens,
                                     const Mat<S>& class_token, const AttentionParams<S>& params,
                                     int num_heads, bool use_class_token,
                                     AttentionCache<S>* cache = nullptr) {
  if (grid_tokens.rows() == 0) {
    throw InvalidInputError("cross_attention: semantic feature map has zero tokens");
  }
  if (!all_finite(queries) || !all_finite(grid_tokens)) {
    throw InvalidInputError("cross_attention: non-finite inputs");
  }
  const Mat<S> memory = assemble_memory(grid_tokens, class_token, use_class_token);
  AttentionCache<S> local;
  AttentionCache<S>* c = cache ? cache : &local;
  CrossAttentionOut<S> out;
  out.output = attention_forward(queries, memory, params, num_heads, c);
  if (!all_finite(out.output)) throw NumericalError("cross_attention produced non-finite output");
  Mat<S> mean = detail::zeros_like_mat(c->probs[0]);
  for (const auto& a : c->probs) mean += a;
  mean /= static_cast<S>(num_heads);
  out.record.weights = std::move(mean);
  return out;
}

inline CrossAttentionOut<float> cross_attention(const MatF& queries,
                                                const SemanticFeatureMap& v_map,
                                                const AttentionParams<float>& params,
                                                int num_heads, bool use_class_token) {
  MatF cls(1, v_map.class_token.cols());
  cls.row(0) = v_map.class_token;
  return cross_attention<float>(queries, v_map.grid_tokens, cls, params, num_heads,
                                use_class_token);
}

// --- full fusion stack ----------------------------------------------------------

template <typename S>
struct BlockCache {
  bool self_active = false;
  Mat<S> x_in;
  LayerNormCache<S> ln1;
  Mat<S> z1;
  AttentionCache<S> sa;
  Mat<S> sa_ctx;
  Mat<S> x1;
  LayerNormCache<S> ln2;
  Mat<S> z2;
  AttentionCache<S> ca;
  Mat<S> ca_ctx;
  Mat<S> x2;
  LayerNormCache<S> ln3;
  Mat<S> z3;
  Mat<S> ffn_pre;
  Mat<S> ffn_act;
};

template <typename S>
struct FusionCache {
  Mat<S> p_tokens;
  Mat<S> memory_grid;
  Mat<S> memory_cls;
  std::vector<BlockCache<S>> blocks;
};

// Pre-norm blocks of [self-attention -> cross-attention -> feed-forward],
// each sublayer with a residual connection. Self-attention is skipped when
// disabled or when there is a single region.
template <typename S>
FusionResult<S> fusion_forward(const Mat<S>& p_tokens, const Mat<S>& grid_tokens,
                               const Mat<S>& class_token, const FusionConfig& cfg,
                               const FusionParams<S>& params, bool record_attention = false,
                               FusionCache<S>* cache = nullptr) {
  cfg.validate();
  if (static_cast<int>(params.blocks.size()) != cfg.depth) {
    throw ShapeError("fusion parameters have " + std::to_string(params.blocks.size()) +
                     " blocks, config expects " + std::to_string(cfg.depth));
  }
  Mat<S> x = project_position_tokens(p_tokens, params.projector);
  if (cache) {
    cache->p_tokens = p_tokens;
    cache->memory_grid = grid_tokens;
    cache->memory_cls = class_token;
    cache->blocks.clear();
    cache->blocks.resize(params.blocks.size());
  }
  FusionResult<S> result;
  const bool any_rows = x.rows() > 0;
  for (int layer = 0; layer < cfg.depth; ++layer) {
    const auto& blk = params.blocks[static_cast<size_t>(layer)];
    BlockCache<S> local;
    BlockCache<S>& bc = cache ? cache->blocks[static_cast<size_t>(layer)] : local;
    bc.x_in = x;
    bc.self_active = cfg.use_self_attention && x.rows() > 1;
    if (bc.self_active) {
      bc.z1 = layer_norm_forward(x, blk.ln_self, &bc.ln1);
      bc.sa_ctx = attention_forward(bc.z1, bc.z1, blk.self_attn, cfg.num_heads, &bc.sa);
      bc.x1 = x + linear_forward(bc.sa_ctx, blk.self_attn.out);
    } else {
      bc.x1 = x;
    }
    bc.z2 = layer_norm_forward(bc.x1, blk.ln_cross, &bc.ln2);
    auto ca = cross_attention(bc.z2, grid_tokens, class_token, blk.cross_attn, cfg.num_heads,
                              cfg.use_class_token, &bc.ca);
    bc.ca_ctx = std::move(ca.output);
    bc.x2 = bc.x1 + linear_forward(bc.ca_ctx, blk.cross_attn.out);
    bc.z3 = layer_norm_forward(bc.x2, blk.ln_ffn, &bc.ln3);
    bc.ffn_pre = linear_forward(bc.z3, blk.ffn1);
    bc.ffn_act = bc.ffn_pre.unaryExpr([](S v) { return gelu_scalar(v); });
    x = bc.x2 + linear_forward(bc.ffn_act, blk.ffn2);
    if (record_attention) {
      ca.record.layer_index = layer;
      result.attention.push_back(std::move(ca.record));
    }
  }
  if (any_rows && !all_finite(x)) throw NumericalError("fusion_forward produced non-finite output");
  result.tokens = std::move(x);
  return result;
}

inline FusionResult<float> fusion_forward(const PositionAwareTokenSet& p,
                                          const SemanticFeatureMap& v_map,
                                          const FusionConfig& cfg,
                                          const FusionParams<float>& params,
                                          bool record_attention = false,
                                          FusionCache<float>* cache = nullptr) {
  MatF cls(1, v_map.class_token.cols());
  cls.row(0) = v_map.class_token;
  return fusion_forward<float>(p.tokens, v_map.grid_tokens, cls, cfg, params, record_attention,
                               cache);
}

// Backward through fusion_forward; accumulates into `grads`. Returns the
// gradient with respect to the input position tokens when requested.
template <typename S>
void fusion_backward(const Mat<S>& d_tokens, const FusionCache<S>& cache,
                     const FusionConfig& cfg, const FusionParams<S>& params,
                     FusionParams<S>& grads, Mat<S>* d_p_tokens = nullptr) {
  Mat<S> dx = d_tokens;
  for (int layer = cfg.depth - 1; layer >= 0; --layer) {
    const auto& blk = params.blocks[static_cast<size_t>(layer)];
    auto& gblk = grads.blocks[static_cast<size_t>(layer)];
    const auto& bc = cache.blocks[static_cast<size_t>(layer)];

    // x3 = x2 + ffn2(gelu(ffn1(LN3(x2))))
    Mat<S> d_act = linear_backward(dx, bc.ffn_act, blk.ffn2, gblk.ffn2);
    Mat<S> d_pre =
        (d_act.array() * bc.ffn_pre.unaryExpr([](S v) { return gelu_grad_scalar(v); }).array())
            .matrix();
    Mat<S> d_z3 = linear_backward(d_pre, bc.z3, blk.ffn1, gblk.ffn1);
    Mat<S> dx2 = dx + layer_norm_backward(d_z3, bc.ln3, blk.ln_ffn, gblk.ln_ffn);

    // x2 = x1 + out(cross_attention(LN2(x1), memory))
    Mat<S> d_ca_ctx = linear_backward(dx2, bc.ca_ctx, blk.cross_attn.out, gblk.cross_attn.out);
    Mat<S> d_z2 =
        attention_backward(d_ca_ctx, bc.ca, blk.cross_attn, cfg.num_heads, false, gblk.cross_attn);
    Mat<S> dx1 = dx2 + layer_norm_backward(d_z2, bc.ln2, blk.ln_cross, gblk.ln_cross);

    // x1 = x + out(self_attention(LN1(x)))
    if (bc.self_active) {
      Mat<S> d_sa_ctx = linear_backward(dx1, bc.sa_ctx, blk.self_attn.out, gblk.self_attn.out);
      Mat<S> d_z1 =
          attention_backward(d_sa_ctx, bc.sa, blk.self_attn, cfg.num_heads, true, gblk.self_attn);
      dx = dx1 + layer_norm_backward(d_z1, bc.ln1, blk.ln_self, gblk.ln_self);
    } else {
      dx = std::move(dx1);
    }
  }
  Mat<S> d_p = linear_backward(dx, cache.p_tokens, params.projector, grads.projector);
  if (d_p_tokens) *d_p_tokens = std::move(d_p);
}

}  // namespace regionspot

#endif  // REGIONSPOT_FUSION_HPP_
