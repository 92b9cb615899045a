// SPDX-License-Identifier: Apache-2.0
#include "sppl/xl_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "model_common.hpp"
#include "sppl/error.hpp"
#include "sppl/ops.hpp"
#include "sppl/subseg.hpp"

namespace sppl {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

std::string lname(std::size_t layer, const char* suffix) {
  return "l" + std::to_string(layer) + "." + suffix;
}

// Sinusoidal embeddings for relative distances 0..count-1, row d = distance
// d. Constant (never trained), rebuilt per forward for the current key
// length.
Tensor distance_embeddings(std::size_t count, std::size_t dim) {
  Tensor r = Tensor::zeros({count, dim});
  auto& vals = r.mutable_values();
  for (std::size_t d = 0; d < count; ++d) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      const double angle = static_cast<double>(d) * freq;
      vals[d * dim + 2 * i] = std::sin(angle);
      vals[d * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return r;
}

}  // namespace

void XLConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_heads == 0 || head_size == 0 ||
      intermediate_size == 0) {
    throw_usage("xl config: all sizes must be positive");
  }
  if (seg_len == 0) throw_usage("xl config: seg_len must be at least 1");
  if (hidden_size % 2 != 0) throw_usage("xl config: hidden_size must be even");
  if (vocab_size <= 5) throw_usage("xl config: vocab_size must exceed the specials");
  if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw_usage("xl config: dropout_prob outside [0, 1)");
}

XlModel::XlModel(XLConfig config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "xl-init"));
  const std::size_t h = cfg_.hidden_size;
  const std::size_t aw = cfg_.num_heads * cfg_.head_size;  // attention width
  params_.create("tok_emb", {cfg_.vocab_size, h}, rng, kInitStd);
  params_.create("u_bias", {cfg_.num_heads, 1, cfg_.head_size}, rng, kInitStd);
  params_.create("v_bias", {cfg_.num_heads, 1, cfg_.head_size}, rng, kInitStd);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    params_.create(lname(l, "attn.wq"), {h, aw}, rng, kInitStd);
    params_.create(lname(l, "attn.wk"), {h, aw}, rng, kInitStd);
    params_.create(lname(l, "attn.wv"), {h, aw}, rng, kInitStd);
    params_.create(lname(l, "attn.wr"), {h, aw}, rng, kInitStd);
    params_.create(lname(l, "attn.wo"), {aw, h}, rng, kInitStd);
    params_.create_zeros(lname(l, "attn.bo"), {h});
    detail::create_ones(params_, lname(l, "ln1.g"), {h});
    params_.create_zeros(lname(l, "ln1.b"), {h});
    params_.create(lname(l, "ffn.w1"), {h, cfg_.intermediate_size}, rng, kInitStd);
    params_.create_zeros(lname(l, "ffn.b1"), {cfg_.intermediate_size});
    params_.create(lname(l, "ffn.w2"), {cfg_.intermediate_size, h}, rng, kInitStd);
    params_.create_zeros(lname(l, "ffn.b2"), {h});
    detail::create_ones(params_, lname(l, "ln2.g"), {h});
    params_.create_zeros(lname(l, "ln2.b"), {h});
  }
  params_.create_zeros("out.bias", {cfg_.vocab_size});
}

XLMemory XlModel::init_memory(std::size_t batch_size) const {
  XLMemory mem;
  mem.batch = batch_size;
  mem.layers.reserve(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    mem.layers.push_back(Tensor::zeros({batch_size, 0, cfg_.hidden_size}));
  }
  return mem;
}

XlModel::SegmentOut XlModel::forward_segment(const Batch& tokens, const XLMemory& memory,
                                             bool train, Rng& rng) const {
  const std::size_t b = tokens.rows, s = tokens.cols, h = cfg_.hidden_size;
  if (b == 0 || s == 0) throw_data("forward_segment: empty segment");
  if (s > cfg_.seg_len) throw_data("forward_segment: segment longer than seg_len");
  if (tokens.ids.size() != b * s) throw_data("forward_segment: ragged segment");
  if (memory.layers.size() != cfg_.num_layers) throw_data("forward_segment: memory layer mismatch");
  if (memory.batch != b) throw_data("forward_segment: memory batch mismatch");
  const std::size_t m = memory.len();
  const std::size_t klen = m + s;
  const double p = cfg_.dropout_prob;

  // Causal additive mask over [segment query x concatenated key]: query i
  // sees memory fully and segment positions <= i.
  Tensor causal = Tensor::zeros({s, klen});
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = m + i + 1; j < klen; ++j) {
      causal.mutable_values()[i * klen + j] = detail::kMaskedScore;
    }
  }

  const Tensor rel = distance_embeddings(klen, h);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.head_size));
  const Tensor& u_bias = params_.get("u_bias");
  const Tensor& v_bias = params_.get("v_bias");

  Tensor x = reshape(embedding(params_.get("tok_emb"), tokens.ids), {b, s, h});
  x = dropout(x, p, rng, train);

  XLMemory new_mem;
  new_mem.batch = b;
  new_mem.layers.reserve(cfg_.num_layers);

  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const Tensor& mem_l = memory.layers[l];
    if (mem_l.dim(0) != b || mem_l.dim(2) != h) throw_data("forward_segment: memory shape mismatch");

    // Cache the input states of this layer for the next segment. Plain
    // value copies: nothing recorded, so no gradient can reach the cache.
    {
      const std::size_t kept = std::min(cfg_.mem_len, klen);
      Tensor keep = Tensor::zeros({b, kept, h});
      auto& kv = keep.mutable_values();
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t t = 0; t < kept; ++t) {
          const std::size_t g = klen - kept + t;
          const double* src = g < m ? &mem_l.values()[(bi * m + g) * h]
                                    : &x.values()[(bi * s + (g - m)) * h];
          std::copy(src, src + h, &kv[(bi * kept + t) * h]);
        }
      }
      new_mem.layers.push_back(std::move(keep));
    }

    const Tensor h_tilde = m == 0 ? x : concat(mem_l.detach(), x, 1);
    const Tensor q = detail::split_heads(matmul(x, params_.get(lname(l, "attn.wq"))),
                                         cfg_.num_heads, cfg_.head_size);
    const Tensor k = detail::split_heads(matmul(h_tilde, params_.get(lname(l, "attn.wk"))),
                                         cfg_.num_heads, cfg_.head_size);
    const Tensor v = detail::split_heads(matmul(h_tilde, params_.get(lname(l, "attn.wv"))),
                                         cfg_.num_heads, cfg_.head_size);
    // r_k [nh, klen, hd]: projected distance embeddings, row d = distance d.
    const Tensor r_k = permute(
        reshape(matmul(rel, params_.get(lname(l, "attn.wr"))), {klen, cfg_.num_heads, cfg_.head_size}),
        {1, 0, 2});

    const Tensor content = matmul(add(q, u_bias), permute(k, {0, 1, 3, 2}));
    const Tensor by_distance = matmul(add(q, v_bias), permute(r_k, {0, 2, 1}));
    const Tensor position = rel_gather(by_distance, m);
    Tensor scores = add(scale(add(content, position), inv_sqrt_d), causal);

    Tensor attn = dropout(softmax(scores, -1), p, rng, train);
    Tensor ctx = detail::merge_heads(matmul(attn, v));
    ctx = detail::linear(ctx, params_.get(lname(l, "attn.wo")), params_.get(lname(l, "attn.bo")));
    ctx = dropout(ctx, p, rng, train);
    x = layer_norm(add(x, ctx), params_.get(lname(l, "ln1.g")), params_.get(lname(l, "ln1.b")),
                   kLnEps);

    Tensor ff = gelu(detail::linear(x, params_.get(lname(l, "ffn.w1")), params_.get(lname(l, "ffn.b1"))));
    ff = detail::linear(ff, params_.get(lname(l, "ffn.w2")), params_.get(lname(l, "ffn.b2")));
    ff = dropout(ff, p, rng, train);
    x = layer_norm(add(x, ff), params_.get(lname(l, "ln2.g")), params_.get(lname(l, "ln2.b")),
                   kLnEps);
  }

  SegmentOut out;
  out.logits = add(matmul(x, permute(params_.get("tok_emb"), {1, 0})), params_.get("out.bias"));
  out.memory = std::move(new_mem);
  return out;
}

XlModel::SegmentOut XlModel::forward_segment(const Batch& tokens, const XLMemory& memory) const {
  Rng unused(0);
  return forward_segment(tokens, memory, false, unused);
}

Tensor xl_loss(const Tensor& logits, std::span<const int> next_token_targets) {
  if (logits.rank() != 3) throw_data("xl_loss: logits must be [batch x time x vocab]");
  const std::size_t n = logits.dim(0) * logits.dim(1);
  if (next_token_targets.size() != n) throw_data("xl_loss: target count mismatch");
  return cross_entropy(reshape(logits, {n, logits.dim(2)}), next_token_targets,
                       SubwordVocab::kPad);
}

}  // namespace sppl
