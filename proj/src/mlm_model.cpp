// SPDX-License-Identifier: Apache-2.0
#include "sppl/mlm_model.hpp"

#include <cmath>
#include <string>

#include "model_common.hpp"
#include "sppl/error.hpp"
#include "sppl/ops.hpp"
#include "sppl/subseg.hpp"

namespace sppl {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-12;
constexpr int kSpecialCount = 5;

std::string lname(std::size_t layer, const char* suffix) {
  return "l" + std::to_string(layer) + "." + suffix;
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers == 0 || hidden_size == 0 || num_heads == 0 || intermediate_size == 0 ||
      max_position == 0) {
    throw_usage("encoder config: all sizes must be positive");
  }
  if (hidden_size % num_heads != 0) throw_usage("encoder config: hidden_size not divisible by num_heads");
  if (vocab_size <= kSpecialCount) throw_usage("encoder config: vocab_size must exceed the specials");
  if (dropout_prob < 0.0 || dropout_prob >= 1.0) throw_usage("encoder config: dropout_prob outside [0, 1)");
}

std::size_t MaskedBatch::target_count() const {
  std::size_t n = 0;
  for (const int t : targets) n += (t != kIgnore);
  return n;
}

MaskedBatch mask_tokens(const Batch& batch, const MaskPolicy& policy, std::size_t vocab_size,
                        Rng& rng) {
  if (policy.mask_prob < 0.0 || policy.mask_prob > 1.0) throw_usage("mask_prob outside [0, 1]");
  if (policy.mask_frac < 0.0 || policy.random_frac < 0.0 ||
      policy.mask_frac + policy.random_frac > 1.0) {
    throw_usage("mask policy proportions must be nonnegative and sum to at most 1");
  }

  MaskedBatch out;
  out.rows = batch.rows;
  out.cols = batch.cols;
  out.input_ids = batch.ids;
  out.padding_mask.resize(batch.ids.size(), 0);
  out.targets.assign(batch.ids.size(), MaskedBatch::kIgnore);

  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    const int id = batch.ids[i];
    if (id == SubwordVocab::kMask) throw_data("mask_tokens: input already contains MASK");
    out.padding_mask[i] = (id != SubwordVocab::kPad) ? 1 : 0;
    if (id < kSpecialCount) continue;
    if (rng.uniform() >= policy.mask_prob) continue;
    out.targets[i] = id;
    const double action = rng.uniform();
    if (action < policy.mask_frac) {
      out.input_ids[i] = SubwordVocab::kMask;
    } else if (action < policy.mask_frac + policy.random_frac) {
      out.input_ids[i] =
          kSpecialCount + static_cast<int>(rng.uniform_int(vocab_size - kSpecialCount));
    }  // else: kept unchanged, still predicted
  }
  return out;
}

MlmModel::MlmModel(EncoderConfig config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "mlm-init"));
  const std::size_t h = cfg_.hidden_size;
  params_.create("tok_emb", {cfg_.vocab_size, h}, rng, kInitStd);
  params_.create("pos_emb", {cfg_.max_position, h}, rng, kInitStd);
  detail::create_ones(params_, "emb_ln.g", {h});
  params_.create_zeros("emb_ln.b", {h});
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    params_.create(lname(l, "attn.wq"), {h, h}, rng, kInitStd);
    params_.create_zeros(lname(l, "attn.bq"), {h});
    params_.create(lname(l, "attn.wk"), {h, h}, rng, kInitStd);
    params_.create_zeros(lname(l, "attn.bk"), {h});
    params_.create(lname(l, "attn.wv"), {h, h}, rng, kInitStd);
    params_.create_zeros(lname(l, "attn.bv"), {h});
    params_.create(lname(l, "attn.wo"), {h, h}, rng, kInitStd);
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

Tensor MlmModel::encode(const MaskedBatch& batch, bool train, Rng& rng) const {
  const std::size_t b = batch.rows, t = batch.cols, h = cfg_.hidden_size;
  if (b == 0 || t == 0) throw_data("encode: empty batch");
  if (t > cfg_.max_position) throw_data("sequence too long");
  if (batch.input_ids.size() != b * t || batch.padding_mask.size() != b * t) {
    throw_data("encode: ragged masked batch");
  }
  const double p = cfg_.dropout_prob;

  std::vector<int> pos_ids(b * t);
  for (std::size_t i = 0; i < b * t; ++i) pos_ids[i] = static_cast<int>(i % t);

  // 0 where attendable, kMaskedScore at padded keys; broadcasts over
  // [B, nh, T(query), T(key)].
  Tensor key_mask = Tensor::zeros({b, 1, 1, t});
  for (std::size_t i = 0; i < b * t; ++i) {
    if (batch.padding_mask[i] == 0) key_mask.mutable_values()[i] = detail::kMaskedScore;
  }

  Tensor x = add(embedding(params_.get("tok_emb"), batch.input_ids),
                 embedding(params_.get("pos_emb"), pos_ids));
  x = reshape(x, {b, t, h});
  x = layer_norm(x, params_.get("emb_ln.g"), params_.get("emb_ln.b"), kLnEps);
  x = dropout(x, p, rng, train);

  const std::size_t head_dim = h / cfg_.num_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const Tensor q = detail::split_heads(
        detail::linear(x, params_.get(lname(l, "attn.wq")), params_.get(lname(l, "attn.bq"))),
        cfg_.num_heads, head_dim);
    const Tensor k = detail::split_heads(
        detail::linear(x, params_.get(lname(l, "attn.wk")), params_.get(lname(l, "attn.bk"))),
        cfg_.num_heads, head_dim);
    const Tensor v = detail::split_heads(
        detail::linear(x, params_.get(lname(l, "attn.wv")), params_.get(lname(l, "attn.bv"))),
        cfg_.num_heads, head_dim);

    Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt_d);
    scores = add(scores, key_mask);
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

  // Output projection tied to the input embedding, plus a free bias.
  return add(matmul(x, permute(params_.get("tok_emb"), {1, 0})), params_.get("out.bias"));
}

Tensor MlmModel::encode(const MaskedBatch& batch) const {
  Rng unused(0);
  return encode(batch, false, unused);
}

MlmMetrics mlm_metrics(const Tensor& logits, const MaskedBatch& batch) {
  const std::size_t n = batch.rows * batch.cols;
  if (logits.rank() != 3 || logits.dim(0) != batch.rows || logits.dim(1) != batch.cols) {
    throw_data("mlm_metrics: logits shape does not match batch");
  }
  const std::size_t v = logits.dim(2);

  MlmMetrics m;
  m.loss = cross_entropy(reshape(logits, {n, v}), batch.targets, MaskedBatch::kIgnore);

  std::size_t supervised = 0, correct = 0;
  const auto& vals = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.targets[i] == MaskedBatch::kIgnore) continue;
    ++supervised;
    const double* row = vals.data() + i * v;
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = j;
    }
    correct += (static_cast<int>(best) == batch.targets[i]);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(supervised);
  return m;
}

}  // namespace sppl
