// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sppl/error.hpp"
#include "sppl/mlm_model.hpp"
#include "sppl/ops.hpp"
#include "sppl/subseg.hpp"
#include "testutil.hpp"

using namespace sppl;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.intermediate_size = 12;
  cfg.max_position = 8;
  cfg.dropout_prob = 0.1;
  cfg.vocab_size = 11;
  return cfg;
}

Batch make_batch(std::size_t rows, std::size_t cols, const std::vector<int>& ids) {
  Batch b;
  b.rows = rows;
  b.cols = cols;
  b.ids = ids;
  return b;
}

MaskedBatch unmasked(std::size_t rows, std::size_t cols, const std::vector<int>& ids) {
  MaskedBatch mb;
  mb.rows = rows;
  mb.cols = cols;
  mb.input_ids = ids;
  mb.padding_mask.reserve(ids.size());
  for (const int id : ids) mb.padding_mask.push_back(id != SubwordVocab::kPad ? 1 : 0);
  mb.targets.assign(ids.size(), MaskedBatch::kIgnore);
  return mb;
}

// Random batch of non-special ids framed SOS .. EOS.
Batch random_batch(std::size_t rows, std::size_t cols, std::size_t vocab, Rng& rng) {
  Batch b;
  b.rows = rows;
  b.cols = cols;
  for (std::size_t r = 0; r < rows; ++r) {
    b.ids.push_back(SubwordVocab::kSos);
    for (std::size_t c = 1; c + 1 < cols; ++c) {
      b.ids.push_back(5 + static_cast<int>(rng.uniform_int(vocab - 5)));
    }
    b.ids.push_back(SubwordVocab::kEos);
  }
  return b;
}

}  // namespace

TEST_SUITE("mask_tokens") {
  TEST_CASE("mask_prob zero passes the batch through") {
    const Batch b = make_batch(1, 6, {3, 7, 8, 9, 10, 4});
    Rng rng(1);
    const MaskedBatch mb = mask_tokens(b, MaskPolicy{0.0, 0.8, 0.1}, 11, rng);
    CHECK(mb.input_ids == b.ids);
    CHECK(mb.target_count() == 0);
  }

  TEST_CASE("mask_prob one with pure MASK policy hits every eligible position") {
    const Batch b = make_batch(1, 7, {3, 7, 8, 9, 10, 4, 0});
    Rng rng(1);
    const MaskedBatch mb = mask_tokens(b, MaskPolicy{1.0, 1.0, 0.0}, 11, rng);
    const std::vector<int> want{3, 2, 2, 2, 2, 4, 0};
    CHECK(mb.input_ids == want);
    CHECK(mb.target_count() == 4);
    CHECK(mb.targets[1] == 7);
    CHECK(mb.targets[4] == 10);
    CHECK(mb.targets[0] == MaskedBatch::kIgnore);
    CHECK(mb.padding_mask == std::vector<int>{1, 1, 1, 1, 1, 1, 0});
  }

  TEST_CASE("selection replays the documented draw protocol") {
    const std::size_t vocab = 23;
    const Batch b = make_batch(1, 12, {3, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 4});
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Rng rng(seed);
      const MaskedBatch got = mask_tokens(b, MaskPolicy{0.15, 0.8, 0.1}, vocab, rng);

      Rng ref(seed);
      std::vector<int> want_ids = b.ids;
      std::vector<int> want_tgt(b.ids.size(), MaskedBatch::kIgnore);
      for (std::size_t i = 0; i < b.ids.size(); ++i) {
        if (b.ids[i] < 5) continue;
        if (ref.uniform() >= 0.15) continue;
        want_tgt[i] = b.ids[i];
        const double a = ref.uniform();
        if (a < 0.8) {
          want_ids[i] = SubwordVocab::kMask;
        } else if (a < 0.9) {
          want_ids[i] = 5 + static_cast<int>(ref.uniform_int(vocab - 5));
        }
      }
      CHECK(got.input_ids == want_ids);
      CHECK(got.targets == want_tgt);
    }
  }

  TEST_CASE("all-special rows pass through with zero targets") {
    const Batch b = make_batch(1, 3, {3, 4, 0});
    Rng rng(9);
    const MaskedBatch mb = mask_tokens(b, MaskPolicy{1.0, 1.0, 0.0}, 11, rng);
    CHECK(mb.input_ids == b.ids);
    CHECK(mb.target_count() == 0);
  }

  TEST_CASE("invalid inputs are rejected") {
    const Batch b = make_batch(1, 2, {3, 4});
    Rng rng(1);
    CHECK_THROWS_AS(mask_tokens(b, MaskPolicy{-0.1, 0.8, 0.1}, 11, rng), Error);
    CHECK_THROWS_AS(mask_tokens(b, MaskPolicy{1.1, 0.8, 0.1}, 11, rng), Error);
    CHECK_THROWS_AS(mask_tokens(b, MaskPolicy{0.5, 0.8, 0.3}, 11, rng), Error);
    const Batch with_mask = make_batch(1, 3, {3, 2, 4});
    CHECK_THROWS_WITH_AS(mask_tokens(with_mask, MaskPolicy{}, 11, rng) /**/,
                         doctest::Contains("MASK"), Error);
  }
}

TEST_SUITE("mlm encode") {
  TEST_CASE("config validation") {
    EncoderConfig cfg = tiny_config();
    cfg.num_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(MlmModel(cfg, 1), Error);
    cfg = tiny_config();
    cfg.vocab_size = 5;
    CHECK_THROWS_AS(MlmModel(cfg, 1), Error);
    cfg = tiny_config();
    cfg.dropout_prob = 1.0;
    CHECK_THROWS_AS(MlmModel(cfg, 1), Error);
    cfg = tiny_config();
    cfg.num_layers = 0;
    CHECK_THROWS_AS(MlmModel(cfg, 1), Error);
  }

  TEST_CASE("logit shape and eval determinism") {
    const MlmModel model(tiny_config(), 3);
    const MaskedBatch mb = unmasked(2, 5, {3, 7, 2, 8, 4, 3, 9, 10, 2, 4});
    const Tensor a = model.encode(mb);
    CHECK(a.shape() == Shape{2, 5, 11});
    const Tensor b = model.encode(mb);
    CHECK(a.values() == b.values());
  }

  TEST_CASE("sequences beyond max_position are rejected") {
    const MlmModel model(tiny_config(), 3);
    std::vector<int> ids(9, 5);
    CHECK_THROWS_WITH_AS(model.encode(unmasked(1, 9, ids)) /**/,
                         doctest::Contains("sequence too long"), Error);
  }

  TEST_CASE("permuting rows permutes logits identically") {
    const MlmModel model(tiny_config(), 5);
    const MaskedBatch ab = unmasked(2, 4, {3, 7, 8, 4, 3, 9, 10, 4});
    const MaskedBatch ba = unmasked(2, 4, {3, 9, 10, 4, 3, 7, 8, 4});
    const Tensor x = model.encode(ab);
    const Tensor y = model.encode(ba);
    const std::size_t half = x.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      CHECK(x.values()[i] == y.values()[half + i]);
      CHECK(x.values()[half + i] == y.values()[i]);
    }
  }

  TEST_CASE("appended padding leaves real positions unchanged") {
    const MlmModel model(tiny_config(), 7);
    const MaskedBatch base = unmasked(1, 4, {3, 7, 8, 4});
    MaskedBatch padded = unmasked(1, 7, {3, 7, 8, 4, 0, 0, 0});
    const Tensor a = model.encode(base);
    const Tensor b = model.encode(padded);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a.values()[i] - b.values()[i]) <= 1e-10);
    }
  }

  TEST_CASE("bidirectionality: right context reaches a masked position") {
    const MlmModel model(tiny_config(), 11);
    // MASK at position 2; change a token strictly to its right.
    const MaskedBatch left = unmasked(1, 6, {3, 7, 2, 8, 9, 4});
    const MaskedBatch right = unmasked(1, 6, {3, 7, 2, 8, 10, 4});
    const Tensor a = model.encode(left);
    const Tensor b = model.encode(right);
    double diff = 0.0;
    for (std::size_t v = 0; v < 11; ++v) {
      diff = std::max(diff, std::abs(a.at({0, 2, v}) - b.at({0, 2, v})));
    }
    CHECK(diff > 1e-8);
  }

  TEST_CASE("train mode dropout changes activations, eval is unaffected") {
    const MlmModel model(tiny_config(), 13);
    const MaskedBatch mb = unmasked(1, 4, {3, 7, 8, 4});
    Rng rng(21);
    const Tensor train_logits = model.encode(mb, true, rng);
    const Tensor eval_logits = model.encode(mb);
    double diff = 0.0;
    for (std::size_t i = 0; i < eval_logits.size(); ++i) {
      diff = std::max(diff, std::abs(train_logits.values()[i] - eval_logits.values()[i]));
    }
    CHECK(diff > 1e-8);
  }

  TEST_CASE("every parameter block receives gradient") {
    MlmModel model(tiny_config(), 17);
    Rng data_rng(3);
    const Batch raw = random_batch(2, 6, 11, data_rng);
    Rng mask_rng(5);
    const MaskedBatch mb = mask_tokens(raw, MaskPolicy{0.5, 0.8, 0.1}, 11, mask_rng);
    REQUIRE(mb.target_count() > 0);
    model.params().zero_grads();
    {
      Tape tape;
      Rng drop_rng(7);
      const Tensor logits = model.encode(mb, true, drop_rng);
      tape.backward(mlm_metrics(logits, mb).loss);
    }
    for (const auto& [name, t] : model.params().entries()) {
      double peak = 0.0;
      for (const double g : t.grad_vector()) peak = std::max(peak, std::abs(g));
      INFO("param ", name);
      CHECK(peak > 0.0);
    }
  }

  TEST_CASE("finite differences validate the whole encoder") {
    MlmModel model(tiny_config(), 23);
    Rng data_rng(11);
    const Batch raw = random_batch(2, 5, 11, data_rng);
    Rng mask_rng(13);
    const MaskedBatch mb = mask_tokens(raw, MaskPolicy{0.4, 0.8, 0.1}, 11, mask_rng);
    REQUIRE(mb.target_count() > 0);
    const auto build = [&]() {
      Rng drop_rng(29);  // fixed dropout mask per evaluation
      return mlm_metrics(model.encode(mb, true, drop_rng), mb).loss;
    };
    const auto rep = sppl::test::fd_check(model.params(), build);
    CHECK(rep.checked == model.params().total_values());
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_SUITE("mlm metrics") {
  TEST_CASE("confident correct predictions give zero loss and full accuracy") {
    MaskedBatch mb = unmasked(1, 3, {3, 2, 4});
    mb.targets[1] = 6;
    Tensor logits = Tensor::zeros({1, 3, 11});
    logits.mutable_values()[1 * 11 + 6] = 60.0;
    const MlmMetrics m = mlm_metrics(logits, mb);
    CHECK(m.loss.item() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m.accuracy == 1.0);
  }

  TEST_CASE("uniform logits give ln V loss") {
    MaskedBatch mb = unmasked(1, 4, {3, 2, 2, 4});
    mb.targets[1] = 7;
    mb.targets[2] = 9;
    const Tensor logits = Tensor::full({1, 4, 100}, 0.25);
    const MlmMetrics m = mlm_metrics(logits, mb);
    CHECK(m.loss.item() == doctest::Approx(std::log(100.0)).epsilon(1e-12));
  }

  TEST_CASE("chance accuracy under random logits") {
    const std::size_t v = 10, n = 400;
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      MaskedBatch mb;
      mb.rows = 1;
      mb.cols = n;
      mb.input_ids.assign(n, 2);
      mb.padding_mask.assign(n, 1);
      for (std::size_t i = 0; i < n; ++i) {
        mb.targets.push_back(static_cast<int>(rng.uniform_int(v)));
      }
      const Tensor logits = Tensor::randn({1, n, v}, rng, 1.0);
      acc += mlm_metrics(logits, mb).accuracy;
    }
    acc /= 5.0;
    CHECK(std::abs(acc - 0.1) < 0.03);
  }

  TEST_CASE("no supervised positions is an error") {
    const MaskedBatch mb = unmasked(1, 3, {3, 7, 4});
    const Tensor logits = Tensor::zeros({1, 3, 11});
    CHECK_THROWS_WITH_AS(mlm_metrics(logits, mb) /**/,
                         doctest::Contains("no supervised positions"), Error);
  }
}
