// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sppl/error.hpp"
#include "sppl/ops.hpp"
#include "sppl/subseg.hpp"
#include "sppl/xl_model.hpp"
#include "testutil.hpp"

using namespace sppl;

namespace {

XLConfig tiny_config() {
  XLConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.head_size = 3;  // attention width 6 != hidden 8
  cfg.intermediate_size = 12;
  cfg.seg_len = 16;
  cfg.mem_len = 16;
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

Batch random_tokens(std::size_t rows, std::size_t cols, std::size_t vocab, Rng& rng) {
  Batch b;
  b.rows = rows;
  b.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    b.ids.push_back(5 + static_cast<int>(rng.uniform_int(vocab - 5)));
  }
  return b;
}

double naive_gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.79788456080286535588 * (x + 0.044715 * x * x * x)));
}

// Plain-loop reimplementation of the full causal forward (eval mode, no
// memory), deliberately independent of the tensor library.
std::vector<double> naive_causal_logits(const XlModel& model, const Batch& tokens) {
  const XLConfig& cfg = model.config();
  const ParamStore& ps = model.params();
  const std::size_t s = tokens.cols, h = cfg.hidden_size, hd = cfg.head_size;
  const std::size_t nh = cfg.num_heads, aw = nh * hd, ff = cfg.intermediate_size;
  const auto& emb = ps.get("tok_emb").values();
  const auto& ub = ps.get("u_bias").values();
  const auto& vb = ps.get("v_bias").values();

  // Sinusoidal rows for distances 0..s-1.
  std::vector<double> rel(s * h, 0.0);
  for (std::size_t d = 0; d < s; ++d) {
    for (std::size_t i = 0; i < h / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(h));
      rel[d * h + 2 * i] = std::sin(static_cast<double>(d) * freq);
      rel[d * h + 2 * i + 1] = std::cos(static_cast<double>(d) * freq);
    }
  }

  std::vector<double> out(tokens.rows * s * cfg.vocab_size, 0.0);
  for (std::size_t bi = 0; bi < tokens.rows; ++bi) {
    std::vector<std::vector<double>> x(s, std::vector<double>(h));
    for (std::size_t t = 0; t < s; ++t) {
      const int id = tokens.ids[bi * s + t];
      for (std::size_t c = 0; c < h; ++c) x[t][c] = emb[static_cast<std::size_t>(id) * h + c];
    }

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string pre = "l" + std::to_string(l) + ".";
      const auto& wq = ps.get(pre + "attn.wq").values();
      const auto& wk = ps.get(pre + "attn.wk").values();
      const auto& wv = ps.get(pre + "attn.wv").values();
      const auto& wr = ps.get(pre + "attn.wr").values();
      const auto& wo = ps.get(pre + "attn.wo").values();
      const auto& bo = ps.get(pre + "attn.bo").values();

      const auto project = [&](const std::vector<double>& w, const std::vector<double>& src_row,
                               std::size_t n, std::size_t d) {
        double acc = 0.0;
        for (std::size_t c = 0; c < h; ++c) acc += src_row[c] * w[c * aw + n * hd + d];
        return acc;
      };

      std::vector<std::vector<double>> attn_out(s, std::vector<double>(h, 0.0));
      for (std::size_t n = 0; n < nh; ++n) {
        std::vector<std::vector<double>> rk(s, std::vector<double>(hd));
        for (std::size_t d = 0; d < s; ++d) {
          for (std::size_t k2 = 0; k2 < hd; ++k2) {
            double acc = 0.0;
            for (std::size_t c = 0; c < h; ++c) acc += rel[d * h + c] * wr[c * aw + n * hd + k2];
            rk[d][k2] = acc;
          }
        }
        for (std::size_t i = 0; i < s; ++i) {
          std::vector<double> score(i + 1);
          for (std::size_t j = 0; j <= i; ++j) {
            double content = 0.0, position = 0.0;
            for (std::size_t d = 0; d < hd; ++d) {
              const double q = project(wq, x[i], n, d);
              content += (q + ub[n * hd + d]) * project(wk, x[j], n, d);
              position += (q + vb[n * hd + d]) * rk[i - j][d];
            }
            score[j] = (content + position) / std::sqrt(static_cast<double>(hd));
          }
          double mx = score[0];
          for (const double v : score) mx = std::max(mx, v);
          double denom = 0.0;
          for (double& v : score) {
            v = std::exp(v - mx);
            denom += v;
          }
          for (std::size_t d = 0; d < hd; ++d) {
            double ctx = 0.0;
            for (std::size_t j = 0; j <= i; ++j) ctx += (score[j] / denom) * project(wv, x[j], n, d);
            for (std::size_t c = 0; c < h; ++c) attn_out[i][c] += ctx * wo[(n * hd + d) * h + c];
          }
        }
      }

      const auto lnorm = [&](std::vector<double>& row, const std::vector<double>& g,
                             const std::vector<double>& b) {
        double mean = 0.0;
        for (const double v : row) mean += v;
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (const double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(h);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t c = 0; c < h; ++c) row[c] = g[c] * (row[c] - mean) * inv + b[c];
      };

      const auto& g1 = ps.get(pre + "ln1.g").values();
      const auto& b1 = ps.get(pre + "ln1.b").values();
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t c = 0; c < h; ++c) x[i][c] += attn_out[i][c] + bo[c];
        lnorm(x[i], g1, b1);
      }

      const auto& w1 = ps.get(pre + "ffn.w1").values();
      const auto& bf1 = ps.get(pre + "ffn.b1").values();
      const auto& w2 = ps.get(pre + "ffn.w2").values();
      const auto& bf2 = ps.get(pre + "ffn.b2").values();
      const auto& g2 = ps.get(pre + "ln2.g").values();
      const auto& b2 = ps.get(pre + "ln2.b").values();
      for (std::size_t i = 0; i < s; ++i) {
        std::vector<double> mid(ff);
        for (std::size_t f = 0; f < ff; ++f) {
          double acc = bf1[f];
          for (std::size_t c = 0; c < h; ++c) acc += x[i][c] * w1[c * ff + f];
          mid[f] = naive_gelu(acc);
        }
        std::vector<double> ffo(h);
        for (std::size_t c = 0; c < h; ++c) {
          double acc = bf2[c];
          for (std::size_t f = 0; f < ff; ++f) acc += mid[f] * w2[f * h + c];
          ffo[c] = acc;
        }
        for (std::size_t c = 0; c < h; ++c) x[i][c] += ffo[c];
        lnorm(x[i], g2, b2);
      }
    }

    const auto& ob = ps.get("out.bias").values();
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        double acc = ob[v];
        for (std::size_t c = 0; c < h; ++c) acc += x[i][c] * emb[v * h + c];
        out[(bi * s + i) * cfg.vocab_size + v] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("xl basics") {
  TEST_CASE("config validation") {
    XLConfig cfg = tiny_config();
    cfg.hidden_size = 7;
    CHECK_THROWS_AS(XlModel(cfg, 1), Error);
    cfg = tiny_config();
    cfg.seg_len = 0;
    CHECK_THROWS_AS(XlModel(cfg, 1), Error);
    cfg = tiny_config();
    cfg.vocab_size = 5;
    CHECK_THROWS_AS(XlModel(cfg, 1), Error);
  }

  TEST_CASE("memory lifecycle") {
    const XlModel model(tiny_config(), 2);
    XLMemory mem = model.init_memory(3);
    CHECK(mem.len() == 0);
    CHECK(mem.layers.size() == 2);

    Rng rng(4);
    const Batch seg = random_tokens(3, 5, 11, rng);
    mem = model.forward_segment(seg, mem).memory;
    CHECK(mem.len() == 5);  // min(mem_len 16, 5)
    mem = model.forward_segment(seg, mem).memory;
    CHECK(mem.len() == 10);
    for (int i = 0; i < 4; ++i) mem = model.forward_segment(seg, mem).memory;
    CHECK(mem.len() == 16);  // capped at mem_len
  }

  TEST_CASE("mem_len zero keeps memory empty") {
    XLConfig cfg = tiny_config();
    cfg.mem_len = 0;
    const XlModel model(cfg, 2);
    XLMemory mem = model.init_memory(1);
    Rng rng(4);
    const Batch seg = random_tokens(1, 4, 11, rng);
    mem = model.forward_segment(seg, mem).memory;
    CHECK(mem.len() == 0);
  }

  TEST_CASE("shape and batch errors") {
    const XlModel model(tiny_config(), 2);
    Rng rng(4);
    const Batch seg = random_tokens(1, 17, 11, rng);
    CHECK_THROWS_WITH_AS(model.forward_segment(seg, model.init_memory(1)) /**/,
                         doctest::Contains("seg_len"), Error);
    const Batch ok = random_tokens(2, 4, 11, rng);
    CHECK_THROWS_WITH_AS(model.forward_segment(ok, model.init_memory(3)) /**/,
                         doctest::Contains("batch mismatch"), Error);
  }
}

TEST_SUITE("xl recurrence") {
  TEST_CASE("no-memory forward matches the plain-loop reference") {
    for (const std::uint64_t seed : {1, 2, 3}) {
      XLConfig cfg = tiny_config();
      cfg.num_layers = 1 + seed % 2;
      cfg.mem_len = 0;
      const XlModel model(cfg, seed * 77);
      Rng rng(seed);
      const Batch seg = random_tokens(2, 5, 11, rng);
      const Tensor logits = model.forward_segment(seg, model.init_memory(2)).logits;
      const auto ref = naive_causal_logits(model, seg);
      REQUIRE(logits.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(logits.values()[i] - ref[i]) <= 1e-10);
      }
    }
  }

  TEST_CASE("memory-carried tail matches the reference on the whole sequence") {
    const XlModel model(tiny_config(), 31);
    Rng rng(6);
    const Batch whole = random_tokens(2, 9, 11, rng);
    const auto ref = naive_causal_logits(model, whole);

    Batch head = make_batch(2, 4, {});
    Batch tail = make_batch(2, 5, {});
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 9; ++c) {
        (c < 4 ? head : tail).ids.push_back(whole.ids[r * 9 + c]);
      }
    }
    const auto first = model.forward_segment(head, model.init_memory(2));
    const auto second = model.forward_segment(tail, first.memory);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < 5; ++c) {
        for (std::size_t v = 0; v < 11; ++v) {
          const double want = ref[(r * 9 + (4 + c)) * 11 + v];
          CHECK(std::abs(second.logits.at({r, c, v}) - want) <= 1e-8);
        }
      }
    }
  }

  TEST_CASE("segmented equals monolithic for random draws") {
    for (std::uint64_t draw = 0; draw < 6; ++draw) {
      XLConfig cfg = tiny_config();
      cfg.num_layers = 1 + draw % 2;
      cfg.num_heads = 1 + draw % 3;
      cfg.head_size = 2 + draw % 3;
      cfg.hidden_size = 6 + 2 * (draw % 2);
      const XlModel model(cfg, 100 + draw);
      Rng rng(200 + draw);
      const Batch whole = random_tokens(2, 8, 11, rng);
      const Tensor mono = model.forward_segment(whole, model.init_memory(2)).logits;

      XLMemory mem = model.init_memory(2);
      std::vector<double> seg_logits;
      for (std::size_t start = 0; start < 8; start += 4) {
        Batch part = make_batch(2, 4, {});
        for (std::size_t r = 0; r < 2; ++r) {
          for (std::size_t c = 0; c < 4; ++c) part.ids.push_back(whole.ids[r * 8 + start + c]);
        }
        const auto out = model.forward_segment(part, mem);
        mem = out.memory;
        for (std::size_t r = 0; r < 2; ++r) {
          for (std::size_t c = 0; c < 4; ++c) {
            for (std::size_t v = 0; v < 11; ++v) {
              const double got = out.logits.at({r, c, v});
              const double want = mono.at({r, start + c, v});
              CHECK(std::abs(got - want) <= 1e-8);
            }
          }
        }
      }
    }
  }

  TEST_CASE("stream NLL is independent of segmentation when memory suffices") {
    XLConfig cfg = tiny_config();
    cfg.seg_len = 12;
    cfg.mem_len = 32;
    const XlModel model(cfg, 41);
    Rng rng(8);
    const Batch whole = random_tokens(1, 12, 11, rng);
    std::vector<int> targets(whole.ids.begin() + 1, whole.ids.end());
    targets.push_back(SubwordVocab::kEos);

    const auto total_nll = [&](std::size_t step) {
      XLMemory mem = model.init_memory(1);
      double total = 0.0;
      for (std::size_t start = 0; start < 12; start += step) {
        const std::size_t len = std::min(step, 12 - start);
        Batch part = make_batch(1, len, std::vector<int>(whole.ids.begin() + start,
                                                         whole.ids.begin() + start + len));
        const auto out = model.forward_segment(part, mem);
        mem = out.memory;
        const std::vector<int> part_tgt(targets.begin() + start, targets.begin() + start + len);
        total += xl_loss(out.logits, part_tgt).item() * static_cast<double>(len);
      }
      return total;
    };

    const double full = total_nll(12);
    CHECK(std::abs(total_nll(3) - full) <= 1e-9);
    CHECK(std::abs(total_nll(4) - full) <= 1e-9);
    CHECK(std::abs(total_nll(6) - full) <= 1e-9);
  }

  TEST_CASE("forward is a pure function of tokens and memory") {
    const XlModel a(tiny_config(), 55);
    const XlModel b(tiny_config(), 55);
    Rng rng(5);
    const Batch s1 = random_tokens(1, 6, 11, rng);
    const Batch s2 = random_tokens(1, 6, 11, rng);
    const auto mem_a = a.forward_segment(s1, a.init_memory(1)).memory;
    // Inject a's memory into the separately constructed (identical) model.
    const Tensor via_a = a.forward_segment(s2, mem_a).logits;
    const Tensor via_b = b.forward_segment(s2, mem_a).logits;
    CHECK(via_a.values() == via_b.values());
  }
}

TEST_SUITE("xl causality and gradients") {
  TEST_CASE("future perturbations never move past logits") {
    const XlModel model(tiny_config(), 61);
    Rng rng(9);
    Batch seg = random_tokens(1, 6, 11, rng);
    const Tensor base = model.forward_segment(seg, model.init_memory(1)).logits;
    for (std::size_t j = 1; j < 6; ++j) {
      Batch bumped = seg;
      bumped.ids[j] = 5 + (bumped.ids[j] - 5 + 1) % 6;
      const Tensor moved = model.forward_segment(bumped, model.init_memory(1)).logits;
      for (std::size_t i = 0; i < j; ++i) {
        for (std::size_t v = 0; v < 11; ++v) {
          CHECK(moved.at({0, i, v}) == base.at({0, i, v}));  // exact
        }
      }
      double diff = 0.0;
      for (std::size_t v = 0; v < 11; ++v) {
        diff = std::max(diff, std::abs(moved.at({0, j, v}) - base.at({0, j, v})));
      }
      CHECK(diff > 0.0);  // the perturbed position itself does move
    }
  }

  TEST_CASE("memory is gradient-isolated") {
    XlModel model(tiny_config(), 71);
    Rng rng(10);
    const Batch s1 = random_tokens(2, 4, 11, rng);
    const Batch s2 = random_tokens(2, 4, 11, rng);
    std::vector<int> targets(s2.ids);

    const auto grads_with = [&](bool record_first_segment) {
      model.params().zero_grads();
      XLMemory mem = model.init_memory(2);
      if (!record_first_segment) {
        mem = model.forward_segment(s1, mem).memory;  // outside any tape
      }
      Tape tape;
      if (record_first_segment) mem = model.forward_segment(s1, mem).memory;
      const Tensor loss = xl_loss(model.forward_segment(s2, mem).logits, targets);
      tape.backward(loss);
      std::vector<std::vector<double>> out;
      for (const auto& [name, t] : model.params().entries()) out.push_back(t.grad_vector());
      return out;
    };

    CHECK(grads_with(true) == grads_with(false));
  }

  TEST_CASE("every parameter block receives gradient through a two-segment stream") {
    XlModel model(tiny_config(), 81);
    Rng rng(12);
    const Batch s1 = random_tokens(2, 5, 11, rng);
    const Batch s2 = random_tokens(2, 5, 11, rng);
    model.params().zero_grads();
    {
      Tape tape;
      Rng drop(3);
      XLMemory mem = model.init_memory(2);
      const auto o1 = model.forward_segment(s1, mem, true, drop);
      const Tensor l1 = xl_loss(o1.logits, s2.ids);
      const auto o2 = model.forward_segment(s2, o1.memory, true, drop);
      const Tensor l2 = xl_loss(o2.logits, s1.ids);
      tape.backward(add(l1, l2));
    }
    for (const auto& [name, t] : model.params().entries()) {
      double peak = 0.0;
      for (const double g : t.grad_vector()) peak = std::max(peak, std::abs(g));
      INFO("param ", name);
      CHECK(peak > 0.0);
    }
  }

  TEST_CASE("finite differences validate the segment forward with memory") {
    XlModel model(tiny_config(), 91);
    Rng rng(14);
    const Batch seg = random_tokens(2, 4, 11, rng);
    std::vector<int> targets(seg.ids);
    targets[3] = SubwordVocab::kPad;  // exercise the ignored-target path

    // Fixed random memory (a constant of the check, never rebuilt from the
    // parameters, matching the gradient-isolation contract).
    XLMemory mem;
    mem.batch = 2;
    for (std::size_t l = 0; l < 2; ++l) {
      mem.layers.push_back(Tensor::randn({2, 3, 8}, rng, 0.5));
    }

    const auto build = [&]() {
      Rng drop(77);
      return xl_loss(model.forward_segment(seg, mem, true, drop).logits, targets);
    };
    const auto rep = sppl::test::fd_check(model.params(), build);
    CHECK(rep.checked == model.params().total_values());
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_SUITE("xl loss") {
  TEST_CASE("closed forms and padding") {
    Tensor confident = Tensor::zeros({1, 2, 11});
    confident.mutable_values()[7] = 60.0;
    confident.mutable_values()[11 + 9] = 60.0;
    CHECK(xl_loss(confident, std::vector<int>{7, 9}).item() == doctest::Approx(0.0).epsilon(1e-9));

    const Tensor uniform = Tensor::full({1, 3, 11}, 1.5);
    const double got = xl_loss(uniform, std::vector<int>{5, 6, 7}).item();
    CHECK(got == doctest::Approx(std::log(11.0)).epsilon(1e-12));

    // A PAD target drops the position from the mean.
    const double padded = xl_loss(uniform, std::vector<int>{5, 6, SubwordVocab::kPad}).item();
    CHECK(padded == doctest::Approx(std::log(11.0)).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(
        xl_loss(uniform, std::vector<int>{SubwordVocab::kPad, SubwordVocab::kPad,
                                          SubwordVocab::kPad}) /**/,
        doctest::Contains("no supervised positions"), Error);
    CHECK_THROWS_AS(xl_loss(uniform, std::vector<int>{5}), Error);
  }
}
