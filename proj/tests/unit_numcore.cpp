// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "sppl/error.hpp"
#include "sppl/ops.hpp"
#include "sppl/optim.hpp"
#include "sppl/params.hpp"
#include "sppl/rng.hpp"
#include "sppl/tensor.hpp"
#include "testutil.hpp"

using namespace sppl;

TEST_SUITE("rng") {
  TEST_CASE("same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("state roundtrip resumes mid-stream") {
    Rng a(7);
    for (int i = 0; i < 17; ++i) a.next_u64();
    const auto st = a.state();
    std::vector<std::uint64_t> rest;
    for (int i = 0; i < 50; ++i) rest.push_back(a.next_u64());
    Rng b(999);
    b.set_state(st);
    for (int i = 0; i < 50; ++i) CHECK(b.next_u64() == rest[static_cast<std::size_t>(i)]);
  }

  TEST_CASE("uniform lies in [0,1) and fills the range") {
    Rng r(3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const double u = r.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      lo = std::min(lo, u);
      hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
  }

  TEST_CASE("uniform_int respects bounds and hits every residue") {
    Rng r(11);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
      const auto v = r.uniform_int(7);
      CHECK(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
  }

  TEST_CASE("normal has roughly standard moments") {
    Rng r(5);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double x = r.normal();
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
  }

  TEST_CASE("shuffle is a permutation and depends on seed only") {
    std::vector<int> v(30);
    for (int i = 0; i < 30; ++i) v[static_cast<std::size_t>(i)] = i;
    auto a = v, b = v;
    Rng r1(9), r2(9);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
    CHECK(a != v);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
  }

  TEST_CASE("derive_seed separates labelled streams") {
    const auto s1 = derive_seed(123, "init");
    const auto s2 = derive_seed(123, "data");
    const auto s3 = derive_seed(123, "data", 1);
    const auto s4 = derive_seed(124, "init");
    CHECK(s1 != s2);
    CHECK(s2 != s3);
    CHECK(s1 != s4);
    CHECK(s1 == derive_seed(123, "init"));
  }
}

TEST_SUITE("tensor") {
  TEST_CASE("construction and indexing") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    CHECK(t.at({0, 0}) == 1.0);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(Tensor::scalar(4.5).item() == 4.5);
    CHECK(Tensor::full({2, 2}, 3.0).values() == std::vector<double>{3, 3, 3, 3});
  }

  TEST_CASE("grad buffer is lazy and zero_grad clears it") {
    Tensor t = Tensor::zeros({4}, true);
    CHECK(t.grad_raw().empty());
    CHECK(t.grad_vector() == std::vector<double>(4, 0.0));
    t.grad_buffer()[2] = 5.0;
    CHECK(t.grad_vector()[2] == 5.0);
    t.zero_grad();
    CHECK(t.grad_raw().empty());
  }

  TEST_CASE("detach copies values and severs tracking") {
    Tensor t = Tensor::from_data({2}, {1, 2}, true);
    Tensor d = t.detach();
    CHECK_FALSE(d.requires_grad());
    CHECK_FALSE(d.same_node(t));
    CHECK(d.values() == t.values());
  }

  TEST_CASE("backward rejects non-scalar losses") {
    Tape tape;
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = scale(a, 2.0);
    CHECK_THROWS_AS(tape.backward(y), Error);
  }
}

TEST_SUITE("ops forward oracles") {
  TEST_CASE("matmul matches the hand example") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
  }

  TEST_CASE("matmul broadcasts batch dims against a naive loop") {
    Rng rng(21);
    Tensor a = Tensor::randn({3, 2, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 5}, rng, 1.0);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{3, 2, 5});
    for (std::size_t bt = 0; bt < 3; ++bt)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < 4; ++k) s += a.at({bt, i, k}) * b.at({k, j});
          CHECK(c.at({bt, i, j}) == doctest::Approx(s).epsilon(1e-12));
        }
  }

  TEST_CASE("matmul rejects inner mismatch") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), Error);
  }

  TEST_CASE("softmax of [0, ln 2] is [1/3, 2/3]") {
    Tensor x = Tensor::from_data({2}, {0.0, std::log(2.0)});
    Tensor y = softmax(x, -1);
    CHECK(y.at({0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(y.at({1}) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("softmax handles huge logits without overflow") {
    Tensor x = Tensor::from_data({3}, {1000.0, 1000.0, -1000.0});
    Tensor y = softmax(x, 0);
    CHECK(y.at({0}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(y.at({2}) == doctest::Approx(0.0));
  }

  TEST_CASE("softmax along a middle axis normalises lanes") {
    Rng rng(4);
    Tensor x = Tensor::randn({2, 3, 4}, rng, 2.0);
    Tensor y = softmax(x, 1);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < 3; ++j) s += y.at({i, j, k});
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
  }

  TEST_CASE("layer_norm normalises [1,3] to [-1,1]") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, 3.0});
    Tensor g = Tensor::full({2}, 1.0);
    Tensor b = Tensor::zeros({2});
    Tensor y = layer_norm(x, g, b, 0.0);
    CHECK(y.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("gelu frozen values") {
    Tensor x = Tensor::from_data({4}, {0.0, 1.0, -0.5, 2.0});
    Tensor y = gelu(x);
    CHECK(y.at({0}) == 0.0);
    CHECK(y.at({1}) == doctest::Approx(0.8411919906082768).epsilon(1e-14));
    CHECK(y.at({2}) == doctest::Approx(-0.15428599017485606).epsilon(1e-14));
    CHECK(y.at({3}) == doctest::Approx(1.954597694087775).epsilon(1e-14));
  }

  TEST_CASE("cross_entropy equals hand-computed log-sum-exp") {
    Tensor z = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0});
    std::vector<int> t{2};
    Tensor l = cross_entropy(z, t, -1);
    CHECK(l.item() == doctest::Approx(0.4076059644443806).epsilon(1e-14));
  }

  TEST_CASE("cross_entropy averages over supervised rows only") {
    Tensor z = Tensor::from_data({3, 2}, {0, 0, 5, 0, 0, 0});
    std::vector<int> t{0, -1, 1};
    Tensor l = cross_entropy(z, t, -1);
    CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }

  TEST_CASE("cross_entropy error cases") {
    Tensor z = Tensor::zeros({2, 3});
    std::vector<int> bad{0, 3};
    CHECK_THROWS_WITH_AS(cross_entropy(z, bad, -1) /**/, doctest::Contains("vocab overflow"), Error);
    std::vector<int> none{-1, -1};
    CHECK_THROWS_WITH_AS(cross_entropy(z, none, -1) /**/, doctest::Contains("no supervised positions"),
                         Error);
  }

  TEST_CASE("embedding gathers rows and validates ids") {
    Tensor tbl = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
    std::vector<int> ids{2, 0, 2};
    Tensor e = embedding(tbl, ids);
    CHECK(e.values() == std::vector<double>{20, 21, 0, 1, 20, 21});
    std::vector<int> bad{3};
    CHECK_THROWS_AS(embedding(tbl, bad), Error);
  }

  TEST_CASE("concat on each axis") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    CHECK(concat(a, b, 0).values() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(concat(a, b, 1).values() == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
  }

  TEST_CASE("permute transposes") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor t = permute(a, {1, 0});
    REQUIRE(t.shape() == Shape{3, 2});
    CHECK(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
  }

  TEST_CASE("rel_gather shifts rows per the frozen example") {
    // x: [1,2,3], mem_len 1: y[i][j] = x[i][1+i-j] where 0 <= 1+i-j < 3.
    Tensor x = Tensor::from_data({1, 2, 3}, {10, 11, 12, 20, 21, 22});
    Tensor y = rel_gather(x, 1);
    CHECK(y.values() == std::vector<double>{11, 10, 0, 22, 21, 20});
  }

  TEST_CASE("dropout identity paths and mask statistics") {
    Rng rng(17);
    Tensor x = Tensor::full({1000}, 2.0);
    Tensor same = dropout(x, 0.0, rng, true);
    CHECK(same.same_node(x));
    Tensor eval = dropout(x, 0.5, rng, false);
    CHECK(eval.same_node(x));
    Tensor y = dropout(x, 0.25, rng, true);
    std::size_t kept = 0;
    for (const double v : y.values()) {
      const bool zero = v == 0.0;
      const bool scaled = std::abs(v - 2.0 / 0.75) < 1e-12;
      CHECK((zero || scaled));
      kept += scaled;
    }
    CHECK(kept > 650);
    CHECK(kept < 850);
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("mul backward gives the other operand") {
    Tape tape;
    Tensor a = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor b = Tensor::from_data({3}, {4, 5, 6}, true);
    Tensor l = sum_all(mul(a, b));
    tape.backward(l);
    CHECK(a.grad_vector() == std::vector<double>{4, 5, 6});
    CHECK(b.grad_vector() == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("broadcast add accumulates into the small side") {
    Tape tape;
    Tensor a = Tensor::zeros({2, 3}, true);
    Tensor b = Tensor::zeros({3}, true);
    tape.backward(sum_all(add(a, b)));
    CHECK(b.grad_vector() == std::vector<double>{2, 2, 2});
    CHECK(a.grad_vector() == std::vector<double>(6, 1.0));
  }

  TEST_CASE("matmul backward matches hand example") {
    Tape tape;
    Tensor a = Tensor::from_data({1, 2}, {1, 2}, true);
    Tensor b = Tensor::from_data({2, 1}, {3, 4}, true);
    tape.backward(sum_all(matmul(a, b)));
    CHECK(a.grad_vector() == std::vector<double>{3, 4});
    CHECK(b.grad_vector() == std::vector<double>{1, 2});
  }

  TEST_CASE("gradients accumulate across reuse") {
    Tape tape;
    Tensor a = Tensor::from_data({1}, {3}, true);
    Tensor l = add(mul(a, a), scale(a, 2.0));  // a^2 + 2a, d/da = 2a + 2 = 8
    tape.backward(sum_all(l));
    CHECK(a.grad_vector()[0] == doctest::Approx(8.0).epsilon(1e-14));
  }

  TEST_CASE("detach blocks gradient flow") {
    Tape tape;
    Tensor a = Tensor::from_data({1}, {3}, true);
    Tensor l = mul(a.detach(), a);  // only the tracked factor gets grad
    tape.backward(sum_all(l));
    CHECK(a.grad_vector()[0] == doctest::Approx(3.0));
  }

  TEST_CASE("loss seed is exactly one") {
    Tape tape;
    Tensor a = Tensor::from_data({1}, {5}, true);
    Tensor l = sum_all(a);
    tape.backward(l);
    CHECK(l.grad_vector()[0] == 1.0);
    CHECK(a.grad_vector()[0] == 1.0);
  }

  TEST_CASE("no recording without an active tape") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = scale(a, 3.0);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("composite graph passes central-difference check on every op") {
    Rng init(1234);
    ParamStore ps;
    ps.create("emb", {7, 4}, init, 0.5);
    ps.create("gamma", {4}, init, 0.2);
    ps.create("beta", {4}, init, 0.2);
    ps.create("w1", {4, 6}, init, 0.5);
    ps.create("b1", {6}, init, 0.5);
    ps.create("w2", {12, 5}, init, 0.5);
    // gamma near 1 keeps layer_norm well-conditioned
    for (auto& v : ps.get("gamma").mutable_values()) v += 1.0;

    Rng drop(777);
    const auto drop0 = drop.state();
    const std::vector<int> ids{1, 3, 5, 2};
    const std::vector<int> targets{0, 4, 2, -1};
    auto build = [&]() {
      drop.set_state(drop0);
      Tensor e = embedding(ps.get("emb"), ids);
      Tensor h = layer_norm(e, ps.get("gamma"), ps.get("beta"), 1e-5);
      Tensor q = add(matmul(h, ps.get("w1")), ps.get("b1"));
      Tensor g = gelu(q);
      Tensor gd = dropout(g, 0.25, drop, true);
      Tensor g2 = sub(gd, scale(gd, 0.25));
      Tensor s = softmax(g2, -1);
      Tensor r = rel_gather(s, 2);
      Tensor c = concat(g2, r, 1);
      Tensor p = permute(c, {1, 0});
      Tensor z = reshape(p, {4, 12});
      Tensor m = mul(z, scale(z, 0.5));
      Tensor l1 = cross_entropy(matmul(m, ps.get("w2")), targets, -1);
      Tensor l2 = scale(sum_all(mul(s, s)), 0.1);
      return add(l1, l2);
    };
    const auto rep = sppl::test::fd_check(ps, build, 1e-5);
    CHECK(rep.checked == 7 * 4 + 4 + 4 + 4 * 6 + 6 + 12 * 5);
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_SUITE("optim") {
  TEST_CASE("adam first two steps with unit gradient move by -lr each") {
    ParamStore ps;
    Tensor& p = ps.create_zeros("w", {1});
    Adam opt;
    for (int step = 0; step < 2; ++step) {
      ps.zero_grads();
      p.grad_buffer()[0] = 1.0;
      opt.step(ps, 0.1);
    }
    // bias-corrected m̂=v̂=1 while the gradient is constant
    CHECK(p.values()[0] == doctest::Approx(-0.2).epsilon(1e-7));
    CHECK(opt.t() == 2);
  }

  TEST_CASE("adam rejects non-finite gradients") {
    ParamStore ps;
    Tensor& p = ps.create_zeros("w", {1});
    p.grad_buffer()[0] = std::numeric_limits<double>::quiet_NaN();
    Adam opt;
    CHECK_THROWS_AS(opt.step(ps, 0.1), Error);
  }

  TEST_CASE("lr schedule closed forms") {
    LrSchedule s{1.0, 10, 110, 0.0};
    CHECK(s.lr_at(5) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.lr_at(10) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.lr_at(60) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.lr_at(110) == doctest::Approx(0.0));
    CHECK(s.lr_at(500) == doctest::Approx(0.0));
    LrSchedule m{2.0, 0, 100, 0.5};
    CHECK(m.lr_at(50) == doctest::Approx(0.5 + 1.5 * 0.5 * (1.0 + std::cos(0.5 * 3.14159265358979323846))));
    CHECK(m.lr_at(100) == doctest::Approx(0.5));
  }

  TEST_CASE("global norm clipping") {
    ParamStore ps;
    Tensor& p = ps.create_zeros("w", {2});
    p.grad_buffer()[0] = 3.0;
    p.grad_buffer()[1] = 4.0;
    CHECK(clip_global_norm(ps, 10.0) == doctest::Approx(5.0));
    CHECK(p.grad_vector() == std::vector<double>{3, 4});
    CHECK(clip_global_norm(ps, 1.0) == doctest::Approx(5.0));
    CHECK(p.grad_vector()[0] == doctest::Approx(0.6));
    CHECK(p.grad_vector()[1] == doctest::Approx(0.8));
    CHECK(clip_global_norm(ps, 0.0) == doctest::Approx(1.0));  // disabled, returns norm
  }
}
