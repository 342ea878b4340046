#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dpmkit/params.hpp"
#include "dpmkit/tape.hpp"
#include "oracles.hpp"

using dpmkit::Mat;
using dpmkit::Tape;
using dpmkit::Var;

TEST_CASE("elementwise and matmul ops match finite differences") {
  std::mt19937_64 rng(11);
  Mat a = Mat::randn(3, 4, rng);
  Mat b = Mat::randn(3, 4, rng);
  Mat w = Mat::randn(4, 5, rng);

  struct Case {
    const char* name;
    std::function<Var(Tape&, Var, Var, Var)> run;  // returns a 1x1 scalar node
  };

  std::vector<Case> cases = {
      {"add", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.mul(t.add(va, vb), t.add(va, vb))); }},
      {"sub_mul", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.mul(t.sub(va, vb), va)); }},
      {"matmul", [&](Tape& t, Var va, Var, Var vw) { return t.sum_all(t.mul(t.matmul(va, vw), t.matmul(va, vw))); }},
      {"matmul_nt", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.matmul_nt(va, vb)); }},
      {"sigmoid", [&](Tape& t, Var va, Var, Var) { return t.sum_all(t.mul(t.sigmoid(va), t.sigmoid(va))); }},
      {"gelu", [&](Tape& t, Var va, Var, Var) { return t.sum_all(t.gelu(va)); }},
      {"softmax", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.mul(t.softmax_rows(va), vb)); }},
      {"log_softmax", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.mul(t.log_softmax_rows(va), vb)); }},
      {"l2norm", [&](Tape& t, Var va, Var vb, Var) { return t.sum_all(t.mul(t.l2_normalize_rows(va), vb)); }},
      {"mean_rows", [&](Tape& t, Var va, Var, Var) { return t.sum_all(t.mul(t.mean_rows(va), t.mean_rows(va))); }},
      {"slice", [&](Tape& t, Var va, Var, Var) {
         return t.sum_all(t.mul(t.slice_rows(va, 1, 3), t.slice_cols(t.slice_rows(va, 0, 2), 0, 4)));
       }},
      {"concat", [&](Tape& t, Var va, Var vb, Var) {
         Var c = t.concat_rows({va, vb});
         return t.sum_all(t.mul(c, c));
       }},
  };

  for (auto& c : cases) {
    CAPTURE(c.name);
    Tape t;
    Var xa = t.leaf(a), xb = t.leaf(b), xw = t.leaf(w);
    t.backward(c.run(t, xa, xb, xw));
    Mat ga = t.grad_or_zero(xa);
    Mat gb = t.grad_or_zero(xb);
    Mat gw = t.grad_or_zero(xw);

    auto f = [&]() {
      Tape ft;
      Var fa = ft.leaf(a), fb = ft.leaf(b), fw = ft.leaf(w);
      Var s = c.run(ft, fa, fb, fw);
      return ft.val(s)(0, 0);
    };
    std::mt19937_64 pick(99);
    REQUIRE(oracles::check_grad_subset(f, a, ga, 8, pick) < 1e-6);
    REQUIRE(oracles::check_grad_subset(f, b, gb, 8, pick) < 1e-6);
    REQUIRE(oracles::check_grad_subset(f, w, gw, 8, pick) < 1e-6);
  }
}

TEST_CASE("broadcast ops match finite differences") {
  std::mt19937_64 rng(12);
  Mat a = Mat::randn(4, 3, rng);
  Mat rv = Mat::randn(1, 3, rng);
  Mat cv = Mat::randn(4, 1, rng);

  auto run = [&](Tape& t, Var va, Var vr, Var vc) {
    Var x = t.add_rowvec(va, vr);
    x = t.mul_rowvec(x, vr);
    x = t.mul_colvec(x, vc);
    Var s = t.sum_all(t.mul(x, x));
    return s;
  };

  Tape t;
  Var va = t.leaf(a), vr = t.leaf(rv), vc = t.leaf(cv);
  Var s = run(t, va, vr, vc);
  t.backward(s);
  Mat ga = t.grad_or_zero(va), gr = t.grad_or_zero(vr), gc = t.grad_or_zero(vc);

  auto f = [&]() {
    Tape ft;
    Var fa = ft.leaf(a), fr = ft.leaf(rv), fc = ft.leaf(cv);
    return ft.val(run(ft, fa, fr, fc))(0, 0);
  };
  std::mt19937_64 pick(5);
  REQUIRE(oracles::check_grad_subset(f, a, ga, 8, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, rv, gr, 6, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, cv, gc, 4, pick) < 1e-6);
}

TEST_CASE("layer norm gradient matches finite differences") {
  std::mt19937_64 rng(13);
  Mat x = Mat::randn(3, 6, rng);
  Mat gamma = Mat::randn(1, 6, rng, 0.5);
  Mat beta = Mat::randn(1, 6, rng, 0.5);
  Mat probe = Mat::randn(3, 6, rng);

  auto run = [&](Tape& t, Var vx, Var vg, Var vb) {
    return t.sum_all(t.mul(t.layer_norm_rows(vx, vg, vb), t.constant(probe)));
  };

  Tape t;
  Var vx = t.leaf(x), vg = t.leaf(gamma), vb = t.leaf(beta);
  t.backward(run(t, vx, vg, vb));
  Mat gx = t.grad_or_zero(vx), gg = t.grad_or_zero(vg), gb = t.grad_or_zero(vb);

  auto f = [&]() {
    Tape ft;
    Var fx = ft.leaf(x), fg = ft.leaf(gamma), fb = ft.leaf(beta);
    return ft.val(run(ft, fx, fg, fb))(0, 0);
  };
  std::mt19937_64 pick(7);
  REQUIRE(oracles::check_grad_subset(f, x, gx, 10, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, gamma, gg, 6, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, beta, gb, 6, pick) < 1e-6);
}

TEST_CASE("conv3x3 gradient matches finite differences") {
  std::mt19937_64 rng(14);
  const int h = 3, w = 4, c_in = 2, c_out = 3;
  Mat x = Mat::randn(h * w, c_in, rng);
  Mat wt = Mat::randn(c_out, c_in * 9, rng, 0.3);
  Mat bias = Mat::randn(1, c_out, rng, 0.1);
  Mat probe = Mat::randn(h * w, c_out, rng);

  auto run = [&](Tape& t, Var vx, Var vw, Var vb) {
    return t.sum_all(t.mul(t.conv3x3_same(vx, vw, vb, h, w), t.constant(probe)));
  };

  Tape t;
  Var vx = t.leaf(x), vw = t.leaf(wt), vb = t.leaf(bias);
  t.backward(run(t, vx, vw, vb));
  Mat gx = t.grad_or_zero(vx), gw = t.grad_or_zero(vw), gb = t.grad_or_zero(vb);

  auto f = [&]() {
    Tape ft;
    Var fx = ft.leaf(x), fw = ft.leaf(wt), fb = ft.leaf(bias);
    return ft.val(run(ft, fx, fw, fb))(0, 0);
  };
  std::mt19937_64 pick(8);
  REQUIRE(oracles::check_grad_subset(f, x, gx, 10, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, wt, gw, 10, pick) < 1e-6);
  REQUIRE(oracles::check_grad_subset(f, bias, gb, 3, pick) < 1e-6);
}

TEST_CASE("gather_entries routes gradients to picked cells only") {
  Mat a = Mat::filled(2, 3, {1, 2, 3, 4, 5, 6});
  Tape t;
  Var va = t.leaf(a);
  Var g = t.gather_entries(va, {{0, 1}, {1, 2}});
  REQUIRE(t.val(g)(0, 0) == 2.0);
  REQUIRE(t.val(g)(1, 0) == 6.0);
  t.backward(t.sum_all(g));
  Mat grad = t.grad_or_zero(va);
  REQUIRE(grad(0, 1) == 1.0);
  REQUIRE(grad(1, 2) == 1.0);
  REQUIRE(grad(0, 0) == 0.0);
}

TEST_CASE("constants never accumulate gradients") {
  Mat a = Mat::ones(2, 2);
  Tape t;
  Var c = t.constant(a);
  Var l = t.leaf(a);
  t.backward(t.sum_all(t.mul(c, l)));
  REQUIRE(t.grad_or_zero(c).a == Mat::zeros(2, 2).a);
  REQUIRE(t.grad_or_zero(l).a == Mat::ones(2, 2).a);
}

TEST_CASE("shared parameter leaves accumulate over uses") {
  dpmkit::ParamStore store;
  store.add("w", Mat::filled(1, 2, {2.0, 3.0}));
  dpmkit::Graph g(store);
  Var w1 = g.param("w");
  Var w2 = g.param("w");
  REQUIRE(w1.id == w2.id);
  // loss = sum(w) + sum(w*w): grad = 1 + 2w
  Var loss = g.tape.add(g.tape.sum_all(w1), g.tape.sum_all(g.tape.mul(w1, w2)));
  g.backward(loss);
  Mat gw = g.grad_of("w");
  REQUIRE(gw(0, 0) == Catch::Approx(5.0));
  REQUIRE(gw(0, 1) == Catch::Approx(7.0));
}
