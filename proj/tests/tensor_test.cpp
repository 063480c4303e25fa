#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "lightformer/mask.hpp"
#include "lightformer/ops.hpp"
#include "lightformer/rng.hpp"
#include "lightformer/tensor.hpp"
#include "testutil.hpp"

using namespace lightformer;
using testutil::max_grad_rel_err;
using testutil::rand_tensor;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("shape helpers") {
  CHECK(shape_numel({}) == 1);
  CHECK(shape_numel({3}) == 3);
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK(shape_str({}) == "[]");
}

TEST_CASE("tensor construction and access") {
  auto z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(z.values() == std::vector<double>(6, 0.0));
  CHECK_FALSE(z.requires_grad());

  auto f = Tensor::full({2}, 1.5);
  CHECK(f.values() == std::vector<double>{1.5, 1.5});

  auto d = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(d.values()[3] == 4.0);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);

  auto s = Tensor::scalar(7.0);
  CHECK(s.item() == 7.0);
  CHECK(s.rank() == 0);
  CHECK_THROWS_AS(d.item(), ContractError);
}

TEST_CASE("grad storage rules") {
  auto t = Tensor::zeros({3}, true);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(t.grad(), ContractError);
  t.ensure_grad();
  CHECK(t.has_grad());
  CHECK(t.grad() == std::vector<double>(3, 0.0));
  t.grad()[1] = 5.0;
  t.zero_grad();
  CHECK(t.grad()[1] == 0.0);
}

TEST_CASE("backward requires a scalar that requires grad") {
  auto vec = rand_tensor({3}, 1);
  auto s = sum(mul(vec, vec));
  CHECK_NOTHROW(backward(s));

  auto no_grad_in = rand_tensor({3}, 2, 1.0, false);
  auto s2 = sum(no_grad_in);
  CHECK_THROWS_AS(backward(s2), ContractError);

  auto not_scalar = rand_tensor({3}, 3);
  CHECK_THROWS_AS(backward(not_scalar), ContractError);
}

TEST_CASE("backward through a diamond accumulates interior grads per sweep") {
  // s = sum(a*a + a*a); ds/da = 4a.
  auto a = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  auto d = mul(a, a);
  auto s = sum(add(d, d));
  backward(s);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.grad()[i] == doctest::Approx(4.0 * a.values()[i]).epsilon(1e-12));
  }
  // Leaf grads accumulate across sweeps.
  backward(s);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.grad()[i] == doctest::Approx(8.0 * a.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward on a root leaf accumulates 1") {
  auto x = Tensor::scalar(3.0, true);
  backward(x);
  CHECK(x.grad()[0] == 1.0);
  backward(x);
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("NoGradGuard suspends graph construction") {
  CHECK(grad_enabled());
  auto a = rand_tensor({4}, 4);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    auto s = sum(mul(a, a));
    CHECK_FALSE(s.requires_grad());
    CHECK_THROWS_AS(backward(s), ContractError);
  }
  CHECK(grad_enabled());
}

TEST_CASE("matmul forward values") {
  auto a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});

  auto bt = Tensor::from_data({2, 3}, {7, 9, 11, 8, 10, 12});
  auto c2 = matmul(a, bt, true);
  CHECK(c2.values() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("matmul shape errors name both operands") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 2, 3})),
                  ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({3}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("matmul gradients (all layouts)") {
  auto a2 = rand_tensor({3, 4}, 10);
  auto b2 = rand_tensor({4, 2}, 11);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a2, b2)); }, a2) < kGradTol);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a2, b2)); }, b2) < kGradTol);

  auto bt = rand_tensor({2, 4}, 12);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a2, bt, true)); }, a2) <
        kGradTol);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a2, bt, true)); }, bt) <
        kGradTol);

  auto a3 = rand_tensor({2, 3, 4}, 13);
  auto w = rand_tensor({4, 5}, 14);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a3, w)); }, a3) < kGradTol);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a3, w)); }, w) < kGradTol);

  auto b3 = rand_tensor({2, 4, 3}, 15);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a3, b3)); }, a3) < kGradTol);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a3, b3)); }, b3) < kGradTol);

  auto b3t = rand_tensor({2, 3, 4}, 16);
  CHECK(max_grad_rel_err([&] { return sum(matmul(a3, b3t, true)); }, b3t) <
        kGradTol);
}

TEST_CASE("elementwise ops and gradients") {
  auto a = rand_tensor({2, 3}, 20);
  auto b = rand_tensor({2, 3}, 21);

  auto s = add(a, b);
  for (int i = 0; i < 6; ++i) {
    CHECK(s.values()[i] == a.values()[i] + b.values()[i]);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), ShapeError);
  CHECK(max_grad_rel_err([&] { return sum(mul(add(a, b), a)); }, a) <
        kGradTol);
  CHECK(max_grad_rel_err([&] { return sum(mul(add(a, b), a)); }, b) <
        kGradTol);

  auto sc = scale(a, -2.5);
  CHECK(sc.values()[0] == doctest::Approx(-2.5 * a.values()[0]));
  CHECK(max_grad_rel_err([&] { return sum(mul(scale(a, 3.0), b)); }, a) <
        kGradTol);

  auto r = relu(Tensor::from_data({4}, {-1.0, 0.0, 0.5, 2.0}));
  CHECK(r.values() == std::vector<double>{0.0, 0.0, 0.5, 2.0});
  auto x = rand_tensor({3, 3}, 22);
  auto xw = rand_tensor({3, 3}, 24, 1.0, false);
  CHECK(max_grad_rel_err([&] { return sum(mul(relu(x), xw)); }, x) < kGradTol);

  auto bias = rand_tensor({3}, 23);
  auto ab = add_bias(a, bias);
  CHECK(ab.values()[4] ==
        doctest::Approx(a.values()[4] + bias.values()[1]));
  CHECK_THROWS_AS(add_bias(a, Tensor::zeros({2})), ShapeError);
  CHECK(max_grad_rel_err([&] { return sum(mul(add_bias(a, bias), a)); },
                         bias) < kGradTol);
}

TEST_CASE("sum reduces to a scalar") {
  auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(sum(a).item() == 10.0);
  CHECK(sum(a).shape() == Shape{});
}

TEST_CASE("split/merge heads round-trip and gradients") {
  auto x = rand_tensor({2, 3, 4}, 30);
  auto split = split_heads(x, 2);
  CHECK(split.shape() == Shape{4, 3, 2});
  auto merged = merge_heads(split, 2);
  CHECK(merged.shape() == x.shape());
  CHECK(merged.values() == x.values());

  // Head h of batch b holds columns [h*2, h*2+2) of the original.
  // x[b=1, t=2, d=3] lives in head 1 at [b*H+h=3, t=2, c=1].
  CHECK(split.values()[(3 * 3 + 2) * 2 + 1] == x.values()[(1 * 3 + 2) * 4 + 3]);

  CHECK_THROWS_AS(split_heads(x, 3), ShapeError);
  CHECK_THROWS_AS(split_heads(Tensor::zeros({3, 4}), 2), ShapeError);

  auto w = rand_tensor({4, 3, 2}, 31, 1.0, false);
  CHECK(max_grad_rel_err([&] { return sum(mul(split_heads(x, 2), w)); }, x) <
        kGradTol);
  auto y = rand_tensor({4, 3, 2}, 32);
  auto wm = rand_tensor({2, 3, 4}, 33, 1.0, false);
  CHECK(max_grad_rel_err([&] { return sum(mul(merge_heads(y, 2), wm)); }, y) <
        kGradTol);
}

TEST_CASE("take_rows and add_rows") {
  auto table = rand_tensor({5, 3}, 40);
  auto top = take_rows(table, 2);
  CHECK(top.shape() == Shape{2, 3});
  CHECK(top.values()[4] == table.values()[4]);
  CHECK_THROWS_AS(take_rows(table, 6), ShapeError);
  CHECK(max_grad_rel_err(
            [&] { return sum(mul(take_rows(table, 2), take_rows(table, 2))); },
            table) < kGradTol);

  auto x = rand_tensor({2, 4, 3}, 41);
  auto rows = rand_tensor({4, 3}, 42);
  auto y = add_rows(x, rows);
  CHECK(y.values()[(1 * 4 + 2) * 3 + 1] ==
        doctest::Approx(x.values()[(1 * 4 + 2) * 3 + 1] +
                        rows.values()[2 * 3 + 1]));
  CHECK_THROWS_AS(add_rows(x, Tensor::zeros({3, 3})), ShapeError);
  CHECK(max_grad_rel_err([&] { return sum(mul(add_rows(x, rows), x)); },
                         rows) < kGradTol);
}

TEST_CASE("masked_softmax distributes over the mask support only") {
  PatternSpec spec;  // full
  const auto mask = build_mask(spec, 0, 4);
  auto scores = rand_tensor({2, 4, 4}, 50, 3.0);
  auto p = masked_softmax(scores, mask);

  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 4; ++i) {
      double row = 0.0;
      for (int j = 0; j < 4; ++j) {
        const double v = p.values()[(b * 4 + i) * 4 + j];
        if (j > i) {
          CHECK(v == 0.0);  // exactly zero, not just small
        } else {
          CHECK(v > 0.0);
        }
        row += v;
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  CHECK(max_grad_rel_err(
            [&] {
              auto w = rand_tensor({2, 4, 4}, 51, 1.0, false);
              return sum(mul(masked_softmax(scores, mask), w));
            },
            scores) < kGradTol);
}

TEST_CASE("masked_softmax handles large score magnitudes") {
  PatternSpec spec;
  const auto mask = build_mask(spec, 0, 3);
  auto scores = Tensor::from_data(
      {1, 3, 3}, {1e9, 0, 0, 1e9, 1e9, 0, 1e9, -1e9, 1e9}, true);
  auto p = masked_softmax(scores, mask);
  CHECK(all_finite(p));
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[3] == doctest::Approx(0.5));
  CHECK(p.values()[4] == doctest::Approx(0.5));
}

TEST_CASE("masked_softmax rejects an empty row") {
  AttentionMask empty;
  empty.n = 3;
  empty.layer = 0;
  empty.bits = BitMatrix(3, 3);
  empty.bits.set(1, 0);
  empty.bits.set(1, 1);
  empty.bits.set(2, 2);  // row 0 left empty
  auto scores = rand_tensor({1, 3, 3}, 52);
  CHECK_THROWS_AS(masked_softmax(scores, empty), MaskError);
}

TEST_CASE("masked_softmax uses the top-left block of a larger mask") {
  PatternSpec spec;
  const auto mask = build_mask(spec, 0, 8);
  auto scores = rand_tensor({1, 3, 3}, 53);
  auto p = masked_softmax(scores, mask);
  CHECK(p.values()[1] == 0.0);  // (0,1) masked
  double row = p.values()[3] + p.values()[4];
  CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm normalizes the last dimension") {
  auto x = Tensor::from_data({1, 3}, {1, 2, 3});
  auto gain = Tensor::full({3}, 1.0);
  auto bias = Tensor::zeros({3});
  auto y = layer_norm(x, gain, bias, 1e-5);
  CHECK(y.values()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(y.values()[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(y.values()[2] == doctest::Approx(1.2247).epsilon(1e-3));

  auto xr = rand_tensor({2, 3, 5}, 60, 2.0);
  auto g = rand_tensor({5}, 61);
  auto b = rand_tensor({5}, 62);
  auto wm = rand_tensor({2, 3, 5}, 63, 1.0, false);
  auto f = [&] { return sum(mul(layer_norm(xr, g, b, 1e-5), wm)); };
  CHECK(max_grad_rel_err(f, xr) < kGradTol);
  CHECK(max_grad_rel_err(f, g) < kGradTol);
  CHECK(max_grad_rel_err(f, b) < kGradTol);
}

TEST_CASE("dropout is keyed, inverted, and off at eval") {
  auto x = Tensor::full({1000}, 1.0, true);
  DropoutKey key{7, 3, 11};

  auto eval_out = dropout(x, 0.5, key, false);
  CHECK(eval_out.values() == x.values());
  auto zero_rate = dropout(x, 0.0, key, true);
  CHECK(zero_rate.values() == x.values());

  auto a = dropout(x, 0.5, key, true);
  auto b = dropout(x, 0.5, key, true);
  CHECK(a.values() == b.values());  // same key -> same mask

  DropoutKey other{7, 3, 12};
  auto c = dropout(x, 0.5, other, true);
  CHECK(a.values() != c.values());

  std::int64_t kept = 0;
  for (double v : a.values()) {
    CHECK((v == 0.0 || v == 2.0));  // survivors scaled by 1/(1-rate)
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 350);
  CHECK(kept < 650);

  CHECK_THROWS_AS(dropout(x, 1.0, key, true), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, key, true), ConfigError);

  // The mask is fixed by the key, so finite differences see a fixed linear
  // map and must match the analytic gradient exactly.
  auto xs = rand_tensor({4, 5}, 64);
  auto w = rand_tensor({4, 5}, 65, 1.0, false);
  CHECK(max_grad_rel_err(
            [&] { return sum(mul(dropout(xs, 0.3, key, true), w)); }, xs) <
        kGradTol);
}

TEST_CASE("embedding_lookup gathers rows and scatters gradients") {
  auto table = rand_tensor({6, 3}, 70);
  TokenBatch ids;
  ids.batch = 2;
  ids.n = 2;
  ids.ids = {1, 4, 4, 0};
  auto e = embedding_lookup(table, ids);
  CHECK(e.shape() == Shape{2, 2, 3});
  for (int d = 0; d < 3; ++d) {
    CHECK(e.values()[0 * 3 + d] == table.values()[1 * 3 + d]);
    CHECK(e.values()[3 * 3 + d] == table.values()[0 * 3 + d]);
  }

  TokenBatch bad = ids;
  bad.ids[2] = 6;
  CHECK_THROWS_WITH_AS(embedding_lookup(table, bad), doctest::Contains("6"),
                       IndexError);
  bad.ids[2] = -1;
  CHECK_THROWS_AS(embedding_lookup(table, bad), IndexError);

  auto w = rand_tensor({2, 2, 3}, 71, 1.0, false);
  CHECK(max_grad_rel_err(
            [&] { return sum(mul(embedding_lookup(table, ids), w)); },
            table) < kGradTol);
}

TEST_CASE("cross_entropy frozen values") {
  // softmax([1,2,3]) -> -log p[2] = 0.40760596...
  auto logits = Tensor::from_data({1, 1, 3}, {1, 2, 3});
  TokenBatch t;
  t.batch = 1;
  t.n = 1;
  t.ids = {2};
  CHECK(cross_entropy(logits, t).item() ==
        doctest::Approx(0.40760596444438104).epsilon(1e-12));

  // Uniform logits cost ln(V) regardless of the target.
  for (std::int64_t v : {2, 10, 100}) {
    auto uniform = Tensor::zeros({1, 4, v});
    TokenBatch targets;
    targets.batch = 1;
    targets.n = 4;
    targets.ids = {0, v - 1, v / 2, 0};
    CHECK(cross_entropy(uniform, targets).item() ==
          doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
  }
}

TEST_CASE("cross_entropy mean, errors, and gradient") {
  auto logits = rand_tensor({2, 3, 5}, 80, 2.0);
  TokenBatch t;
  t.batch = 2;
  t.n = 3;
  t.ids = {0, 1, 2, 3, 4, 0};
  CHECK(max_grad_rel_err([&] { return cross_entropy(logits, t); }, logits) <
        kGradTol);

  TokenBatch bad = t;
  bad.ids[0] = 5;
  CHECK_THROWS_AS(cross_entropy(logits, bad), IndexError);

  auto inf_logits = Tensor::from_data({1, 1, 2},
                                      {std::numeric_limits<double>::infinity(),
                                       0.0});
  TokenBatch one;
  one.batch = 1;
  one.n = 1;
  one.ids = {1};
  CHECK_THROWS_AS(cross_entropy(inf_logits, one), NumericError);

  CHECK_THROWS_AS(cross_entropy(rand_tensor({2, 3}, 81), t), ShapeError);
}

TEST_CASE("sgd_step updates, clips, and zeroes grads") {
  auto p1 = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto p2 = Tensor::from_data({1}, {3.0}, true);
  std::vector<Parameter> params{{"a", p1}, {"b", p2}};

  p1.ensure_grad();
  p2.ensure_grad();
  p1.grad() = {3.0, 0.0};
  p2.grad() = {4.0};  // global norm 5

  SUBCASE("plain step") {
    sgd_step(params, 0.1);
    CHECK(p1.values()[0] == doctest::Approx(1.0 - 0.3));
    CHECK(p2.values()[0] == doctest::Approx(3.0 - 0.4));
    CHECK(p1.grad() == std::vector<double>{0.0, 0.0});
  }

  SUBCASE("clipping rescales the global norm") {
    sgd_step(params, 1.0, 1.0);  // factor 1/5
    CHECK(p1.values()[0] == doctest::Approx(1.0 - 3.0 / 5.0));
    CHECK(p2.values()[0] == doctest::Approx(3.0 - 4.0 / 5.0));
  }

  SUBCASE("clip larger than the norm is a no-op scale") {
    sgd_step(params, 1.0, 100.0);
    CHECK(p1.values()[0] == doctest::Approx(-2.0));
  }

  SUBCASE("missing grad names the parameter") {
    auto p3 = Tensor::zeros({1}, true);
    std::vector<Parameter> bad{{"naked", p3}};
    CHECK_THROWS_WITH_AS(sgd_step(bad, 0.1), doctest::Contains("naked"),
                         ContractError);
  }
}

TEST_CASE("lr zero leaves values untouched by sgd_step") {
  auto p = Tensor::from_data({2}, {1.0, -1.0}, true);
  p.ensure_grad();
  p.grad() = {10.0, 10.0};
  std::vector<Parameter> params{{"p", p}};
  sgd_step(params, 0.0);
  CHECK(p.values() == std::vector<double>{1.0, -1.0});
}

TEST_CASE("all_finite") {
  CHECK(all_finite(Tensor::from_data({2}, {1.0, -2.0})));
  CHECK_FALSE(all_finite(
      Tensor::from_data({2}, {1.0, std::numeric_limits<double>::quiet_NaN()})));
  CHECK_FALSE(all_finite(
      Tensor::from_data({2}, {std::numeric_limits<double>::infinity(), 0.0})));
}

TEST_CASE("counter rng is deterministic and well-ranged") {
  CHECK(rng::uniform01(1, 2) == rng::uniform01(1, 2));
  CHECK(rng::uniform01(1, 2) != rng::uniform01(1, 3));
  CHECK(rng::uniform01(1, 2) != rng::uniform01(2, 2));
  CHECK(rng::combine(1, 2) != rng::combine(2, 1));

  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng::uniform01(99, static_cast<std::uint64_t>(i));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += u;
  }
  mean /= 10000;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("truncated normal respects sigma and cutoff") {
  double sum = 0.0;
  double sq = 0.0;
  const int count = 20000;
  for (int i = 0; i < count; ++i) {
    const double z = rng::truncated_normal(5, static_cast<std::uint64_t>(i),
                                           0.02);
    CHECK(std::abs(z) <= 0.04);  // 2 sigma cutoff
    sum += z;
    sq += z * z;
  }
  const double mean = sum / count;
  const double stdev = std::sqrt(sq / count - mean * mean);
  CHECK(std::abs(mean) < 2e-3);
  // Truncation at 2 sigma shrinks the deviation to ~0.88 sigma.
  CHECK(stdev > 0.012);
  CHECK(stdev < 0.022);
  CHECK(rng::truncated_normal(5, 17, 0.02) == rng::truncated_normal(5, 17, 0.02));
}
