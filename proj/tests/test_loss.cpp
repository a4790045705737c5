#include <doctest.h>

#include "crackbench/grad_check.hpp"
#include "crackbench/loss.hpp"

#include <cmath>
#include <random>

using namespace crackbench;

namespace {

BinaryMap random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  BinaryMap m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = b(rng) ? 1 : 0;
  return m;
}

Tensord random_act(int h, int w, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, scale);
  Tensord t(Shape{1, 1, h, w});
  for (std::ptrdiff_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

// Textbook form with explicit logs.
double naive_ce(const Tensord& a, const BinaryMap& y, const Tensord* w) {
  const double pos = double((y == 1).count()), beta = 1.0 - pos / double(y.size());
  double loss = 0;
  for (std::ptrdiff_t i = 0; i < a.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-a[i]));
    const double wi = w ? (*w)[i] : 1.0;
    loss += y.data()[i] ? -beta * wi * std::log(p) : -(1 - beta) * wi * std::log(1 - p);
  }
  return loss;
}

}  // namespace

TEST_CASE("class balance beta is the background fraction") {
  BinaryMap m = BinaryMap::Zero(4, 5);
  m(0, 0) = m(1, 1) = 1;
  CHECK(class_balance_beta(m) == doctest::Approx(18.0 / 20.0));
  CHECK(class_balance_beta(BinaryMap::Zero(3, 3)) == 1.0);
  CHECK(class_balance_beta(BinaryMap::Ones(3, 3)) == 0.0);
  CHECK_THROWS_AS(class_balance_beta(BinaryMap(0, 0)), std::invalid_argument);
  BinaryMap bad = BinaryMap::Zero(2, 2);
  bad(0, 0) = 2;
  CHECK_THROWS_AS(class_balance_beta(bad), std::invalid_argument);
}

TEST_CASE("balanced CE matches the textbook formula and its derivative") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gt = random_mask(6, 7, 0.2, rng);
    const auto a = random_act(6, 7, 2.0, rng);
    Tensord w = random_act(6, 7, 1.0, rng);
    w.array() = w.array().abs();
    CHECK(balanced_ce_loss(a, gt).loss == doctest::Approx(naive_ce(a, gt, nullptr)).epsilon(1e-12));
    const auto r = balanced_ce_loss(a, gt, &w);
    CHECK(r.loss == doctest::Approx(naive_ce(a, gt, &w)).epsilon(1e-12));
    for (std::ptrdiff_t i = 0; i < a.size(); ++i) {
      Tensord ap = a, am = a;
      ap[i] += 1e-6;
      am[i] -= 1e-6;
      const double fd = (naive_ce(ap, gt, &w) - naive_ce(am, gt, &w)) / 2e-6;
      CHECK(r.grad[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
  }
}

TEST_CASE("balanced CE is stable for saturated activations") {
  BinaryMap gt = BinaryMap::Zero(2, 2);
  gt(0, 0) = 1;
  Tensord a(Shape{1, 1, 2, 2});
  a[0] = 1000;  // correct and confident
  a[1] = a[2] = a[3] = -1000;
  const auto ok = balanced_ce_loss(a, gt);
  CHECK(ok.loss == 0.0);
  a[0] = -1000;  // confidently wrong on the crack pixel
  const auto wrong = balanced_ce_loss(a, gt);
  CHECK(std::isfinite(wrong.loss));
  CHECK(wrong.loss == doctest::Approx(0.75 * 1000));
  CHECK(wrong.grad.all_finite());
}

TEST_CASE("balanced CE edge cases") {
  SUBCASE("all-background mask: beta = 1 makes every negative weightless") {
    std::mt19937_64 rng(3);
    const auto r = balanced_ce_loss(random_act(4, 4, 1.0, rng), BinaryMap::Zero(4, 4));
    CHECK(r.loss == 0.0);
    CHECK((r.grad.array() == 0.0).all());
  }
  SUBCASE("shape mismatch and negative weights") {
    const Tensord a(Shape{1, 1, 3, 3});
    CHECK_THROWS_AS(balanced_ce_loss(a, BinaryMap::Zero(3, 4)), ShapeError);
    Tensord w = Tensord::constant(Shape{1, 1, 3, 3}, 1.0);
    w[4] = -0.1;
    CHECK_THROWS_AS(balanced_ce_loss(a, BinaryMap::Zero(3, 3), &w), std::invalid_argument);
  }
  SUBCASE("loss is non-negative") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) CHECK(balanced_ce_loss(random_act(5, 5, 4.0, rng), random_mask(5, 5, 0.3, rng)).loss >= 0);
  }
}

TEST_CASE("boosting weights") {
  BinaryMap gt = BinaryMap::Zero(1, 4);
  gt(0, 1) = gt(0, 3) = 1;
  Tensord p(Shape{1, 1, 1, 4});
  p[0] = 0.0;
  p[1] = 1.0;
  p[2] = 0.3;
  p[3] = 0.3;
  const auto w = boosting_weights(p, gt);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 0.0);
  CHECK(w[2] == doctest::Approx(0.3));
  CHECK(w[3] == doctest::Approx(0.7));
  p[2] = 1.5;
  CHECK_THROWS_AS(boosting_weights(p, gt), std::invalid_argument);
  p[2] = std::nan("");
  CHECK_THROWS_AS(boosting_weights(p, gt), std::invalid_argument);
}

TEST_CASE("graph CE: gradients w.r.t. activations and weights") {
  std::mt19937_64 rng(9);
  const auto gt = random_mask(5, 5, 0.3, rng);
  Parameter<double> a("a", random_act(5, 5, 1.5, rng));
  Tensord w0 = random_act(5, 5, 1.0, rng);
  w0.array() = w0.array().abs() + 0.1;
  Parameter<double> w("w", w0);
  auto obj = [&](Graph<double>& g) { return balanced_ce(g.param(a), gt, std::optional<Var<double>>(g.param(w))); };
  CHECK(grad_check(obj, {&a, &w}, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("differentiable boosting weights pass finite differences") {
  std::mt19937_64 rng(2);
  const auto gt = random_mask(4, 4, 0.4, rng);
  Parameter<double> a("a", random_act(4, 4, 1.0, rng));
  const auto r = random_act(4, 4, 1.0, rng);
  auto obj = [&](Graph<double>& g) { return sum(mul_const(boosting_weights(g.param(a), gt), r)); };
  CHECK(grad_check(obj, {&a}, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("total loss structure") {
  std::mt19937_64 rng(4);
  const auto gt = random_mask(8, 8, 0.25, rng);
  std::array<Tensord, kNumSides> acts;
  for (auto& t : acts) t = random_act(8, 8, 2.0, rng);
  const auto fused = random_act(8, 8, 2.0, rng);
  const auto preds = PredictionSet<double>::from_activations(acts, fused);

  SUBCASE("without boosting the total is the sum of six plain losses") {
    const auto b = total_loss(preds, gt, LossOptions{false, true, false});
    double sum = balanced_ce_loss(fused, gt).loss;
    for (const auto& t : acts) sum += balanced_ce_loss(t, gt).loss;
    CHECK(b.total == doctest::Approx(sum).epsilon(1e-14));
  }
  SUBCASE("with boosting side m is weighted by side m+1's error") {
    const auto b = total_loss(preds, gt);
    CHECK(b.side_losses[4] == doctest::Approx(balanced_ce_loss(acts[4], gt).loss).epsilon(1e-14));
    for (std::size_t m = 0; m < 4; ++m) {
      const auto w = boosting_weights(preds.side_probs[m + 1], gt);
      CHECK(b.side_losses[m] == doctest::Approx(balanced_ce_loss(acts[m], gt, &w).loss).epsilon(1e-14));
    }
    CHECK(b.fuse_loss == doctest::Approx(balanced_ce_loss(fused, gt).loss).epsilon(1e-14));
    double total = b.fuse_loss;
    for (double s : b.side_losses) total += s;
    CHECK(b.total == doctest::Approx(total).epsilon(1e-14));
    CHECK(b.beta == doctest::Approx(class_balance_beta(gt)));
  }
  SUBCASE("normalised weights have mean 1") {
    const auto plain = total_loss(preds, gt);
    const auto norm = total_loss(preds, gt, LossOptions{true, true, true});
    CHECK(norm.side_losses[4] == doctest::Approx(plain.side_losses[4]));
    for (std::size_t m = 0; m < 4; ++m) {
      Tensord w = boosting_weights(preds.side_probs[m + 1], gt);
      w.array() *= double(w.size()) / w.array().sum();
      CHECK(w.array().mean() == doctest::Approx(1.0));
      CHECK(norm.side_losses[m] == doctest::Approx(balanced_ce_loss(acts[m], gt, &w).loss).epsilon(1e-12));
    }
  }
}

TEST_CASE("detached weights stop gradient into the upper side") {
  std::mt19937_64 rng(6);
  const auto gt = random_mask(6, 6, 0.3, rng);
  std::array<Parameter<double>, kNumSides> sides;
  for (std::size_t m = 0; m < kNumSides; ++m) sides[m] = Parameter<double>("s" + std::to_string(m), random_act(6, 6, 1.0, rng));
  Parameter<double> fused("f", random_act(6, 6, 1.0, rng));
  auto run = [&](bool detach) {
    for (auto& s : sides) s.zero_grad();
    Graph<double> g;
    std::array<Var<double>, kNumSides> v;
    for (std::size_t m = 0; m < kNumSides; ++m) v[m] = g.param(sides[m]);
    auto lg = total_loss(v, g.param(fused), gt, LossOptions{true, detach, false});
    g.backward(lg.total);
    return lg.total.value().item();
  };
  const double l_detached = run(true);
  const Tensord g5_detached = sides[4].grad;
  const double l_flow = run(false);
  CHECK(l_detached == l_flow);
  // Detached: side 5's gradient is only its own CE term.
  const auto own = balanced_ce_loss(sides[4].value, gt);
  CHECK((g5_detached.array() - own.grad.array()).abs().maxCoeff() < 1e-14);
  CHECK((sides[4].grad.array() - own.grad.array()).abs().maxCoeff() > 1e-6);

  auto obj = [&](Graph<double>& g) {
    std::array<Var<double>, kNumSides> v;
    for (std::size_t m = 0; m < kNumSides; ++m) v[m] = g.param(sides[m]);
    return total_loss(v, g.param(fused), gt, LossOptions{true, false, false}).total;
  };
  std::vector<Parameter<double>*> ps{&fused};
  for (auto& s : sides) ps.push_back(&s);
  CHECK(grad_check(obj, ps, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("a correct upper side zeroes only the side directly below it") {
  std::mt19937_64 rng(8);
  const auto gt = random_mask(6, 6, 0.3, rng);
  Tensord exact(Shape{1, 1, 6, 6});
  for (std::ptrdiff_t i = 0; i < exact.size(); ++i) exact[i] = gt.data()[i] ? 1000.0 : -1000.0;
  std::array<Tensord, kNumSides> acts;
  for (auto& t : acts) t = random_act(6, 6, 2.0, rng);
  for (std::size_t upper = 1; upper < kNumSides; ++upper) {
    auto a = acts;
    a[upper] = exact;
    const auto b = total_loss(PredictionSet<double>::from_activations(a, acts[0]), gt);
    for (std::size_t m = 0; m + 1 < kNumSides; ++m) {
      if (m + 1 == upper || m == upper)  // weighted by the exact side, or exact itself
        CHECK(b.side_losses[m] == 0.0);
      else
        CHECK(b.side_losses[m] > 0.0);
    }
  }
}
