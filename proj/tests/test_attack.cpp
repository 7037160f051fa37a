#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "m2at/attack.hpp"
#include "m2at/data.hpp"
#include "m2at/graph.hpp"

using namespace m2at;

namespace {

ModelParams tiny_mlp(std::uint64_t seed, std::size_t K = 4) {
  ModelConfig c;
  c.kind = ArchKind::Mlp;
  c.in_c = 1;
  c.in_h = 6;
  c.in_w = 6;
  c.num_classes = K;
  return init_params(c, seed);
}

Tensor random_batch(std::size_t n, Rng& rng, std::size_t h = 6, std::size_t w = 6) {
  Tensor x({n, 1, h, w});
  for (auto& v : x.data) v = float(rng.uniform());
  return x;
}

std::vector<int> random_labels(std::size_t n, std::size_t K, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = int(rng.uniform_int(K - 1));
  return y;
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig c;
  c.validate();
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.epsilon = 8.0 / 255.0;
  c.step_size = 9.0 / 255.0;  // alpha > eps
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.step_size = 2.0 / 255.0;
  c.rounds = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  CHECK(loss_from_string("cross-entropy") == LossKind::CrossEntropy);
  CHECK(loss_from_string("margin") == LossKind::Margin);
  CHECK_THROWS_AS((void)loss_from_string("hinge"), std::invalid_argument);
}

TEST_CASE("project_linf holds the ball exactly, in double") {
  Rng rng(11);
  const double eps = 8.0 / 255.0;
  Tensor origin({1, 1, 4, 4});
  Tensor cand({1, 1, 4, 4});
  for (int rep = 0; rep < 2000; ++rep) {
    for (auto& v : origin.data) v = float(rng.uniform());
    for (std::size_t i = 0; i < cand.numel(); ++i)
      cand.data[i] = float(double(origin.data[i]) + rng.uniform(-0.3, 0.3));
    const Tensor out = project_linf(cand, origin, eps, true);
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double d = std::abs(double(out.data[i]) - double(origin.data[i]));
      CHECK(d <= eps);  // no tolerance: the one-ulp pullback makes this exact
      CHECK(out.data[i] >= 0.0f);
      CHECK(out.data[i] <= 1.0f);
    }
    // idempotent
    const Tensor again = project_linf(out, origin, eps, true);
    CHECK(again.data == out.data);
  }
}

TEST_CASE("project_linf with zero budget returns the origin bitwise") {
  Rng rng(12);
  Tensor origin({2, 1, 3, 3});
  Tensor cand({2, 1, 3, 3});
  for (auto& v : origin.data) v = float(rng.uniform());
  for (auto& v : cand.data) v = float(rng.uniform());
  const Tensor out = project_linf(cand, origin, 0.0, true);
  CHECK(out.data == origin.data);
  CHECK_THROWS_AS((void)project_linf(cand, origin, -0.1, true), std::invalid_argument);
}

TEST_CASE("fgsm raw delta is a strict trichotomy") {
  Rng rng(21);
  const ModelParams mp = tiny_mlp(4);
  const Tensor x = random_batch(16, rng);
  const auto y = random_labels(16, 4, rng);
  const double eps = 8.0 / 255.0;
  const AttackResult res = fgsm(mp, x, y, eps);

  const float e = float(eps);
  bool saw_pos = false, saw_neg = false;
  for (const float d : res.delta.data) {
    CHECK((d == e || d == -e || d == 0.0f));
    saw_pos |= d == e;
    saw_neg |= d == -e;
  }
  CHECK(saw_pos);
  CHECK(saw_neg);
  CHECK(linf_dist(res.adversarial, x) <= eps);
  for (const float v : res.adversarial.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS((void)fgsm(mp, x, y, 0.0), std::invalid_argument);
}

TEST_CASE("zero input gradient leaves the input untouched") {
  // all-zero parameters give constant logits, so the input gradient vanishes
  ModelConfig c;
  c.kind = ArchKind::Mlp;
  c.in_c = 1;
  c.in_h = 6;
  c.in_w = 6;
  c.num_classes = 4;
  ModelParams mp = init_params(c, 0);
  for (Param& p : mp.params)
    for (auto& v : p.value.data) v = 0.0f;

  Rng rng(3);
  const Tensor x = random_batch(8, rng);
  const auto y = random_labels(8, 4, rng);
  const AttackResult res = fgsm(mp, x, y, 8.0 / 255.0);
  for (const float d : res.delta.data) CHECK(d == 0.0f);
  CHECK(res.adversarial.data == x.data);

  AttackConfig cfg;
  cfg.random_start = false;
  const AttackResult p = pgd(mp, x, y, cfg);
  CHECK(p.adversarial.data == x.data);
}

TEST_CASE("pgd with one step and no random start equals fgsm") {
  Rng rng(31);
  const ModelParams mp = tiny_mlp(9);
  const Tensor x = random_batch(32, rng);
  const auto y = random_labels(32, 4, rng);
  const double eps = 8.0 / 255.0;

  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.step_size = eps;
  cfg.rounds = 1;
  cfg.random_start = false;
  const AttackResult via_pgd = pgd(mp, x, y, cfg);
  const AttackResult via_fgsm = fgsm(mp, x, y, eps);
  CHECK(via_pgd.adversarial.data == via_fgsm.adversarial.data);
  CHECK(via_pgd.failed_samples.empty());
}

TEST_CASE("pgd ball and range contracts across random configs") {
  Rng rng(41);
  const ModelParams mp = tiny_mlp(5);
  for (int rep = 0; rep < 12; ++rep) {
    const std::size_t n = 4 + rng.uniform_int(8);
    const Tensor x = random_batch(n, rng);
    const auto y = random_labels(n, 4, rng);
    AttackConfig cfg;
    cfg.epsilon = (1.0 + double(rng.uniform_int(15))) / 255.0;
    cfg.step_size = cfg.epsilon * rng.uniform(0.2, 1.0);
    cfg.rounds = 1 + int(rng.uniform_int(4));
    cfg.random_start = rep % 2 == 0;
    cfg.loss = rep % 3 == 0 ? LossKind::Margin : LossKind::CrossEntropy;
    Rng atk = rng.substream(100, std::uint64_t(rep));
    const AttackResult res = pgd(mp, x, y, cfg, &atk);
    CHECK(linf_dist(res.adversarial, x) <= cfg.epsilon + 1e-9);
    for (const float v : res.adversarial.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(res.failed_samples.empty());
  }
}

TEST_CASE("margin_pgd also respects the ball") {
  Rng rng(51);
  const ModelParams mp = tiny_mlp(6);
  const Tensor x = random_batch(16, rng);
  const auto y = random_labels(16, 4, rng);
  AttackConfig cfg;
  cfg.random_start = true;
  Rng atk(77);
  const AttackResult res = margin_pgd(mp, x, y, cfg, &atk);
  CHECK(linf_dist(res.adversarial, x) <= cfg.epsilon + 1e-9);
  for (const float v : res.adversarial.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("input_gradient matches a 64-bit graph") {
  Rng rng(61);
  const ModelParams mp = tiny_mlp(8);
  const Tensor x = random_batch(4, rng);
  const std::vector<int> y{0, 1, 2, 3};

  const Tensor g32 = input_gradient(mp, x, y, LossKind::CrossEntropy);

  Graph64 g;
  const Tensor64 x64 = tensor_cast<double>(x);
  const ModelNodes mn = bind_model(g, mp, x64);
  const NodeId t = g.leaf(tensor_cast<double>(one_hot(y, 4)));
  const NodeId loss = g.softmax_cross_entropy(mn.logits, t);
  const NodeId wrt[] = {mn.input};
  const auto g64 = g.backward(loss, wrt);
  const Tensor64& ref = g64.at(mn.input);

  REQUIRE(g32.numel() == ref.numel());
  for (std::size_t i = 0; i < ref.numel(); ++i)
    CHECK(double(g32.data[i]) ==
          doctest::Approx(ref.data[i]).epsilon(1e-4).scale(1e-3));
}

TEST_CASE("pgd_core saturates along a constant gradient") {
  // gradient is +1 everywhere: every step adds alpha, the projection caps at
  // +eps, so k*alpha >= eps lands exactly on the ball surface (unclamped).
  Tensor x({1, 1, 2, 2}, {0.4f, 0.5f, 0.6f, 0.7f});
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;
  cfg.step_size = 3.0 / 255.0;
  cfg.rounds = 5;
  cfg.random_start = false;
  cfg.clamp_valid_range = false;
  const AttackResult res =
      pgd_core(x, cfg, [](const Tensor& cur) { return Tensor::full(cur.shape, 1.0f); });
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = double(res.adversarial.data[i]) - double(x.data[i]);
    CHECK(d == doctest::Approx(cfg.epsilon).epsilon(1e-6));
    CHECK(d <= cfg.epsilon);
  }
}

TEST_CASE("pgd_core random start stays inside the ball") {
  // zero gradient means no steps, so the output is exactly the projected start
  Tensor x({4, 1, 3, 3});
  for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = 0.5f;
  AttackConfig cfg;
  cfg.random_start = true;
  Rng rng(123);
  const AttackResult res =
      pgd_core(x, cfg, [](const Tensor& cur) { return Tensor(cur.shape); }, &rng);
  CHECK(linf_dist(res.adversarial, x) <= cfg.epsilon);
  bool moved = false;
  for (std::size_t i = 0; i < x.numel(); ++i)
    moved |= res.adversarial.data[i] != x.data[i];
  CHECK(moved);

  CHECK_THROWS_AS((void)pgd_core(x, cfg, [](const Tensor& c) { return Tensor(c.shape); }),
                  std::invalid_argument);  // random start without an rng
}

TEST_CASE("pgd_core reverts rows whose gradient goes bad") {
  Tensor x({3, 1, 2, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = 0.5f;
  AttackConfig cfg;
  cfg.rounds = 3;
  cfg.random_start = false;
  const AttackResult res = pgd_core(x, cfg, [](const Tensor& cur) {
    Tensor g = Tensor::full(cur.shape, 1.0f);
    g.data[4] = std::numeric_limits<float>::quiet_NaN();  // poison row 1
    return g;
  });
  CHECK(res.failed_samples == std::vector<int>{1});
  // row 1 reverted to clean; the others moved
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(res.adversarial.data[4 + j] == 0.5f);
    CHECK(res.adversarial.data[j] > 0.5f);
    CHECK(res.adversarial.data[8 + j] > 0.5f);
  }
}
