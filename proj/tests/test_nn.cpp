#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "m2at/nn.hpp"

using namespace m2at;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ModelConfig mlp_4x4() {
  ModelConfig c;
  c.kind = ArchKind::Mlp;
  c.in_c = 1;
  c.in_h = 4;
  c.in_w = 4;
  c.num_classes = 2;
  return c;
}

}  // namespace

TEST_CASE("arch names round-trip") {
  CHECK(arch_from_string("mlp") == ArchKind::Mlp);
  CHECK(arch_from_string("small-cnn") == ArchKind::SmallCnn);
  CHECK(arch_from_string("mini-wrn") == ArchKind::MiniWrn);
  for (const ArchKind k : {ArchKind::Mlp, ArchKind::SmallCnn, ArchKind::MiniWrn})
    CHECK(arch_from_string(arch_name(k)) == k);
  CHECK_THROWS_AS((void)arch_from_string("resnet"), std::invalid_argument);
}

TEST_CASE("config validation") {
  ModelConfig c = mlp_4x4();
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = mlp_4x4();
  c.width_mult = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = mlp_4x4();
  c.kind = ArchKind::SmallCnn;
  c.in_h = 3;  // two pool stages need room
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts") {
  // closed-form counts for each architecture
  ModelConfig mlp = mlp_4x4();
  CHECK(init_params(mlp, 0).param_count() == 610);
  mlp.width_mult = 2;
  CHECK(init_params(mlp, 0).param_count() == 1218);

  ModelConfig cnn;
  cnn.kind = ArchKind::SmallCnn;
  cnn.in_c = 1;
  cnn.in_h = 12;
  cnn.in_w = 12;
  cnn.num_classes = 4;
  CHECK(init_params(cnn, 0).param_count() == 5956);

  ModelConfig wrn;
  wrn.kind = ArchKind::MiniWrn;
  wrn.in_c = 1;
  wrn.in_h = 12;
  wrn.in_w = 12;
  wrn.num_classes = 4;
  CHECK(init_params(wrn, 0).param_count() == 173924);
  wrn.in_c = 3;
  wrn.in_h = 32;
  wrn.in_w = 32;
  wrn.num_classes = 10;
  CHECK(init_params(wrn, 0).param_count() == 174602);
}

TEST_CASE("init is deterministic, fan-in bounded, biases zero") {
  ModelConfig cnn;
  cnn.kind = ArchKind::SmallCnn;
  cnn.in_c = 1;
  cnn.in_h = 12;
  cnn.in_w = 12;
  cnn.num_classes = 4;
  const ModelParams a = init_params(cnn, 9);
  const ModelParams b = init_params(cnn, 9);
  const ModelParams c = init_params(cnn, 10);
  REQUIRE(a.params.size() == b.params.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].name == b.params[i].name);
    CHECK(a.params[i].value.data == b.params[i].value.data);
    if (a.params[i].value.data != c.params[i].value.data) any_diff = true;
  }
  CHECK(any_diff);

  for (const Param& p : a.params) {
    if (!p.decay) {
      for (const float v : p.value.data) CHECK(v == 0.0f);  // bias
      continue;
    }
    // conv weights: fan-in = ci*kh*kw; fc: rows
    const Shape& s = p.value.shape;
    const double fan = s.size() == 4 ? double(s[1] * s[2] * s[3]) : double(s[0]);
    const double bound = std::sqrt(6.0 / fan);
    for (const float v : p.value.data) {
      CHECK(double(v) >= -bound);
      CHECK(double(v) <= bound);
    }
  }
}

TEST_CASE("forward_logits agrees with a bound graph") {
  ModelConfig cfg = mlp_4x4();
  const ModelParams mp = init_params(cfg, 3);
  Tensor batch({2, 1, 4, 4});
  for (std::size_t i = 0; i < batch.numel(); ++i)
    batch.data[i] = float(i % 7) * 0.1f;

  const Tensor direct = forward_logits(mp, batch);
  REQUIRE(direct.shape == Shape{2, 2});

  Graph g;
  const ModelNodes mn = bind_model(g, mp, batch);
  CHECK(g.value(mn.logits).data == direct.data);

  Tensor bad({2, 1, 5, 4});
  CHECK_THROWS_AS((void)forward_logits(mp, bad), std::invalid_argument);
}

TEST_CASE("one_hot and offclass_uniform") {
  const Tensor oh = one_hot({1, 0}, 3);
  CHECK(oh.shape == Shape{2, 3});
  CHECK(oh.data == std::vector<float>{0, 1, 0, 1, 0, 0});
  CHECK_THROWS_AS((void)one_hot({3}, 3), std::invalid_argument);

  const Tensor sb = offclass_uniform(0, 3);
  CHECK(sb.data == std::vector<float>{0.0f, 0.5f, 0.5f});
  const Tensor sb4 = offclass_uniform(2, 4);
  CHECK(sb4.data[2] == 0.0f);
  for (const std::size_t j : {0u, 1u, 3u})
    CHECK(sb4.data[j] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("milestone schedule at half and three-quarters") {
  const ModelParams mp = init_params(mlp_4x4(), 0);
  OptimState opt = make_optim(mp, 0.1, 0.9, 2e-4, 200);
  REQUIRE(opt.milestones == std::vector<std::size_t>{100, 150});
  CHECK(scheduled_lr(opt, 0) == doctest::Approx(0.1));
  CHECK(scheduled_lr(opt, 99) == doctest::Approx(0.1));
  CHECK(scheduled_lr(opt, 100) == doctest::Approx(0.01));
  CHECK(scheduled_lr(opt, 149) == doctest::Approx(0.01));
  CHECK(scheduled_lr(opt, 150) == doctest::Approx(0.001));
  CHECK(scheduled_lr(opt, 199) == doctest::Approx(0.001));

  OptimState o20 = make_optim(mp, 0.05, 0.9, 0.0, 20);
  CHECK(o20.milestones == std::vector<std::size_t>{10, 15});

  // velocity buffers match parameter shapes and start at zero
  REQUIRE(opt.velocity.size() == mp.params.size());
  for (std::size_t i = 0; i < opt.velocity.size(); ++i) {
    CHECK(opt.velocity[i].shape == mp.params[i].value.shape);
    for (const float v : opt.velocity[i].data) CHECK(v == 0.0f);
  }
}

TEST_CASE("sgd_step momentum recurrence") {
  // scalar recurrences worked out by hand:
  //   no decay: v1 = 1, th1 = 0.9; v2 = 1.9, th2 = 0.71
  ModelParams mp;
  mp.config = mlp_4x4();
  mp.params.push_back({"w", Tensor({1}, {1.0f}), false});
  OptimState opt = make_optim(mp, 0.1, 0.9, 0.1, 10);
  const std::vector<Tensor> g{Tensor({1}, {1.0f})};

  CHECK(sgd_step(mp, g, opt, 0.1));
  CHECK(opt.velocity[0].data[0] == doctest::Approx(1.0));
  CHECK(mp.params[0].value.data[0] == doctest::Approx(0.9));
  CHECK(sgd_step(mp, g, opt, 0.1));
  CHECK(opt.velocity[0].data[0] == doctest::Approx(1.9));
  CHECK(mp.params[0].value.data[0] == doctest::Approx(0.71));

  // with decay: v1 = 1.1, th1 = 0.89; v2 = 2.079, th2 = 0.6821
  ModelParams md;
  md.config = mlp_4x4();
  md.params.push_back({"w", Tensor({1}, {1.0f}), true});
  OptimState od = make_optim(md, 0.1, 0.9, 0.1, 10);
  CHECK(sgd_step(md, g, od, 0.1));
  CHECK(od.velocity[0].data[0] == doctest::Approx(1.1));
  CHECK(md.params[0].value.data[0] == doctest::Approx(0.89));
  CHECK(sgd_step(md, g, od, 0.1));
  CHECK(od.velocity[0].data[0] == doctest::Approx(2.079));
  CHECK(md.params[0].value.data[0] == doctest::Approx(0.6821));
}

TEST_CASE("sgd_step rejects non-finite gradients wholesale") {
  ModelParams mp;
  mp.config = mlp_4x4();
  mp.params.push_back({"a", Tensor({2}, {1.0f, 2.0f}), true});
  mp.params.push_back({"b", Tensor({1}, {3.0f}), false});
  OptimState opt = make_optim(mp, 0.1, 0.9, 0.0, 10);

  std::vector<Tensor> g{Tensor({2}, {0.5f, 0.5f}), Tensor({1}, {1.0f})};
  g[1].data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(sgd_step(mp, g, opt, 0.1));
  CHECK(mp.params[0].value.data == std::vector<float>{1.0f, 2.0f});
  CHECK(mp.params[1].value.data == std::vector<float>{3.0f});
  for (const Tensor& v : opt.velocity)
    for (const float x : v.data) CHECK(x == 0.0f);

  std::vector<Tensor> wrong{Tensor({2})};
  CHECK_THROWS_AS((void)sgd_step(mp, wrong, opt, 0.1), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  ModelConfig cnn;
  cnn.kind = ArchKind::SmallCnn;
  cnn.in_c = 1;
  cnn.in_h = 12;
  cnn.in_w = 12;
  cnn.num_classes = 4;
  const ModelParams mp = init_params(cnn, 77);
  const std::string path = temp_path("m2at_test_ckpt.bin");
  save_checkpoint(path, mp);
  const ModelParams back = load_checkpoint(path);

  CHECK(back.config == mp.config);
  REQUIRE(back.params.size() == mp.params.size());
  for (std::size_t i = 0; i < mp.params.size(); ++i) {
    CHECK(back.params[i].name == mp.params[i].name);
    CHECK(back.params[i].decay == mp.params[i].decay);
    CHECK(back.params[i].value.shape == mp.params[i].value.shape);
    CHECK(back.params[i].value.data == mp.params[i].value.data);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint corruption is detected") {
  const ModelParams mp = init_params(mlp_4x4(), 5);
  const std::string path = temp_path("m2at_test_ckpt_bad.bin");
  save_checkpoint(path, mp);

  // flip the magic
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS(load_checkpoint(path));

  // truncate mid-tensor
  save_checkpoint(path, mp);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS(load_checkpoint(path));

  std::remove(path.c_str());
  CHECK_THROWS(load_checkpoint(path));  // gone entirely
}
