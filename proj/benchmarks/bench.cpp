// Microbenchmarks for the hot paths: forward, forward+backward, the attacks,
// and full M2AT batch construction. Numbers are per batch, not per sample.
#include <benchmark/benchmark.h>

#include "m2at/attack.hpp"
#include "m2at/data.hpp"
#include "m2at/graph.hpp"
#include "m2at/mask_mix.hpp"
#include "m2at/nn.hpp"
#include "m2at/rng.hpp"

namespace {

using namespace m2at;

struct Fixture {
  ModelConfig mc;
  ModelParams params;
  LabeledImageSet set;
  Tensor batch;
  std::vector<int> labels;

  explicit Fixture(std::size_t n) {
    mc.kind = ArchKind::SmallCnn;
    mc.in_c = 1;
    mc.in_h = 12;
    mc.in_w = 12;
    mc.num_classes = 4;
    params = init_params(mc, 0);
    set = synth_blobs(0, 4, n, 1, 12, 12, 4.0);
    batch = set.images;
    labels = set.labels;
  }
};

const Fixture& fixture(std::size_t n) {
  static Fixture f32(32), f64(64);
  return n == 32 ? f32 : f64;
}

void BM_ForwardSmallCnn(benchmark::State& state) {
  const Fixture& f = fixture(std::size_t(state.range(0)));
  for (auto _ : state) {
    Tensor logits = forward_logits(f.params, f.batch);
    benchmark::DoNotOptimize(logits.data.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardSmallCnn)->Arg(32)->Arg(64);

void BM_ForwardBackwardSmallCnn(benchmark::State& state) {
  const Fixture& f = fixture(std::size_t(state.range(0)));
  const Tensor targets = one_hot(f.labels, 4);
  for (auto _ : state) {
    Graph g;
    const ModelNodes mn = bind_model(g, f.params, f.batch);
    const NodeId loss = g.softmax_cross_entropy(mn.logits, g.leaf(targets));
    auto grads = g.backward(loss, mn.params);
    benchmark::DoNotOptimize(grads.size());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackwardSmallCnn)->Arg(32)->Arg(64);

void BM_Fgsm(benchmark::State& state) {
  const Fixture& f = fixture(std::size_t(state.range(0)));
  for (auto _ : state) {
    AttackResult r = fgsm(f.params, f.batch, f.labels, 8.0 / 255.0);
    benchmark::DoNotOptimize(r.adversarial.data.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Fgsm)->Arg(32)->Arg(64);

void BM_Pgd10(benchmark::State& state) {
  const Fixture& f = fixture(std::size_t(state.range(0)));
  AttackConfig cfg;  // 8/255, step 2/255, 10 rounds
  cfg.random_start = true;
  for (auto _ : state) {
    Rng rng(11);
    AttackResult r = pgd(f.params, f.batch, f.labels, cfg, &rng);
    benchmark::DoNotOptimize(r.adversarial.data.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Pgd10)->Arg(32)->Arg(64);

void BM_M2atBatch(benchmark::State& state) {
  const Fixture& f = fixture(std::size_t(state.range(0)));
  AttackConfig cfg;
  cfg.random_start = true;
  for (auto _ : state) {
    Rng rng(11);
    M2atBatch b = m2at_batch(f.params, f.batch, f.labels, cfg, 1.0, rng);
    benchmark::DoNotOptimize(b.images.data.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_M2atBatch)->Arg(32)->Arg(64);

void BM_MaskMixOnly(benchmark::State& state) {
  const Fixture& f = fixture(64);
  Tensor delta({64, 1, 12, 12});
  Rng init(3);
  for (float& v : delta.data)
    v = float(init.uniform(-8.0 / 255.0, 8.0 / 255.0));
  AttackConfig cfg;
  M2atOptions opts;
  opts.fixed_delta = &delta;
  for (auto _ : state) {
    Rng rng(11);
    M2atBatch b = m2at_batch(f.params, f.batch, f.labels, cfg, 1.0, rng, opts);
    benchmark::DoNotOptimize(b.images.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_MaskMixOnly);

}  // namespace

BENCHMARK_MAIN();
