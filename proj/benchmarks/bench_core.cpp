#include <benchmark/benchmark.h>

#include <random>

#include "affseg/data.hpp"
#include "affseg/flow.hpp"
#include "affseg/model.hpp"
#include "affseg/ops.hpp"

using namespace affseg;

namespace {

TensorPtr random_tensor(std::vector<int> shape, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  TensorPtr t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t->data()) v = dist(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  NoGradGuard no_grad;
  TensorPtr x = random_tensor({16, 48, 48}, rng);
  TensorPtr w = random_tensor({16, 16, 3, 3}, rng);
  TensorPtr b = random_tensor({16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
  }
}
BENCHMARK(BM_Conv2dForward);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  TensorPtr x = random_tensor({16, 48, 48}, rng, true);
  TensorPtr w = random_tensor({16, 16, 3, 3}, rng, true);
  TensorPtr b = random_tensor({16}, rng, true);
  for (auto _ : state) {
    x->zero_grad();
    w->zero_grad();
    b->zero_grad();
    TensorPtr loss = ops::sum(ops::conv2d(x, w, b, 1, 1));
    backward(loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

void BM_SequenceForwardBackward(benchmark::State& state) {
  ModelConfig cfg;  // 48x48, b=8, full variant
  AffordanceModel model(cfg, 1);
  std::mt19937_64 rng(2);
  SequenceBatch batch;
  const int frames = static_cast<int>(state.range(0));
  for (int t = 0; t < frames; ++t) {
    batch.appearance.push_back(random_tensor({4, 48, 48}, rng));
    batch.flow.push_back(random_tensor({3, 48, 48}, rng));
  }
  batch.mask = LabelMap(48, 48, 1);
  batch.action_label = 0;
  for (auto _ : state) {
    model.params().zero_grad();
    AffordanceModel::Output out = model.forward_sequence(batch);
    TensorPtr loss =
        total_loss(out.seg_logits, out.action_logits, batch.mask, batch.action_label, 0.2, 0.8);
    backward(loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_SequenceForwardBackward)->Arg(1)->Arg(5);

void BM_SceneFlow(benchmark::State& state) {
  SynthSpec spec{"mug", 1};
  InteractionSequence seq = generate_synthetic_sequence(spec, 7, {48, 12, 30});
  const CameraIntrinsics intr = CameraIntrinsics::defaults_for(48, 48);
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_scene_flow(seq.frames[0], seq.frames[3], intr));
  }
}
BENCHMARK(BM_SceneFlow);

}  // namespace

BENCHMARK_MAIN();
