// Microbenchmarks for the hot paths: matmul, the MFCC front-end, attention
// forward/backward, and one full training step on the tiny model used in the
// integration experiments.

#include <benchmark/benchmark.h>

#include "ampattn/attention.hpp"
#include "ampattn/mfcc.hpp"
#include "ampattn/model.hpp"
#include "ampattn/rng.hpp"
#include "ampattn/training.hpp"

using namespace ampattn;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.n_mfcc = 16;
  mc.seg_len = 50;
  mc.conv_channels = 8;
  mc.pool_f = 2;
  mc.lstm_hidden = 8;
  mc.heads = 4;
  mc.fc_hidden = 16;
  mc.n_classes = 4;
  mc.variant = AttentionVariant::MHSA_FACA;
  return mc;
}

void bm_matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = rand_tensor({n, n}, rng);
  Tensor b = rand_tensor({n, n}, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(g.matmul(a, b).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bm_mfcc(benchmark::State& state) {
  Rng rng(2);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(16000);
  for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
  MfccConfig cfg;
  for (auto _ : state) {
    MfccMatrix m = compute_mfcc(w, cfg);
    benchmark::DoNotOptimize(m.frames.data().data());
  }
}

void bm_mhsa_forward(benchmark::State& state) {
  AttentionConfig cfg;
  cfg.d_m = 64;
  cfg.h = 4;
  cfg.variant = static_cast<AttentionVariant>(state.range(0));
  Rng rng(3);
  AttentionParams params = init_attention_params(cfg, rng);
  Tensor x = rand_tensor({50, cfg.d_m}, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(mhsa_forward(g, x, cfg, params).data().data());
  }
}

void bm_mhsa_backward(benchmark::State& state) {
  AttentionConfig cfg;
  cfg.d_m = 64;
  cfg.h = 4;
  cfg.variant = AttentionVariant::MHSA_FACA;
  Rng rng(4);
  AttentionParams params = init_attention_params(cfg, rng);
  for (Tensor& t : params.trainable()) t.set_requires_grad(true);
  Tensor x = rand_tensor({50, cfg.d_m}, rng);
  for (auto _ : state) {
    Graph g;
    Tensor loss = g.sum(mhsa_forward(g, x, cfg, params));
    g.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}

void bm_train_step(benchmark::State& state) {
  ModelConfig mc = tiny_config();
  ModelParams params = init_params(mc);
  std::vector<Tensor> trainable = params.trainable();
  for (Tensor& t : trainable) t.set_requires_grad(true);
  AdamState adam;
  adam.init(trainable);
  TrainConfig tc;
  tc.lr = 1e-3;
  Rng rng(5);
  Segment seg;
  seg.frames = rand_tensor({mc.seg_len, mc.n_mfcc}, rng);
  seg.valid = mc.seg_len;
  seg.label = 1;
  for (auto _ : state) {
    Graph g;
    Tensor loss = g.cross_entropy(model_forward(g, seg, mc, params, RunMode::train), seg.label);
    g.backward(loss);
    adam_step(trainable, adam, tc);
    benchmark::DoNotOptimize(loss.value());
  }
}

}  // namespace

BENCHMARK(bm_matmul)->Arg(64)->Arg(256);
BENCHMARK(bm_mfcc);
BENCHMARK(bm_mhsa_forward)
    ->Arg(static_cast<int>(AttentionVariant::BMHSA))
    ->Arg(static_cast<int>(AttentionVariant::MHSA_FA))
    ->Arg(static_cast<int>(AttentionVariant::MHSA_FACA));
BENCHMARK(bm_mhsa_backward);
BENCHMARK(bm_train_step);

BENCHMARK_MAIN();
