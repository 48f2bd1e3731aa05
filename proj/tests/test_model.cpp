#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ampattn/errors.hpp"
#include "ampattn/model.hpp"
#include "ampattn/rng.hpp"
#include "ampattn/tensor_io.hpp"

using namespace ampattn;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.n_mfcc = 8;
  mc.seg_len = 6;
  mc.conv_channels = 4;
  mc.lstm_hidden = 3;
  mc.heads = 2;
  mc.fc_hidden = 5;
  mc.n_classes = 3;
  mc.variant = AttentionVariant::MHSA_FACA;
  mc.seed = 77;
  return mc;
}

Segment random_segment(const ModelConfig& mc, uint64_t seed, int valid = -1) {
  Segment seg;
  Rng rng(seed);
  seg.frames = Tensor::zeros({mc.seg_len, mc.n_mfcc});
  if (valid < 0) valid = mc.seg_len;
  seg.valid = valid;
  seg.padded = valid < mc.seg_len;
  seg.label = 0;
  for (int r = 0; r < valid; ++r)
    for (int c = 0; c < mc.n_mfcc; ++c) seg.frames.at2(r, c) = rng.uniform(-1.0, 1.0);
  return seg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config geometry helpers and validation") {
  ModelConfig mc;  // defaults
  CHECK(mc.conv_out_features() == 10);  // 40 -> 20 -> 10
  CHECK(mc.lstm_in() == 64 * 10);
  CHECK(mc.d_m() == 512);

  ModelConfig bad = mc;
  bad.n_mfcc = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = mc;
  bad.n_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = mc;
  bad.conv_kernel_f = 4;  // even kernel cannot preserve the feature extent
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("model config JSON round trip") {
  ModelConfig mc = tiny_config();
  mc.scale_dm_literal = true;
  mc.sigma_floor = 0.25;
  ModelConfig back = model_config_from_json(model_config_to_json(mc));
  CHECK(back.n_mfcc == mc.n_mfcc);
  CHECK(back.seg_len == mc.seg_len);
  CHECK(back.conv_channels == mc.conv_channels);
  CHECK(back.lstm_hidden == mc.lstm_hidden);
  CHECK(back.heads == mc.heads);
  CHECK(back.fc_hidden == mc.fc_hidden);
  CHECK(back.n_classes == mc.n_classes);
  CHECK(back.variant == mc.variant);
  CHECK(back.sigma_floor == mc.sigma_floor);
  CHECK(back.scale_dm_literal == mc.scale_dm_literal);
  CHECK(back.seed == mc.seed);
}

TEST_CASE("init: deterministic per seed, distinct across seeds, bounded fans") {
  ModelConfig mc = tiny_config();
  ModelParams a = init_params(mc), b = init_params(mc);
  double same = 0.0;
  a.visit([&](const std::string& name, Tensor& t) {
    b.visit([&](const std::string& name2, Tensor& t2) {
      if (name == name2) same = std::max(same, max_abs_diff(t, t2));
    });
  });
  CHECK(same == 0.0);

  ModelConfig other = mc;
  other.seed = 78;
  ModelParams c = init_params(other);
  CHECK(max_abs_diff(a.conv1.kernel, c.conv1.kernel) > 0.0);

  // conv1 kernel C_out x C_in x K = 4x1x3: fan_in = 3, fan_out = 12
  double bound = std::sqrt(6.0 / (3 + 4 * 3));
  double worst = 0.0;
  for (double v : a.conv1.kernel.data()) worst = std::max(worst, std::fabs(v));
  CHECK(worst <= bound);
  CHECK(worst > 0.5 * bound);  // the sampler actually fills the range

  // batch-norm starts at identity
  for (double v : a.conv1.bn_gamma.data()) CHECK(v == 1.0);
  for (double v : a.conv1.bn_beta.data()) CHECK(v == 0.0);
  for (double v : a.conv1.bn_running_var.data()) CHECK(v == 1.0);
  // forget-gate bias opens at 1
  for (double v : a.lstm1.fwd.b_f.data()) CHECK(v == 1.0);
}

TEST_CASE("parameter naming contract is stable") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  std::vector<std::string> names;
  p.visit([&](const std::string& n, Tensor&) { names.push_back(n); });

  std::set<std::string> set(names.begin(), names.end());
  CHECK(set.size() == names.size());  // no duplicates
  for (const char* expect :
       {"conv1.kernel", "conv1.bn.gamma", "conv1.bn.beta", "conv1.bn.running_mean",
        "conv1.bn.running_var", "conv2.kernel", "lstm1.fwd.W_i", "lstm1.fwd.U_f",
        "lstm1.bwd.b_o", "lstm2.fwd.W_g", "lstm2.bwd.U_o", "attn.head0.W_q", "attn.head0.U_c",
        "attn.head1.W_p", "attn.head1.U_d", "attn.W_o", "attn.W_s", "attn.b_s", "fc1.W", "fc1.b",
        "fc2.W", "fc2.b"})
    CHECK(set.count(expect) == 1);

  // optimizer set excludes exactly the running statistics
  CHECK(p.trainable().size() == names.size() - 4);
}

TEST_CASE("conv blocks: 1x40x50 -> 64x20x50 -> 64x10x50, time preserved") {
  ModelConfig mc;  // defaults: 64 channels, pool 2
  mc.n_classes = 4;
  ModelParams p = init_params(mc);
  Rng rng(21);
  Tensor x = Tensor::zeros({1, 40, 50});
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);

  Graph g;
  Tensor b1 = conv_block(g, x, p.conv1, mc, RunMode::eval);
  REQUIRE(b1.shape() == Shape{64, 20, 50});
  Tensor b2 = conv_block(g, b1, p.conv2, mc, RunMode::eval);
  REQUIRE(b2.shape() == Shape{64, 10, 50});
}

TEST_CASE("max-pool of [1,3,2,0] with window 2 gives [3,2]") {
  Graph g;
  Tensor x = Tensor::from_data({1, 4, 1}, {1.0, 3.0, 2.0, 0.0});
  Tensor y = maxpool_f(g, x, 2);
  REQUIRE(y.shape() == Shape{1, 2, 1});
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 2.0);
}

TEST_CASE("time_major flattens channels-first into per-step rows") {
  Graph g;
  // C=2, F=2, T=2; step t collects [c0f0, c0f1, c1f0, c1f1] at that t
  Tensor x = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor y = time_major(g, x);
  REQUIRE(y.shape() == Shape{2, 4});
  CHECK(y.at2(0, 0) == 1.0);
  CHECK(y.at2(0, 1) == 3.0);
  CHECK(y.at2(0, 2) == 5.0);
  CHECK(y.at2(0, 3) == 7.0);
  CHECK(y.at2(1, 0) == 2.0);
  CHECK(y.at2(1, 3) == 8.0);
}

TEST_CASE("conv block maps zero input to zero under identity batch-norm") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  Graph g;
  Tensor x = Tensor::zeros({1, mc.n_mfcc, mc.seg_len});
  Tensor y = conv_block(g, x, p.conv1, mc, RunMode::eval);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("batch-norm: train and eval agree after running stats converge") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  Rng rng(22);
  Tensor x = Tensor::zeros({1, mc.n_mfcc, mc.seg_len});
  for (auto& v : x.data()) v = rng.uniform(-2.0, 2.0);

  Tensor train_out;
  for (int it = 0; it < 200; ++it) {
    Graph g;
    train_out = conv_block(g, x, p.conv1, mc, RunMode::train);
  }
  Graph g;
  Tensor eval_out = conv_block(g, x, p.conv1, mc, RunMode::eval);
  CHECK(max_abs_diff(train_out, eval_out) <= 1e-3);
}

TEST_CASE("batch-norm: train forward updates running stats, eval does not") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  Rng rng(23);
  Tensor x = Tensor::zeros({1, mc.n_mfcc, mc.seg_len});
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);

  Tensor before = p.conv1.bn_running_mean.clone();
  {
    Graph g;
    conv_block(g, x, p.conv1, mc, RunMode::eval);
  }
  CHECK(max_abs_diff(before, p.conv1.bn_running_mean) == 0.0);
  {
    Graph g;
    conv_block(g, x, p.conv1, mc, RunMode::train);
  }
  CHECK(max_abs_diff(before, p.conv1.bn_running_mean) > 0.0);
}

TEST_CASE("bilstm: zero weights with open forget gate stay silent") {
  int d_in = 3, hidden = 2, m = 4;
  BiLstmParams p;
  for (LstmCellParams* cell : {&p.fwd, &p.bwd}) {
    for (Tensor* w : {&cell->w_i, &cell->w_f, &cell->w_g, &cell->w_o})
      *w = Tensor::zeros({d_in, hidden});
    for (Tensor* u : {&cell->u_i, &cell->u_f, &cell->u_g, &cell->u_o})
      *u = Tensor::zeros({hidden, hidden});
    for (Tensor* b : {&cell->b_i, &cell->b_g, &cell->b_o}) *b = Tensor::zeros({1, hidden});
    cell->b_f = Tensor::full({1, hidden}, 1.0);
  }
  Graph g;
  Rng rng(24);
  Tensor x = Tensor::zeros({m, d_in});
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
  Tensor y = bilstm(g, x, p, hidden);
  REQUIRE(y.shape() == Shape{m, 2 * hidden});
  // candidate tanh(0) = 0 kills the cell state regardless of gates
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("bilstm: a single step equals two independent single-step cells") {
  int d_in = 2, hidden = 2;
  BiLstmParams p;
  Rng rng(25);
  auto rnd = [&](Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-0.9, 0.9);
    return t;
  };
  for (LstmCellParams* cell : {&p.fwd, &p.bwd}) {
    cell->w_i = rnd({d_in, hidden});
    cell->u_i = rnd({hidden, hidden});
    cell->b_i = rnd({1, hidden});
    cell->w_f = rnd({d_in, hidden});
    cell->u_f = rnd({hidden, hidden});
    cell->b_f = rnd({1, hidden});
    cell->w_g = rnd({d_in, hidden});
    cell->u_g = rnd({hidden, hidden});
    cell->b_g = rnd({1, hidden});
    cell->w_o = rnd({d_in, hidden});
    cell->u_o = rnd({hidden, hidden});
    cell->b_o = rnd({1, hidden});
  }
  Tensor x = rnd({1, d_in});

  auto step = [&](const LstmCellParams& c, int unit) {
    auto dot = [&](const Tensor& w, const Tensor& b) {
      double acc = b.at2(0, unit);
      for (int k = 0; k < d_in; ++k) acc += x.at2(0, k) * w.at2(k, unit);
      return acc;  // h0 = 0, so U contributes nothing on the first step
    };
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    double i = sig(dot(c.w_i, c.b_i));
    double f = sig(dot(c.w_f, c.b_f));
    (void)f;  // c0 = 0: the forget path has nothing to keep
    double gg = std::tanh(dot(c.w_g, c.b_g));
    double o = sig(dot(c.w_o, c.b_o));
    return o * std::tanh(i * gg);
  };

  Graph g;
  Tensor y = bilstm(g, x, p, hidden);
  REQUIRE(y.shape() == Shape{1, 2 * hidden});
  for (int u = 0; u < hidden; ++u) {
    CHECK(y.at2(0, u) == doctest::Approx(step(p.fwd, u)).epsilon(1e-12));
    CHECK(y.at2(0, hidden + u) == doctest::Approx(step(p.bwd, u)).epsilon(1e-12));
  }
}

TEST_CASE("full-size forward: logit count and trace geometry") {
  ModelConfig mc;  // paper-scale defaults
  mc.n_classes = 4;
  mc.variant = AttentionVariant::MHSA_FACA;
  ModelParams p = init_params(mc);
  Segment seg = random_segment(mc, 31);
  Graph g;
  AttentionTrace trace;
  Tensor logits = model_forward(g, seg, mc, p, RunMode::eval, &trace);
  REQUIRE(logits.shape() == Shape{1, 4});
  for (double v : logits.data()) CHECK(std::isfinite(v));
  REQUIRE(trace.heads.size() == 8);
  for (const HeadTrace& ht : trace.heads) {
    CHECK(ht.H_o.shape() == Shape{50, 50});
    CHECK(ht.H_s.shape() == Shape{50, 50});
  }
}

TEST_CASE("eval forward is a pure function of params and input") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  Segment seg = random_segment(mc, 32, /*valid=*/4);
  Graph g1, g2;
  Tensor a = model_forward(g1, seg, mc, p, RunMode::eval);
  Tensor b = model_forward(g2, seg, mc, p, RunMode::eval);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("adding a constant to fc2 bias shifts logits, not probabilities") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  Segment seg = random_segment(mc, 33);
  Graph g1;
  Tensor base = model_forward(g1, seg, mc, p, RunMode::eval);

  double c = 0.37;
  for (auto& v : p.fc2.b.data()) v += c;
  Graph g2;
  Tensor shifted = model_forward(g2, seg, mc, p, RunMode::eval);

  auto softmax = [](const Tensor& t) {
    std::vector<double> out(t.size());
    double mx = t.data()[0];
    for (double v : t.data()) mx = std::max(mx, v);
    double z = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) z += (out[i] = std::exp(t.data()[i] - mx));
    for (double& v : out) v /= z;
    return out;
  };
  std::vector<double> pa = softmax(base), pb = softmax(shifted);
  for (int64_t i = 0; i < base.size(); ++i) {
    CHECK(std::fabs(shifted.data()[i] - base.data()[i] - c) <= 1e-12);
    CHECK(std::fabs(pa[i] - pb[i]) <= 1e-12);
  }
}

TEST_CASE("checkpoint round trip preserves config, params, and extras") {
  fs::path dir = fs::temp_directory_path() / "ampattn_ckpt_test";
  fs::remove_all(dir);
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  // dirty a few tensors so the round trip is not just re-running init
  p.fc1.w.data()[0] = 12.5;
  p.conv1.bn_running_mean.data()[0] = -0.75;
  save_checkpoint(dir, mc, p, 17, R"({"labels":["ang","hap"]})");

  Checkpoint ck = load_checkpoint(dir);
  CHECK(ck.epoch == 17);
  CHECK(ck.extra_json.find("ang") != std::string::npos);
  CHECK(ck.cfg.n_mfcc == mc.n_mfcc);
  CHECK(ck.cfg.variant == mc.variant);
  CHECK(ck.cfg.seed == mc.seed);

  double worst = 0.0;
  std::vector<std::pair<std::string, Tensor*>> mine;
  p.visit([&](const std::string& n, Tensor& t) { mine.emplace_back(n, &t); });
  size_t idx = 0;
  ck.params.visit([&](const std::string& n, Tensor& t) {
    REQUIRE(mine[idx].first == n);
    worst = std::max(worst, max_abs_diff(*mine[idx].second, t));
    ++idx;
  });
  CHECK(worst == 0.0);
}

TEST_CASE("checkpoint load rejects a reshaped parameter, naming it") {
  fs::path dir = fs::temp_directory_path() / "ampattn_ckpt_bad";
  fs::remove_all(dir);
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  save_checkpoint(dir, mc, p, 1, "{}");
  save_tensor(dir / "params" / "fc2.b.tnsr", Tensor::zeros({2, 9}));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir), doctest::Contains("fc2.b"), std::runtime_error);

  fs::remove(dir / "params" / "attn.W_o.tnsr");
  CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
}

TEST_SUITE_END();
