#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ampattn/data.hpp"
#include "ampattn/errors.hpp"
#include "ampattn/mfcc.hpp"
#include "ampattn/model.hpp"
#include "ampattn/rng.hpp"
#include "ampattn/training.hpp"
#include "ampattn/wav.hpp"

using namespace ampattn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* leaf) {
  fs::path dir = fs::temp_directory_path() / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to train in unit-test time, wide enough to exercise every
// stage. n_mfcc must match the MfccConfig used to featurize.
ModelConfig train_config(int n_classes) {
  ModelConfig mc;
  mc.n_mfcc = 8;
  mc.seg_len = 50;
  mc.conv_channels = 4;
  mc.lstm_hidden = 4;
  mc.heads = 2;
  mc.fc_hidden = 8;
  mc.n_classes = n_classes;
  mc.variant = AttentionVariant::BMHSA;
  mc.seed = 77;
  return mc;
}

MfccConfig small_mfcc() {
  MfccConfig mf;
  mf.n_mfcc = 8;
  return mf;
}

std::vector<UtteranceFeatures> synth_features(const char* leaf, int n_classes, int per_class,
                                              uint64_t seed, bool keep_waveforms = false) {
  SynthConfig sc;
  sc.n_classes = n_classes;
  sc.per_class = per_class;
  sc.seed = seed;
  Dataset data = generate_synthetic(sc, fresh_dir(leaf));
  return prepare_features(data, small_mfcc(), 50, 10, keep_waveforms);
}

double max_trainable_diff(ModelParams& a, ModelParams& b) {
  std::vector<Tensor> ta = a.trainable(), tb = b.trainable();
  REQUIRE(ta.size() == tb.size());
  double worst = 0.0;
  for (size_t i = 0; i < ta.size(); ++i) {
    REQUIRE(ta[i].size() == tb[i].size());
    for (int64_t j = 0; j < ta[i].size(); ++j)
      worst = std::max(worst, std::fabs(ta[i].data()[j] - tb[i].data()[j]));
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("train config json round trip and validation") {
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.beta1 = 0.8;
  tc.beta2 = 0.99;
  tc.eps = 1e-9;
  tc.batch_size = 17;
  tc.epochs = 42;
  tc.seed = 9001;
  TrainConfig back = train_config_from_json(train_config_to_json(tc));
  CHECK(back.lr == tc.lr);
  CHECK(back.beta1 == tc.beta1);
  CHECK(back.beta2 == tc.beta2);
  CHECK(back.eps == tc.eps);
  CHECK(back.batch_size == tc.batch_size);
  CHECK(back.epochs == tc.epochs);
  CHECK(back.seed == tc.seed);

  TrainConfig defaults = train_config_from_json("{}");
  CHECK(defaults.lr == 3e-4);
  CHECK(defaults.batch_size == 128);
  CHECK(defaults.epochs == 100);

  CHECK_NOTHROW(TrainConfig{}.validate());
  TrainConfig bad = tc;
  bad.lr = -1e-3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tc;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tc;
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam first step follows the bias-corrected closed form") {
  // On step one mhat = g and vhat = g^2 exactly, so the update collapses to
  // -lr * g / (|g| + eps): about -lr * sign(g) for |g| much larger than eps.
  std::vector<Tensor> params = {Tensor::from_data({2, 2}, {1.0, -2.0, 3.0, 0.5})};
  std::vector<double> g = {0.5, -0.25, 1e-12, 2.0};
  auto gd = params[0].grad();
  for (size_t j = 0; j < g.size(); ++j) gd[j] = g[j];

  TrainConfig tc;
  AdamState state;
  state.init(params);
  std::vector<double> before(params[0].data().begin(), params[0].data().end());
  adam_step(params, state, tc);

  CHECK(state.step == 1);
  for (size_t j = 0; j < g.size(); ++j) {
    double expected = before[j] - tc.lr * g[j] / (std::fabs(g[j]) + tc.eps);
    CHECK(params[0].data()[j] == doctest::Approx(expected).epsilon(1e-10));
  }
  double delta0 = params[0].data()[0] - before[0];
  CHECK(std::fabs(delta0 + tc.lr) < 1e-10);
  CHECK(state.m[0].data()[0] == doctest::Approx((1.0 - tc.beta1) * g[0]).epsilon(1e-12));
  CHECK(state.v[0].data()[0] == doctest::Approx((1.0 - tc.beta2) * g[0] * g[0]).epsilon(1e-12));
}

TEST_CASE("adam with no gradient leaves fresh params in place and decays moments") {
  TrainConfig tc;
  std::vector<Tensor> params = {Tensor::from_data({3}, {1.0, 2.0, 3.0})};
  AdamState state;
  state.init(params);

  // No gradient ever flowed: moments are zero, so nothing moves.
  adam_step(params, state, tc);
  CHECK(state.step == 1);
  CHECK(params[0].data()[0] == 1.0);
  CHECK(params[0].data()[1] == 2.0);
  CHECK(params[0].data()[2] == 3.0);

  // After a real step the moments are nonzero; a gradient-free step then
  // decays them by beta1/beta2 while the stale momentum still moves the
  // parameter (standard Adam).
  params[0].grad()[0] = 0.5;
  adam_step(params, state, tc);
  double m1 = state.m[0].data()[0];
  double v1 = state.v[0].data()[0];
  double p2 = params[0].data()[0];
  adam_step(params, state, tc);
  CHECK(state.m[0].data()[0] == doctest::Approx(tc.beta1 * m1).epsilon(1e-15));
  CHECK(state.v[0].data()[0] == doctest::Approx(tc.beta2 * v1).epsilon(1e-15));
  CHECK(params[0].data()[0] != p2);
}

TEST_CASE("adam state mismatch errors") {
  TrainConfig tc;
  std::vector<Tensor> two = {Tensor::zeros({2}), Tensor::zeros({2})};
  AdamState state;
  state.init(two);
  std::vector<Tensor> one = {Tensor::zeros({2})};
  CHECK_THROWS_WITH_AS(adam_step(one, state, tc),
                       doctest::Contains("adam state holds"), std::invalid_argument);
  std::vector<Tensor> wrong = {Tensor::zeros({2}), Tensor::zeros({4})};
  CHECK_THROWS_WITH_AS(adam_step(wrong, state, tc),
                       doctest::Contains("does not match"), std::invalid_argument);
}

TEST_CASE("aggregate utterance averages probabilities") {
  // One segment: plain argmax.
  CHECK(aggregate_utterance({{0.1, 3.0, -1.0}}) == 1);

  // Probabilities {0.6,0.4} and {0.2,0.8} average to {0.4,0.6}: class 1 even
  // though the first segment alone votes class 0.
  std::vector<std::vector<double>> logits = {{std::log(0.6), std::log(0.4)},
                                             {std::log(0.2), std::log(0.8)}};
  CHECK(aggregate_utterance(logits) == 1);
  // Softmax ignores a per-segment logit shift.
  for (auto& v : logits[0]) v += 100.0;
  CHECK(aggregate_utterance(logits) == 1);

  // Exact tie: lowest class id wins.
  CHECK(aggregate_utterance({{0.0, 0.0}, {0.0, 0.0}}) == 0);

  CHECK_THROWS_WITH_AS(aggregate_utterance({}), doctest::Contains("no segment"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(aggregate_utterance({{0.0, 0.0}, {0.0, 0.0, 0.0}}),
                       doctest::Contains("ragged"), std::invalid_argument);
}

TEST_CASE("metric tally matches hand confusion arithmetic") {
  // Class 0: 10 utterances, 9 correct. Class 1: 5 utterances, 1 correct.
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 9; ++i) pairs.emplace_back(0, 0);
  pairs.emplace_back(0, 1);
  for (int i = 0; i < 4; ++i) pairs.emplace_back(1, 0);
  pairs.emplace_back(1, 1);
  EvalReport rep = tally_pairs(pairs, 2);
  CHECK(rep.confusion[0][0] == 9);
  CHECK(rep.confusion[0][1] == 1);
  CHECK(rep.confusion[1][0] == 4);
  CHECK(rep.confusion[1][1] == 1);
  CHECK(rep.wa == 10.0 / 15.0);
  CHECK(rep.ua == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(rep.pairs.size() == 15);

  // Perfect predictor.
  EvalReport perfect = tally_pairs({{0, 0}, {1, 1}, {2, 2}}, 3);
  CHECK(perfect.wa == 1.0);
  CHECK(perfect.ua == 1.0);

  // Constant predictor on a balanced 4-class set sits at chance.
  std::vector<std::pair<int, int>> constant;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) constant.emplace_back(c, 0);
  EvalReport chance = tally_pairs(constant, 4);
  CHECK(chance.wa == 0.25);
  CHECK(chance.ua == 0.25);

  // A class with no test support is excluded from UA, not averaged as zero.
  EvalReport partial = tally_pairs({{0, 0}, {1, 0}}, 3);
  CHECK(partial.ua == 0.5);

  CHECK_THROWS_AS(tally_pairs({}, 2), std::invalid_argument);
  CHECK_THROWS_WITH_AS(tally_pairs({{0, 5}}, 2), doctest::Contains("outside"),
                       std::invalid_argument);
}

TEST_CASE("history csv format") {
  fs::path dir = fresh_dir("amptr_hist");
  std::vector<EpochStats> hist = {{1, 0.5, 0.25, 0.125}, {2, 0.375, 0.5, 0.5}};
  fs::path p = dir / "history.csv";
  save_history(p, hist);
  std::ifstream in(p);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,train_loss,val_WA,val_UA");
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("1,", 0) == 0);
  CHECK(line.find("0.5") != std::string::npos);
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("2,", 0) == 0);
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("prepare features stamps segment labels") {
  auto feats = synth_features("amptr_prep", 2, 2, 31);
  REQUIRE(feats.size() == 4);
  for (const auto& f : feats) {
    CHECK(f.segments.size() == 1);  // 0.6 s: 58 frames, one 50-frame segment
    CHECK((f.label == 0 || f.label == 1));
    for (const auto& s : f.segments) {
      CHECK(s.label == f.label);
      CHECK(s.utterance_id == f.id);
      CHECK(s.valid == 50);
      CHECK(s.frames.shape() == Shape{50, 8});
    }
    CHECK(f.wave.samples.empty());  // waveforms dropped unless requested
  }
  auto kept = synth_features("amptr_prep2", 2, 1, 31, true);
  CHECK(kept[0].wave.samples.size() == 9600);
}

TEST_CASE("train fold snapshots the best epoch deterministically") {
  auto feats = synth_features("amptr_fold", 2, 4, 5);
  std::vector<UtteranceFeatures> train, val;
  std::vector<bool> seen(2, false);
  for (const auto& f : feats) {
    if (!seen[f.label]) {
      seen[f.label] = true;
      val.push_back(f);
    } else {
      train.push_back(f);
    }
  }
  REQUIRE(train.size() == 6);
  REQUIRE(val.size() == 2);

  ModelConfig mc = train_config(2);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.seed = 5;
  FoldResult fr = train_fold(train, val, mc, tc);

  REQUIRE(fr.history.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(fr.history[e].epoch == e + 1);
    CHECK(std::isfinite(fr.history[e].train_loss));
    CHECK(fr.history[e].val_wa >= 0.0);
    CHECK(fr.history[e].val_wa <= 1.0);
  }
  // batch_size covers the whole train set, so epoch 1's loss is the mean
  // cross-entropy at initialization: within 0.5 of ln 2 for 2 classes.
  CHECK(std::fabs(fr.history[0].train_loss - std::log(2.0)) < 0.5);

  REQUIRE(fr.best_epoch >= 1);
  REQUIRE(fr.best_epoch <= 3);
  double best = -1.0;
  int first_best = -1;
  for (const auto& e : fr.history)
    if (e.val_ua > best) {
      best = e.val_ua;
      first_best = e.epoch;
    }
  CHECK(fr.best_val_ua == best);
  CHECK(fr.best_epoch == first_best);  // ties keep the earliest snapshot

  FoldResult again = train_fold(train, val, mc, tc);
  REQUIRE(again.history.size() == fr.history.size());
  for (size_t e = 0; e < fr.history.size(); ++e) {
    CHECK(again.history[e].train_loss == fr.history[e].train_loss);
    CHECK(again.history[e].val_wa == fr.history[e].val_wa);
    CHECK(again.history[e].val_ua == fr.history[e].val_ua);
  }
  CHECK(again.best_epoch == fr.best_epoch);
  CHECK(max_trainable_diff(again.best_params, fr.best_params) == 0.0);
}

TEST_CASE("train fold with lr zero keeps trainable params frozen") {
  auto feats = synth_features("amptr_lr0", 2, 2, 13);
  std::vector<UtteranceFeatures> train = {feats[0], feats[2]};
  std::vector<UtteranceFeatures> val = {feats[1], feats[3]};
  ModelConfig mc = train_config(2);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.batch_size = 4;
  tc.epochs = 2;
  FoldResult fr = train_fold(train, val, mc, tc);

  ModelParams init = init_params(mc);
  CHECK(max_trainable_diff(fr.best_params, init) == 0.0);
  // Same parameters, same per-sample losses; only the summation order moves.
  CHECK(fr.history[0].train_loss ==
        doctest::Approx(fr.history[1].train_loss).epsilon(1e-12));
}

TEST_CASE("train fold split errors") {
  auto feats = synth_features("amptr_err", 2, 1, 3);
  std::vector<UtteranceFeatures> a = {feats[0]};
  std::vector<UtteranceFeatures> b = {feats[1]};
  ModelConfig mc = train_config(2);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_WITH_AS(train_fold({}, b, mc, tc), doctest::Contains("empty"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(train_fold(a, {}, mc, tc), doctest::Contains("empty"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(train_fold(a, a, mc, tc), doctest::Contains("appears in both"),
                       std::runtime_error);
}

TEST_CASE("cross validation rotates folds and ignores job count") {
  SynthConfig sc;
  sc.n_classes = 2;
  sc.per_class = 6;
  sc.seed = 7;
  Dataset data = generate_synthetic(sc, fresh_dir("amptr_cv"));
  assign_folds(data, 3, 7);
  auto feats = prepare_features(data, small_mfcc(), 50, 10);

  std::vector<int> fold_sizes(3, 0);
  for (const auto& f : feats) {
    REQUIRE(f.fold >= 0);
    ++fold_sizes[f.fold];
  }

  ModelConfig mc = train_config(2);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 16;
  tc.epochs = 1;
  CvResult cv = run_cv(feats, 3, mc, tc, 1);

  REQUIRE(cv.fold_reports.size() == 3);
  REQUIRE(cv.fold_results.size() == 3);
  size_t tested = 0;
  for (int r = 0; r < 3; ++r) {
    // Rotation r tests exactly fold r, so each utterance is tested once.
    CHECK(cv.fold_reports[r].pairs.size() == static_cast<size_t>(fold_sizes[r]));
    tested += cv.fold_reports[r].pairs.size();
    CHECK(cv.fold_reports[r].wa >= 0.0);
    CHECK(cv.fold_reports[r].wa <= 1.0);
    CHECK(cv.fold_results[r].history.size() == 1);
  }
  CHECK(tested == feats.size());
  CHECK(cv.wa_mean >= 0.0);
  CHECK(cv.wa_mean <= 1.0);
  CHECK(cv.wa_std >= 0.0);

  // Rotations derive their own seeds, so thread count cannot change results.
  CvResult threaded = run_cv(feats, 3, mc, tc, 2);
  for (int r = 0; r < 3; ++r) {
    CHECK(threaded.fold_reports[r].wa == cv.fold_reports[r].wa);
    CHECK(threaded.fold_reports[r].ua == cv.fold_reports[r].ua);
  }

  CHECK_THROWS_WITH_AS(run_cv(feats, 2, mc, tc, 1), doctest::Contains("k >= 3"), ConfigError);
  auto broken = feats;
  broken[0].fold = -1;
  CHECK_THROWS_WITH_AS(run_cv(broken, 3, mc, tc, 1), doctest::Contains("outside [0,3)"),
                       ConfigError);
}

TEST_CASE("alignment analysis scores rigged attention against known peaks") {
  fs::path dir = fresh_dir("amptr_align");
  // Utterance "flat": constant amplitude, every frame ties, peak frame 0.
  Waveform flat;
  flat.sample_rate = 16000;
  flat.samples.assign(9600, 0.1);
  save_wav(dir / "flat.wav", flat);
  // Utterance "burst": silence except frame 30's window [4800, 5200).
  Waveform burst;
  burst.sample_rate = 16000;
  burst.samples.assign(9600, 0.0);
  for (int i = 4800; i < 5200; ++i) burst.samples[i] = 0.5;
  save_wav(dir / "burst.wav", burst);

  Dataset data;
  data.label_names = {"class0"};
  data.utterances.push_back({"flat", dir / "flat.wav", "class0", 0, 0});
  data.utterances.push_back({"burst", dir / "burst.wav", "class0", 0, 0});
  MfccConfig mf = small_mfcc();
  auto feats = prepare_features(data, mf, 50, 10, true);
  REQUIRE(feats.size() == 2);
  REQUIRE(feats[0].segments.size() == 1);

  ModelConfig mc = train_config(2);
  ModelParams params = init_params(mc);
  // Zeroed queries make every attention row uniform, so the first-index tie
  // rule parks every argmax at key 0.
  params.visit([](const std::string& name, Tensor& t) {
    if (name.find("W_q") != std::string::npos)
      std::fill(t.data().begin(), t.data().end(), 0.0);
  });

  std::vector<UtteranceFeatures> flat_set = {feats[0]};
  AlignmentReport at_peak = alignment_analysis(mc, params, flat_set, mf, 0);
  CHECK(at_peak.variant == "bmhsa");
  CHECK(at_peak.hit_rate == 1.0);
  CHECK(at_peak.self_exception_rate == 0.0);
  CHECK(at_peak.queries == 2 * 50);  // heads x valid rows
  CHECK(at_peak.segments == 1);
  CHECK(at_peak.chance == doctest::Approx(1.0 / 50.0));

  std::vector<UtteranceFeatures> burst_set = {feats[1]};
  AlignmentReport off_peak = alignment_analysis(mc, params, burst_set, mf, 5);
  CHECK(off_peak.per_segment.size() == 1);
  CHECK(off_peak.per_segment[0].peak == 30);
  CHECK(off_peak.hit_rate == 0.0);
  CHECK(off_peak.self_exception_rate == 1.0);  // the peak-row query attends to key 0
  CHECK(off_peak.chance == doctest::Approx(0.22));

  // Tolerance covering the whole segment: every query hits, chance clamps.
  ModelParams free_params = init_params(mc);
  AlignmentReport wide = alignment_analysis(mc, free_params, burst_set, mf, 50);
  CHECK(wide.hit_rate == 1.0);
  CHECK(wide.chance == 1.0);

  fs::path rep_path = dir / "alignment.json";
  save_alignment_json(rep_path, off_peak);
  std::ifstream in(rep_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"hit_rate\"") != std::string::npos);
  CHECK(text.find("\"peak\": 30") != std::string::npos);

  auto no_wave = prepare_features(data, mf, 50, 10, false);
  CHECK_THROWS_WITH_AS(alignment_analysis(mc, params, no_wave, mf, 5),
                       doctest::Contains("keep_waveforms"), std::invalid_argument);
}

TEST_CASE("ablation emits one row per variant") {
  SynthConfig sc;
  sc.n_classes = 2;
  sc.per_class = 6;
  sc.seed = 11;
  Dataset data = generate_synthetic(sc, fresh_dir("amptr_ab"));

  ModelConfig mc = train_config(2);
  mc.seed = 3;
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 16;
  tc.epochs = 1;
  tc.seed = 9;
  AblationConfig ab;
  ab.k = 3;
  ab.seeds = {4};
  ab.align_tolerance = 5;

  std::vector<AblationRow> rows = run_ablation(data, small_mfcc(), mc, tc, ab);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].variant == "bmhsa");
  CHECK(rows[1].variant == "mhsa_fa");
  CHECK(rows[2].variant == "mhsa_faca");
  for (const auto& r : rows) {
    CHECK(r.wa_mean >= 0.0);
    CHECK(r.wa_mean <= 1.0);
    CHECK(r.ua_mean >= 0.0);
    CHECK(r.ua_mean <= 1.0);
    CHECK(r.align_hit_rate >= 0.0);
    CHECK(r.align_hit_rate <= 1.0);
  }

  fs::path csv = fs::temp_directory_path() / "amptr_ab" / "ablation.csv";
  save_ablation_csv(csv, rows);
  std::ifstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "variant,WA_mean,WA_std,UA_mean,UA_std,align_hit_rate");
  int data_rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++data_rows;
  }
  CHECK(data_rows == 3);
}

TEST_SUITE_END();
