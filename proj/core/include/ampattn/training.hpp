#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ampattn/data.hpp"
#include "ampattn/mfcc.hpp"
#include "ampattn/model.hpp"

namespace ampattn {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 128;
  int epochs = 100;
  uint64_t seed = 1;  // epoch shuffling

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);  // absent keys keep defaults

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t step = 0;

  void init(const std::vector<Tensor>& params);
};

/// One bias-corrected Adam update from the gradients accumulated on params;
/// clears those gradients afterwards. A parameter that received no gradient
/// this step decays its moments and stays put.
void adam_step(std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg);

/// One utterance, featurized: all its segments carry the utterance label.
struct UtteranceFeatures {
  std::string id;
  int label = -1;
  int fold = -1;
  std::vector<Segment> segments;
  Waveform wave;  // kept only when requested (alignment analysis)
};

std::vector<UtteranceFeatures> prepare_features(const Dataset& data, const MfccConfig& mfcc,
                                                int seg_len, int seg_hop,
                                                bool keep_waveforms = false);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_wa = 0, val_ua = 0;
};

/// History CSV with header epoch,train_loss,val_WA,val_UA.
void save_history(const std::filesystem::path& path, const std::vector<EpochStats>& history);

struct EvalReport {
  std::vector<std::vector<int64_t>> confusion;  // rows = truth
  double wa = 0, ua = 0;
  std::vector<std::pair<int, int>> pairs;  // (truth, prediction) per utterance
};

/// Mean of per-segment softmax probabilities, argmax; ties -> lowest class id.
int aggregate_utterance(const std::vector<std::vector<double>>& segment_logits);

/// Confusion matrix and WA/UA from (truth, prediction) pairs. WA = correct /
/// total; UA = mean per-class recall, zero-support classes excluded with a
/// warning. evaluate() delegates here, so a recount from its stored pairs
/// reproduces its metrics exactly.
EvalReport tally_pairs(const std::vector<std::pair<int, int>>& pairs, int n_classes);

/// Utterance-level metrics via aggregate_utterance over segment logits.
EvalReport evaluate(const ModelConfig& cfg, ModelParams& params,
                    const std::vector<UtteranceFeatures>& test);

struct FoldResult {
  ModelConfig cfg;  // the (possibly rotation-derived) config the fold ran with
  ModelParams best_params;
  int best_epoch = -1;
  double best_val_wa = 0, best_val_ua = 0;
  std::vector<EpochStats> history;
};

/// Per-segment cross-entropy training with Adam; shuffled batches per epoch
/// from the seeded RNG; returns the best-validation-UA parameter snapshot
/// (earliest epoch on ties) and the full per-epoch history.
FoldResult train_fold(const std::vector<UtteranceFeatures>& train_set,
                      const std::vector<UtteranceFeatures>& val_set, const ModelConfig& mc,
                      const TrainConfig& tc);

struct CvResult {
  std::vector<EvalReport> fold_reports;  // index = rotation
  std::vector<FoldResult> fold_results;
  double wa_mean = 0, wa_std = 0, ua_mean = 0, ua_std = 0;
};

/// k rotations: test fold r, validation fold (r+1) mod k, train the rest.
/// Rotation r derives its own model/shuffle seeds, so results do not depend
/// on jobs (threads processing rotations).
CvResult run_cv(const std::vector<UtteranceFeatures>& all, int k, const ModelConfig& mc,
                const TrainConfig& tc, int jobs = 1);

struct AlignmentReport {
  std::string variant;
  double hit_rate = 0;       // fraction of (segment, head, query) hits
  double chance = 0;         // (2w+1)/m
  int tolerance = 0;
  int64_t queries = 0;
  int segments = 0;
  double self_exception_rate = 0;  // peak-row queries attending off-peak
  struct PerSegment {
    std::string id;
    int offset = 0;
    int peak = 0;
    double hit_rate = 0;
  };
  std::vector<PerSegment> per_segment;
};

/// For every test segment: forward with trace, compare each head's per-query
/// attention argmax against the segment's amplitude peak frame within +-w.
AlignmentReport alignment_analysis(const ModelConfig& cfg, ModelParams& params,
                                   const std::vector<UtteranceFeatures>& set,
                                   const MfccConfig& mfcc, int tolerance);

void save_alignment_json(const std::filesystem::path& path, const AlignmentReport& rep);

struct AblationRow {
  std::string variant;
  double wa_mean = 0, wa_std = 0;
  double ua_mean = 0, ua_std = 0;
  double align_hit_rate = 0;
};

struct AblationConfig {
  int k = 5;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int jobs = 1;
  int align_tolerance = 5;
  int seg_hop = 10;  // frames between segment starts
};

/// Train {BMHSA, MHSA_FA, MHSA_FACA} with identical seeding per seed (same
/// fold assignment, same derived init/shuffle seeds), aggregate WA/UA over
/// seeds, and measure test-fold attention/amplitude alignment per variant.
std::vector<AblationRow> run_ablation(Dataset data, const MfccConfig& mfcc,
                                      const ModelConfig& base, const TrainConfig& tc,
                                      const AblationConfig& ab);

/// Ablation CSV: variant,WA_mean,WA_std,UA_mean,UA_std,align_hit_rate.
void save_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace ampattn
