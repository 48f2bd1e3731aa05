#include "ampattn/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "ampattn/errors.hpp"
#include "ampattn/logging.hpp"
#include "ampattn/tensor_io.hpp"

namespace ampattn {

void TrainConfig::validate() const {
  if (lr < 0) throw ConfigError("learning rate must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || eps <= 0)
    throw ConfigError("Adam hyperparameters out of range");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["lr"] = cfg.lr;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig d;
  TrainConfig c;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  return c;
}

void AdamState::init(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto& p : params) {
    m.push_back(Tensor::zeros(p.shape()));
    v.push_back(Tensor::zeros(p.shape()));
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam state holds " + std::to_string(state.m.size()) +
                                " moments for " + std::to_string(params.size()) + " params");
  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].shape() != p.shape())
      throw std::invalid_argument("adam moment shape " + shape_str(state.m[i].shape()) +
                                  " does not match param " + shape_str(p.shape()));
    auto pd = p.data();
    auto md = state.m[i].data();
    auto vd = state.v[i].data();
    auto gd = p.impl()->grad;  // may be empty: no gradient flowed this step
    for (int64_t j = 0; j < p.size(); ++j) {
      double g = gd.empty() ? 0.0 : gd[j];
      md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * g;
      vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * g * g;
      double mhat = md[j] / bc1;
      double vhat = vd[j] / bc2;
      pd[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.zero_grad();
  }
}

std::vector<UtteranceFeatures> prepare_features(const Dataset& data, const MfccConfig& mfcc,
                                                int seg_len, int seg_hop, bool keep_waveforms) {
  std::vector<UtteranceFeatures> out;
  out.reserve(data.utterances.size());
  for (const auto& u : data.utterances) {
    UtteranceFeatures f;
    f.id = u.id;
    f.label = u.label;
    f.fold = u.fold;
    Waveform w = load_wav(u.wav_path);
    MfccMatrix m = compute_mfcc(w, mfcc);
    f.segments = segment_mfcc(m, seg_len, seg_hop);
    for (auto& s : f.segments) {
      s.label = u.label;
      s.utterance_id = u.id;
    }
    if (keep_waveforms) f.wave = std::move(w);
    out.push_back(std::move(f));
  }
  return out;
}

void save_history(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "epoch,train_loss,val_WA,val_UA\n";
  for (const auto& e : history)
    out << e.epoch << ',' << csv_double(e.train_loss) << ',' << csv_double(e.val_wa) << ','
        << csv_double(e.val_ua) << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

int aggregate_utterance(const std::vector<std::vector<double>>& segment_logits) {
  if (segment_logits.empty())
    throw std::invalid_argument("aggregate_utterance: no segment logits");
  size_t n = segment_logits[0].size();
  std::vector<double> mean(n, 0.0);
  for (const auto& logits : segment_logits) {
    if (logits.size() != n)
      throw std::invalid_argument("aggregate_utterance: ragged logits");
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    for (size_t j = 0; j < n; ++j) mean[j] += std::exp(logits[j] - mx) / denom;
  }
  int best = 0;
  for (size_t j = 1; j < n; ++j)
    if (mean[j] > mean[best]) best = static_cast<int>(j);  // ties keep the lowest id
  return best;
}

EvalReport tally_pairs(const std::vector<std::pair<int, int>>& pairs, int n_classes) {
  if (pairs.empty()) throw std::invalid_argument("tally_pairs: no (truth, prediction) pairs");
  EvalReport rep;
  rep.pairs = pairs;
  rep.confusion.assign(n_classes, std::vector<int64_t>(n_classes, 0));
  for (auto [truth, pred] : pairs) {
    if (truth < 0 || truth >= n_classes || pred < 0 || pred >= n_classes)
      throw std::invalid_argument("tally_pairs: class id outside [0," +
                                  std::to_string(n_classes) + ")");
    rep.confusion[truth][pred] += 1;
  }
  int64_t correct = 0, total = 0;
  double recall_sum = 0.0;
  int supported = 0;
  for (int c = 0; c < n_classes; ++c) {
    int64_t row = 0;
    for (int j = 0; j < n_classes; ++j) row += rep.confusion[c][j];
    correct += rep.confusion[c][c];
    total += row;
    if (row > 0) {
      recall_sum += static_cast<double>(rep.confusion[c][c]) / static_cast<double>(row);
      ++supported;
    } else {
      log_info("warning: class %d has no test support; excluded from UA", c);
    }
  }
  rep.wa = static_cast<double>(correct) / static_cast<double>(total);
  rep.ua = supported > 0 ? recall_sum / supported : 0.0;
  return rep;
}

EvalReport evaluate(const ModelConfig& cfg, ModelParams& params,
                    const std::vector<UtteranceFeatures>& test) {
  if (test.empty()) throw std::runtime_error("evaluate: empty test set");
  std::vector<std::pair<int, int>> pairs;
  for (const auto& u : test) {
    std::vector<std::vector<double>> logits;
    for (const auto& seg : u.segments) {
      Graph g;
      Tensor out = model_forward(g, seg, cfg, params, RunMode::eval);
      logits.emplace_back(out.data().begin(), out.data().end());
    }
    pairs.emplace_back(u.label, aggregate_utterance(logits));
  }
  return tally_pairs(pairs, cfg.n_classes);
}

FoldResult train_fold(const std::vector<UtteranceFeatures>& train_set,
                      const std::vector<UtteranceFeatures>& val_set, const ModelConfig& mc,
                      const TrainConfig& tc) {
  mc.validate();
  tc.validate();
  if (train_set.empty() || val_set.empty())
    throw std::runtime_error("train_fold: empty train or validation split");
  {
    std::set<std::string> train_ids;
    for (const auto& u : train_set) train_ids.insert(u.id);
    for (const auto& u : val_set)
      if (train_ids.count(u.id))
        throw std::runtime_error("train_fold: utterance '" + u.id +
                                 "' appears in both train and validation splits");
  }

  std::vector<const Segment*> samples;
  for (const auto& u : train_set)
    for (const auto& s : u.segments) samples.push_back(&s);

  ModelParams params = init_params(mc);
  std::vector<Tensor> trainable = params.trainable();
  AdamState adam;
  adam.init(trainable);

  FoldResult result;
  result.cfg = mc;
  result.best_params = params.clone();
  double best_ua = -1.0;
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    Rng rng(Rng::derive(tc.seed, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t pos = 0;
    while (pos < order.size()) {
      size_t batch = std::min(static_cast<size_t>(tc.batch_size), order.size() - pos);
      for (size_t b = 0; b < batch; ++b) {
        const Segment& seg = *samples[order[pos + b]];
        Graph g;
        Tensor logits = model_forward(g, seg, mc, params, RunMode::train);
        Tensor loss = g.cross_entropy(logits, seg.label);
        loss_sum += loss.value();
        g.backward(g.scale(loss, 1.0 / static_cast<double>(batch)));
      }
      adam_step(trainable, adam, tc);
      pos += batch;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(samples.size());
    EvalReport val = evaluate(mc, params, val_set);
    stats.val_wa = val.wa;
    stats.val_ua = val.ua;
    result.history.push_back(stats);
    if (val.ua > best_ua) {
      best_ua = val.ua;
      result.best_params = params.clone();
      result.best_epoch = epoch;
      result.best_val_wa = val.wa;
      result.best_val_ua = val.ua;
    }
    log_debug("epoch %d: loss %.4f val WA %.4f UA %.4f", epoch, stats.train_loss, val.wa, val.ua);
  }
  return result;
}

namespace {

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

}  // namespace

CvResult run_cv(const std::vector<UtteranceFeatures>& all, int k, const ModelConfig& mc,
                const TrainConfig& tc, int jobs) {
  if (k < 3) throw ConfigError("k-fold rotation needs k >= 3");
  for (const auto& u : all)
    if (u.fold < 0 || u.fold >= k)
      throw ConfigError("utterance '" + u.id + "' has fold " + std::to_string(u.fold) +
                        " outside [0," + std::to_string(k) + "); run fold assignment first");

  CvResult cv;
  cv.fold_reports.resize(k);
  cv.fold_results.resize(k);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::string error_msg;
  std::mutex error_mu;

  auto worker = [&]() {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= k || failed.load()) return;
      try {
        int val_fold = (r + 1) % k;
        std::vector<UtteranceFeatures> train, val, test;
        for (const auto& u : all) {
          if (u.fold == r)
            test.push_back(u);
          else if (u.fold == val_fold)
            val.push_back(u);
          else
            train.push_back(u);
        }
        ModelConfig mcr = mc;
        mcr.seed = Rng::derive(mc.seed, 1000 + static_cast<uint64_t>(r));
        TrainConfig tcr = tc;
        tcr.seed = Rng::derive(tc.seed, 2000 + static_cast<uint64_t>(r));
        FoldResult fr = train_fold(train, val, mcr, tcr);
        EvalReport rep = evaluate(mcr, fr.best_params, test);
        log_info("rotation %d/%d: test WA %.4f UA %.4f (best epoch %d)", r + 1, k, rep.wa, rep.ua,
                 fr.best_epoch);
        cv.fold_reports[r] = std::move(rep);
        cv.fold_results[r] = std::move(fr);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        failed.store(true);
        if (error_msg.empty()) error_msg = e.what();
        return;
      }
    }
  };

  int nthreads = std::max(1, std::min(jobs, k));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("cross-validation failed: " + error_msg);

  std::vector<double> was, uas;
  for (const auto& rep : cv.fold_reports) {
    was.push_back(rep.wa);
    uas.push_back(rep.ua);
  }
  cv.wa_mean = mean_of(was);
  cv.ua_mean = mean_of(uas);
  cv.wa_std = sample_std(was, cv.wa_mean);
  cv.ua_std = sample_std(uas, cv.ua_mean);
  return cv;
}

AlignmentReport alignment_analysis(const ModelConfig& cfg, ModelParams& params,
                                   const std::vector<UtteranceFeatures>& set,
                                   const MfccConfig& mfcc, int tolerance) {
  AlignmentReport rep;
  rep.variant = to_string(cfg.variant);
  rep.tolerance = tolerance;
  rep.chance = std::min(1.0, (2.0 * tolerance + 1.0) / cfg.seg_len);
  int64_t hits = 0, queries = 0, exceptions = 0, peak_rows = 0;
  for (const auto& u : set) {
    if (u.wave.samples.empty())
      throw std::invalid_argument("alignment_analysis: utterance '" + u.id +
                                  "' carries no waveform (prepare with keep_waveforms)");
    for (const auto& seg : u.segments) {
      int peak = amplitude_peak_frame(u.wave, mfcc, seg);
      Graph g;
      AttentionTrace trace;
      model_forward(g, seg, cfg, params, RunMode::eval, &trace);
      int m = cfg.seg_len;
      int valid = seg.valid > 0 ? seg.valid : m;
      int64_t seg_hits = 0, seg_queries = 0;
      for (const auto& head : trace.heads) {
        auto map = head.H_o.data();
        for (int q = 0; q < valid; ++q) {
          int arg = 0;
          const double* row = &map[static_cast<size_t>(q) * m];
          for (int j = 1; j < m; ++j)
            if (row[j] > row[arg]) arg = j;
          bool hit = std::abs(arg - peak) <= tolerance;
          seg_hits += hit;
          ++seg_queries;
          if (q == peak) {
            ++peak_rows;
            exceptions += !hit;
          }
        }
      }
      hits += seg_hits;
      queries += seg_queries;
      rep.per_segment.push_back({u.id, seg.source_offset, peak,
                                 seg_queries ? static_cast<double>(seg_hits) / seg_queries : 0.0});
      ++rep.segments;
    }
  }
  rep.queries = queries;
  rep.hit_rate = queries ? static_cast<double>(hits) / static_cast<double>(queries) : 0.0;
  rep.self_exception_rate =
      peak_rows ? static_cast<double>(exceptions) / static_cast<double>(peak_rows) : 0.0;
  return rep;
}

void save_alignment_json(const std::filesystem::path& path, const AlignmentReport& rep) {
  nlohmann::json j;
  j["variant"] = rep.variant;
  j["hit_rate"] = rep.hit_rate;
  j["chance"] = rep.chance;
  j["tolerance"] = rep.tolerance;
  j["queries"] = rep.queries;
  j["segments"] = rep.segments;
  j["self_exception_rate"] = rep.self_exception_rate;
  j["per_segment"] = nlohmann::json::array();
  for (const auto& s : rep.per_segment)
    j["per_segment"].push_back(
        {{"id", s.id}, {"offset", s.offset}, {"peak", s.peak}, {"hit_rate", s.hit_rate}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

std::vector<AblationRow> run_ablation(Dataset data, const MfccConfig& mfcc,
                                      const ModelConfig& base, const TrainConfig& tc,
                                      const AblationConfig& ab) {
  if (ab.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const AttentionVariant variants[] = {AttentionVariant::BMHSA, AttentionVariant::MHSA_FA,
                                       AttentionVariant::MHSA_FACA};
  // Features are fold-independent; compute once, then stamp folds per seed.
  std::vector<UtteranceFeatures> features =
      prepare_features(data, mfcc, base.seg_len, ab.seg_hop, true);

  struct PerVariant {
    std::vector<double> wa, ua;
    double align_hits = 0, align_queries = 0;
  };
  PerVariant acc[3];

  for (uint64_t seed : ab.seeds) {
    Dataset folded = data;
    for (auto& u : folded.utterances) u.fold = -1;
    assign_folds(folded, ab.k, seed);
    for (size_t i = 0; i < features.size(); ++i) features[i].fold = folded.utterances[i].fold;

    for (int v = 0; v < 3; ++v) {
      ModelConfig mc = base;
      mc.variant = variants[v];
      mc.seed = Rng::derive(base.seed, seed);  // identical across variants
      TrainConfig tcs = tc;
      tcs.seed = Rng::derive(tc.seed, seed);
      log_info("ablation: seed %llu variant %s", static_cast<unsigned long long>(seed),
               to_string(mc.variant).c_str());
      CvResult cv = run_cv(features, ab.k, mc, tcs, ab.jobs);
      acc[v].wa.push_back(cv.wa_mean);
      acc[v].ua.push_back(cv.ua_mean);
      for (int r = 0; r < ab.k; ++r) {
        std::vector<UtteranceFeatures> test;
        for (const auto& u : features)
          if (u.fold == r) test.push_back(u);
        ModelConfig mcr = mc;
        mcr.seed = Rng::derive(mc.seed, 1000 + static_cast<uint64_t>(r));
        AlignmentReport ar = alignment_analysis(mcr, cv.fold_results[r].best_params, test, mfcc,
                                                ab.align_tolerance);
        acc[v].align_hits += ar.hit_rate * static_cast<double>(ar.queries);
        acc[v].align_queries += static_cast<double>(ar.queries);
      }
    }
  }

  std::vector<AblationRow> rows;
  for (int v = 0; v < 3; ++v) {
    AblationRow row;
    row.variant = to_string(variants[v]);
    row.wa_mean = mean_of(acc[v].wa);
    row.wa_std = sample_std(acc[v].wa, row.wa_mean);
    row.ua_mean = mean_of(acc[v].ua);
    row.ua_std = sample_std(acc[v].ua, row.ua_mean);
    row.align_hit_rate = acc[v].align_queries > 0 ? acc[v].align_hits / acc[v].align_queries : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void save_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "variant,WA_mean,WA_std,UA_mean,UA_std,align_hit_rate\n";
  for (const auto& r : rows)
    out << r.variant << ',' << csv_double(r.wa_mean) << ',' << csv_double(r.wa_std) << ','
        << csv_double(r.ua_mean) << ',' << csv_double(r.ua_std) << ','
        << csv_double(r.align_hit_rate) << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace ampattn
