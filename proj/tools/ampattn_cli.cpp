// ampattn: synthetic data, k-fold training, evaluation, attention-map export,
// gradient checks, and the three-variant ablation, all from one binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
// stdout carries machine-readable CSV/JSON only; logs go to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ampattn/data.hpp"
#include "ampattn/errors.hpp"
#include "ampattn/gradcheck.hpp"
#include "ampattn/logging.hpp"
#include "ampattn/mfcc.hpp"
#include "ampattn/model.hpp"
#include "ampattn/training.hpp"
#include "ampattn/wav.hpp"

namespace fs = std::filesystem;
using ampattn::ConfigError;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: everything a training or ablation run depends on, in one
// JSON file. The file written into --out is fully resolved, so feeding it back
// through --config reproduces the run.
// ---------------------------------------------------------------------------

struct RunConfig {
  ampattn::ModelConfig model;
  ampattn::TrainConfig train;
  ampattn::MfccConfig mfcc;
  int folds = 5;
  int seg_hop = 10;  // frames between segment starts
  int jobs = 1;
  int align_tolerance = 5;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};  // ablation only
  std::string manifest;
};

std::string run_config_to_json(const RunConfig& rc) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(ampattn::model_config_to_json(rc.model));
  j["train"] = nlohmann::json::parse(ampattn::train_config_to_json(rc.train));
  j["mfcc"] = nlohmann::json::parse(ampattn::mfcc_config_to_json(rc.mfcc));
  j["folds"] = rc.folds;
  j["seg_hop"] = rc.seg_hop;
  j["jobs"] = rc.jobs;
  j["align_tolerance"] = rc.align_tolerance;
  j["seeds"] = rc.seeds;
  j["manifest"] = rc.manifest;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunConfig d;
  RunConfig rc;
  if (j.contains("model")) rc.model = ampattn::model_config_from_json(j["model"].dump());
  if (j.contains("train")) rc.train = ampattn::train_config_from_json(j["train"].dump());
  if (j.contains("mfcc")) rc.mfcc = ampattn::mfcc_config_from_json(j["mfcc"].dump());
  rc.folds = j.value("folds", d.folds);
  rc.seg_hop = j.value("seg_hop", d.seg_hop);
  rc.jobs = j.value("jobs", d.jobs);
  rc.align_tolerance = j.value("align_tolerance", d.align_tolerance);
  rc.seeds = j.value("seeds", d.seeds);
  rc.manifest = j.value("manifest", d.manifest);
  return rc;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

/// Variant names as the CLI accepts them; the long library names also parse.
ampattn::AttentionVariant parse_variant(const std::string& name) {
  if (name == "fa") return ampattn::AttentionVariant::MHSA_FA;
  if (name == "faca") return ampattn::AttentionVariant::MHSA_FACA;
  return ampattn::variant_from_string(name);  // bmhsa, mhsa_fa, mhsa_faca
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + item + "' is not a seed");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

nlohmann::json confusion_json(const std::vector<std::vector<int64_t>>& confusion) {
  auto rows = nlohmann::json::array();
  for (const auto& r : confusion) rows.push_back(r);
  return rows;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, config;
  ampattn::SynthConfig sc;
  CLI::Option *classes_opt, *per_class_opt, *duration_opt, *rate_opt, *noise_opt, *burst_opt,
      *seed_opt;
};

int cmd_synth(SynthArgs& a) {
  ampattn::SynthConfig sc;
  if (!a.config.empty()) sc = ampattn::synth_config_from_json(read_text(a.config));
  if (*a.classes_opt) sc.n_classes = a.sc.n_classes;
  if (*a.per_class_opt) sc.per_class = a.sc.per_class;
  if (*a.duration_opt) sc.duration_s = a.sc.duration_s;
  if (*a.rate_opt) sc.sample_rate = a.sc.sample_rate;
  if (*a.noise_opt) sc.noise_floor = a.sc.noise_floor;
  if (*a.burst_opt) sc.burst_ms = a.sc.burst_ms;
  if (*a.seed_opt) sc.seed = a.sc.seed;
  sc.validate();
  if (sc.classes.empty()) sc.classes = ampattn::default_class_specs(sc.n_classes);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "run_config.json", ampattn::synth_config_to_json(sc));
  ampattn::Dataset data = ampattn::generate_synthetic(sc, a.out);

  nlohmann::json j;
  j["out_dir"] = fs::absolute(a.out).string();
  j["manifest"] = (fs::absolute(a.out) / "manifest.csv").string();
  j["n_utterances"] = data.utterances.size();
  j["n_classes"] = data.n_classes();
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string out, config, manifest, variant;
  int folds = 5, jobs = 1, epochs = 100, batch_size = 128, seg_hop = 10;
  double lr = 3e-4;
  uint64_t seed = 1;
  CLI::Option *manifest_opt, *variant_opt, *folds_opt, *jobs_opt, *epochs_opt, *batch_opt,
      *lr_opt, *seed_opt, *hop_opt;
};

RunConfig resolve_run_config(const std::string& config_path, const TrainArgs& a) {
  RunConfig rc;
  if (!config_path.empty()) rc = run_config_from_json(read_text(config_path));
  if (*a.manifest_opt) rc.manifest = a.manifest;
  if (a.variant_opt && *a.variant_opt) rc.model.variant = parse_variant(a.variant);
  if (*a.folds_opt) rc.folds = a.folds;
  if (*a.jobs_opt) rc.jobs = a.jobs;
  if (*a.epochs_opt) rc.train.epochs = a.epochs;
  if (*a.batch_opt) rc.train.batch_size = a.batch_size;
  if (*a.lr_opt) rc.train.lr = a.lr;
  if (*a.hop_opt) rc.seg_hop = a.seg_hop;
  if (*a.seed_opt) {
    rc.model.seed = a.seed;
    rc.train.seed = a.seed;
  }
  if (rc.manifest.empty()) throw ConfigError("--manifest is required (flag or config file)");
  if (rc.model.n_mfcc != rc.mfcc.n_mfcc)
    throw ConfigError("model n_mfcc " + std::to_string(rc.model.n_mfcc) +
                      " does not match mfcc n_mfcc " + std::to_string(rc.mfcc.n_mfcc));
  if (rc.seg_hop < 1) throw ConfigError("seg_hop must be >= 1");
  if (rc.jobs < 1) throw ConfigError("--jobs must be >= 1");
  rc.train.validate();
  return rc;
}

/// Checkpoint sidecar: labels and feature settings make the checkpoint
/// sufficient for eval and attention-map export on new audio.
std::string checkpoint_extra(const ampattn::Dataset& data, const RunConfig& rc,
                             const ampattn::FoldResult& fr, const ampattn::EvalReport& test) {
  nlohmann::json extra;
  extra["labels"] = data.label_names;
  extra["mfcc"] = nlohmann::json::parse(ampattn::mfcc_config_to_json(rc.mfcc));
  extra["seg_hop"] = rc.seg_hop;
  extra["metrics"] = {{"val_WA", fr.best_val_wa},
                      {"val_UA", fr.best_val_ua},
                      {"test_WA", test.wa},
                      {"test_UA", test.ua}};
  return extra.dump();
}

int cmd_train(TrainArgs& a) {
  RunConfig rc = resolve_run_config(a.config, a);
  ampattn::Dataset data = ampattn::load_manifest(rc.manifest);
  rc.model.n_classes = data.n_classes();  // the manifest vocabulary decides
  rc.model.validate();
  rc.manifest = fs::absolute(rc.manifest).string();

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "run_config.json", run_config_to_json(rc));

  ampattn::assign_folds(data, rc.folds, rc.train.seed);
  auto features = ampattn::prepare_features(data, rc.mfcc, rc.model.seg_len, rc.seg_hop);
  ampattn::CvResult cv = ampattn::run_cv(features, rc.folds, rc.model, rc.train, rc.jobs);

  nlohmann::json report;
  report["folds"] = rc.folds;
  report["variant"] = ampattn::to_string(rc.model.variant);
  report["WA_mean"] = cv.wa_mean;
  report["WA_std"] = cv.wa_std;
  report["UA_mean"] = cv.ua_mean;
  report["UA_std"] = cv.ua_std;
  auto per_fold = nlohmann::json::array();
  for (int r = 0; r < rc.folds; ++r) {
    ampattn::FoldResult& fr = cv.fold_results[r];
    fs::path fold_dir = fs::path(a.out) / ("fold" + std::to_string(r));
    fs::create_directories(fold_dir);
    ampattn::save_history(fold_dir / "history.csv", fr.history);
    ampattn::save_checkpoint(fold_dir / "checkpoint", fr.cfg, fr.best_params, fr.best_epoch,
                             checkpoint_extra(data, rc, fr, cv.fold_reports[r]));
    per_fold.push_back({{"rotation", r},
                        {"best_epoch", fr.best_epoch},
                        {"val_WA", fr.best_val_wa},
                        {"val_UA", fr.best_val_ua},
                        {"test_WA", cv.fold_reports[r].wa},
                        {"test_UA", cv.fold_reports[r].ua},
                        {"confusion", confusion_json(cv.fold_reports[r].confusion)}});
  }
  report["per_fold"] = per_fold;
  std::string text = report.dump(2);
  write_text(fs::path(a.out) / "cv_report.json", text);
  std::cout << text << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest;
  int fold = -1;
};

int cmd_eval(EvalArgs& a) {
  ampattn::Checkpoint ck = ampattn::load_checkpoint(a.checkpoint);
  nlohmann::json extra = nlohmann::json::parse(ck.extra_json);
  ampattn::Dataset data = ampattn::load_manifest(a.manifest);

  if (extra.contains("labels")) {
    std::vector<std::string> ck_labels = extra["labels"].get<std::vector<std::string>>();
    if (ck_labels != data.label_names) {
      auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
        return "[" + s + "]";
      };
      throw std::runtime_error("label vocabulary mismatch: checkpoint " + join(ck_labels) +
                               " vs manifest " + join(data.label_names));
    }
  } else if (data.n_classes() != ck.cfg.n_classes) {
    throw std::runtime_error("manifest has " + std::to_string(data.n_classes()) +
                             " classes; checkpoint expects " +
                             std::to_string(ck.cfg.n_classes));
  }

  ampattn::MfccConfig mfcc;
  if (extra.contains("mfcc")) mfcc = ampattn::mfcc_config_from_json(extra["mfcc"].dump());
  int seg_hop = extra.value("seg_hop", 10);

  if (a.fold >= 0) {
    std::vector<ampattn::Utterance> kept;
    for (const auto& u : data.utterances)
      if (u.fold == a.fold) kept.push_back(u);
    if (kept.empty())
      throw std::runtime_error("fold " + std::to_string(a.fold) +
                               " selects no utterances in " + a.manifest);
    data.utterances = std::move(kept);
  }

  auto features = ampattn::prepare_features(data, mfcc, ck.cfg.seg_len, seg_hop);
  ampattn::EvalReport rep = ampattn::evaluate(ck.cfg, ck.params, features);

  nlohmann::json j;
  j["WA"] = rep.wa;
  j["UA"] = rep.ua;
  j["confusion"] = confusion_json(rep.confusion);
  j["n_utterances"] = rep.pairs.size();
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// attn-map
// ---------------------------------------------------------------------------

struct AttnMapArgs {
  std::string checkpoint, wav, out;
  int offset = 0;
};

int cmd_attn_map(AttnMapArgs& a) {
  ampattn::Checkpoint ck = ampattn::load_checkpoint(a.checkpoint);
  nlohmann::json extra = nlohmann::json::parse(ck.extra_json);
  ampattn::MfccConfig mfcc;
  if (extra.contains("mfcc")) mfcc = ampattn::mfcc_config_from_json(extra["mfcc"].dump());

  ampattn::Waveform wave = ampattn::load_wav(a.wav);
  ampattn::MfccMatrix feats = ampattn::compute_mfcc(wave, mfcc);
  int frames = feats.frames.extent(0);
  int m = ck.cfg.seg_len;
  if (a.offset < 0 || a.offset >= frames)
    throw ConfigError("segment offset " + std::to_string(a.offset) + " beyond utterance (" +
                      std::to_string(frames) + " frames)");

  ampattn::Segment seg;
  seg.utterance_id = fs::path(a.wav).stem().string();
  seg.source_offset = a.offset;
  seg.valid = std::min(m, frames - a.offset);
  seg.padded = seg.valid < m;
  seg.frames = ampattn::Tensor::zeros({m, mfcc.n_mfcc});
  for (int r = 0; r < seg.valid; ++r)
    for (int c = 0; c < mfcc.n_mfcc; ++c)
      seg.frames.at2(r, c) = feats.frames.at2(a.offset + r, c);

  fs::create_directories(a.out);
  RunConfig rc;
  rc.model = ck.cfg;
  rc.mfcc = mfcc;
  write_text(fs::path(a.out) / "run_config.json", run_config_to_json(rc));

  ampattn::Graph g;
  ampattn::AttentionTrace trace;
  ampattn::model_forward(g, seg, ck.cfg, ck.params, ampattn::RunMode::eval, &trace);
  ampattn::export_trace(a.out, seg.utterance_id, a.offset, trace, ck.cfg.attention());

  int peak = ampattn::amplitude_peak_frame(wave, mfcc, seg);
  nlohmann::json j;
  j["utterance_id"] = seg.utterance_id;
  j["segment_offset"] = a.offset;
  j["valid_frames"] = seg.valid;
  j["amplitude_peak_frame"] = peak;
  std::string stem = seg.utterance_id + "_" + std::to_string(a.offset);
  write_text(fs::path(a.out) / (stem + "_peak.json"), j.dump(2));
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string scale = "tiny";
  uint64_t seed = 1;
};

int cmd_gradcheck(GradcheckArgs& a) {
  if (a.scale != "tiny")
    throw ConfigError("unknown scale '" + a.scale + "'; tiny is the only scale");
  constexpr double kTol = 1e-4;
  auto results = ampattn::run_gradcheck_suite(a.seed);
  std::printf("item,max_rel_err,status\n");
  std::vector<std::string> failed;
  for (const auto& r : results) {
    bool ok = r.max_rel_err <= kTol;
    std::printf("%s,%.3e,%s\n", r.name.c_str(), r.max_rel_err, ok ? "pass" : "FAIL");
    if (!ok) failed.push_back(r.name);
  }
  std::fflush(stdout);
  if (!failed.empty()) {
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
    ampattn::log_error("gradcheck exceeded %.0e on: %s", kTol, list.c_str());
    return 1;
  }
  ampattn::log_info("gradcheck: %zu items within %.0e", results.size(), kTol);
  return 0;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

struct AblationArgs {
  TrainArgs base;  // shares --manifest/--config/--folds/... plumbing
  std::string seeds_text;
  int align_tolerance = 5;
  CLI::Option *seeds_opt, *tol_opt;
};

int cmd_ablation(AblationArgs& a) {
  RunConfig rc = resolve_run_config(a.base.config, a.base);
  if (*a.seeds_opt) rc.seeds = parse_seed_list(a.seeds_text);
  if (*a.tol_opt) rc.align_tolerance = a.align_tolerance;

  ampattn::Dataset data = ampattn::load_manifest(rc.manifest);
  rc.model.n_classes = data.n_classes();
  rc.model.validate();
  rc.manifest = fs::absolute(rc.manifest).string();

  fs::create_directories(a.base.out);
  write_text(fs::path(a.base.out) / "run_config.json", run_config_to_json(rc));

  ampattn::AblationConfig ab;
  ab.k = rc.folds;
  ab.seeds = rc.seeds;
  ab.jobs = rc.jobs;
  ab.align_tolerance = rc.align_tolerance;
  ab.seg_hop = rc.seg_hop;
  auto rows = ampattn::run_ablation(data, rc.mfcc, rc.model, rc.train, ab);

  fs::path csv_path = fs::path(a.base.out) / "ablation.csv";
  ampattn::save_ablation_csv(csv_path, rows);

  nlohmann::json align;
  align["tolerance"] = rc.align_tolerance;
  align["chance"] =
      std::min(1.0, (2.0 * rc.align_tolerance + 1.0) / rc.model.seg_len);
  for (const auto& r : rows) align["hit_rate"][r.variant] = r.align_hit_rate;
  write_text(fs::path(a.base.out) / "alignment.json", align.dump(2));

  std::cout << read_text(csv_path);
  return 0;
}

// ---------------------------------------------------------------------------

void add_train_options(CLI::App* sub, TrainArgs& a, bool with_variant) {
  a.manifest_opt = sub->add_option("--manifest", a.manifest, "Dataset manifest CSV");
  sub->add_option("--config", a.config, "Run config JSON (flags override)");
  sub->add_option("--out", a.out, "Output directory")->required();
  // The ablation trains every variant, so it takes no --variant.
  a.variant_opt =
      with_variant ? sub->add_option("--variant", a.variant, "bmhsa, fa, or faca") : nullptr;
  a.folds_opt = sub->add_option("--folds", a.folds, "Cross-validation folds");
  a.jobs_opt = sub->add_option("--jobs", a.jobs, "Concurrent fold rotations");
  a.epochs_opt = sub->add_option("--epochs", a.epochs, "Training epochs");
  a.batch_opt = sub->add_option("--batch-size", a.batch_size, "Adam batch size");
  a.lr_opt = sub->add_option("--lr", a.lr, "Adam learning rate");
  a.seed_opt = sub->add_option("--seed", a.seed, "Model init and shuffle seed");
  a.hop_opt = sub->add_option("--seg-hop", a.seg_hop, "Frames between segment starts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focal/calibration attention CLDNN trainer"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "Generate a synthetic burst dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--config", synth.config, "Synth config JSON (flags override)");
  synth.classes_opt = s->add_option("--classes", synth.sc.n_classes, "Number of classes");
  synth.per_class_opt = s->add_option("--per-class", synth.sc.per_class, "Utterances per class");
  synth.duration_opt = s->add_option("--duration", synth.sc.duration_s, "Seconds per utterance");
  synth.rate_opt = s->add_option("--sample-rate", synth.sc.sample_rate, "Sample rate in Hz");
  synth.noise_opt = s->add_option("--noise-floor", synth.sc.noise_floor, "Noise bed RMS");
  synth.burst_opt = s->add_option("--burst-ms", synth.sc.burst_ms, "Burst length in ms");
  synth.seed_opt = s->add_option("--seed", synth.sc.seed, "Generator seed");

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "k-fold cross-validated training");
  add_train_options(t, train, true);

  EvalArgs eval_args;
  CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  e->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory")->required();
  e->add_option("--manifest", eval_args.manifest, "Dataset manifest CSV")->required();
  e->add_option("--fold", eval_args.fold, "Restrict to one fold id");

  AblationArgs ablation;
  CLI::App* b = app.add_subcommand("ablation", "Train all variants, compare, align");
  add_train_options(b, ablation.base, false);
  ablation.seeds_opt = b->add_option("--seeds", ablation.seeds_text, "Comma-separated seeds");
  ablation.tol_opt =
      b->add_option("--align-tolerance", ablation.align_tolerance, "Alignment window (frames)");

  GradcheckArgs gradcheck;
  CLI::App* c = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  c->add_option("--scale", gradcheck.scale, "Problem size (tiny)");
  c->add_option("--seed", gradcheck.seed, "Input seed");

  AttnMapArgs attn;
  CLI::App* m = app.add_subcommand("attn-map", "Export attention maps for one segment");
  m->add_option("--checkpoint", attn.checkpoint, "Checkpoint directory")->required();
  m->add_option("--wav", attn.wav, "Input WAV file")->required();
  m->add_option("--segment-offset", attn.offset, "Segment start frame");
  m->add_option("--out", attn.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval_args);
    if (b->parsed()) return cmd_ablation(ablation);
    if (c->parsed()) return cmd_gradcheck(gradcheck);
    if (m->parsed()) return cmd_attn_map(attn);
    return 2;  // unreachable with require_subcommand(1)
  } catch (const CLI::CallForHelp&) {
    auto subs = app.get_subcommands();
    std::cout << (subs.size() == 1 ? subs[0]->help() : app.help());
    return 0;
  } catch (const CLI::ParseError& ex) {
    auto subs = app.get_subcommands();
    std::cerr << "[error] " << ex.what() << "\n\n"
              << (subs.size() == 1 ? subs[0]->help() : app.help());
    return 2;
  } catch (const ConfigError& ex) {
    ampattn::log_error("%s", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    ampattn::log_error("%s", ex.what());
    return 1;
  }
}
