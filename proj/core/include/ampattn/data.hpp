#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ampattn {

struct Utterance {
  std::string id;
  std::filesystem::path wav_path;
  std::string label_name;
  int label = -1;  // id into Dataset::label_names
  int fold = -1;   // -1 = auto
};

struct Dataset {
  std::vector<Utterance> utterances;
  std::vector<std::string> label_names;  // sorted; index = class id
  int n_classes() const { return static_cast<int>(label_names.size()); }
};

/// Parse a manifest CSV (header utterance_id,wav_path,label,fold; fold is an
/// integer or "auto"). Relative wav paths resolve against the manifest's
/// directory. label_remap rewrites labels before the vocabulary is frozen in
/// sorted order; a remap source that matches no entry is reported (typo
/// guard). All problems are itemized in a single error.
Dataset load_manifest(const std::filesystem::path& path,
                      const std::map<std::string, std::string>& label_remap = {});

/// Inverse of load_manifest (wav paths written as given; fold -1 as "auto").
void save_manifest(const std::filesystem::path& path, const Dataset& data);

/// Assign fold ids in [0, k) to entries with fold = -1, stratified per class:
/// each class's utterances are shuffled (seeded) and dealt to the currently
/// least-loaded fold, so per-class fold counts differ by at most 1. Explicit
/// fold ids are preserved and counted.
void assign_folds(Dataset& data, int k, uint64_t seed);

struct SynthClassSpec {
  double gain = 0.5;          // burst peak amplitude
  double center_hz = 1000.0;  // resonator center
  double bandwidth_hz = 200.0;
};

struct SynthConfig {
  int n_classes = 4;
  int per_class = 100;
  double duration_s = 0.6;
  int sample_rate = 16000;
  double noise_floor = 0.02;  // RMS of the colored-noise bed
  double burst_ms = 120.0;
  // Frame geometry used to place bursts on frame centers and to record
  // ground-truth burst frames; must match the MFCC config used downstream.
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int min_burst_frame = 3;
  int max_burst_frame = 46;  // keeps the burst inside a 50-frame segment
  uint64_t seed = 1;
  std::vector<SynthClassSpec> classes;  // auto-filled per class when empty

  void validate() const;  // ConfigError on violation
};

std::string synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const std::string& text);  // absent keys keep defaults

/// The specs generate_synthetic uses when SynthConfig::classes is empty:
/// gain and resonator center/bandwidth spread per class.
std::vector<SynthClassSpec> default_class_specs(int n_classes);

/// Write wav/<id>.wav, manifest.csv, and ground_truth_peaks.csv
/// (header id,burst_sample,burst_frame) under out_dir. Each utterance is a
/// colored-noise bed plus one class-shaped high-amplitude burst at a random
/// frame; byte-identical output for a fixed seed.
Dataset generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct GroundTruthPeak {
  std::string id;
  int64_t burst_sample = 0;
  int burst_frame = 0;
};

std::vector<GroundTruthPeak> load_ground_truth_peaks(const std::filesystem::path& path);

}  // namespace ampattn
