#include "ampattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ampattn/errors.hpp"
#include "ampattn/logging.hpp"
#include "ampattn/rng.hpp"
#include "ampattn/wav.hpp"

namespace ampattn {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& path,
                      const std::map<std::string, std::string>& label_remap) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open manifest");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty manifest");
  if (split_csv_line(line) != std::vector<std::string>{"utterance_id", "wav_path", "label", "fold"})
    throw ConfigError(path.string() + ": header must be utterance_id,wav_path,label,fold");

  Dataset data;
  std::vector<std::string> problems;
  std::set<std::string> seen_ids;
  std::set<std::string> used_remap_sources;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 4) {
      problems.push_back("line " + std::to_string(lineno) + ": expected 4 fields, got " +
                         std::to_string(fields.size()));
      continue;
    }
    Utterance u;
    u.id = fields[0];
    if (!seen_ids.insert(u.id).second)
      problems.push_back("line " + std::to_string(lineno) + ": duplicate utterance_id '" + u.id +
                         "'");
    std::filesystem::path wav(fields[1]);
    u.wav_path = wav.is_absolute() ? wav : path.parent_path() / wav;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(u.wav_path, ec))
      problems.push_back("line " + std::to_string(lineno) + ": wav not readable: " +
                         u.wav_path.string());
    u.label_name = fields[2];
    if (auto it = label_remap.find(u.label_name); it != label_remap.end()) {
      used_remap_sources.insert(it->first);
      u.label_name = it->second;
    }
    if (fields[3] == "auto") {
      u.fold = -1;
    } else {
      try {
        size_t pos = 0;
        u.fold = std::stoi(fields[3], &pos);
        if (pos != fields[3].size() || u.fold < 0) throw std::invalid_argument("");
      } catch (const std::exception&) {
        problems.push_back("line " + std::to_string(lineno) + ": fold must be 'auto' or a " +
                           "non-negative integer, got '" + fields[3] + "'");
      }
    }
    data.utterances.push_back(std::move(u));
  }
  for (const auto& [src, dst] : label_remap)
    if (!used_remap_sources.count(src))
      problems.push_back("remap source '" + src + "' (-> '" + dst +
                         "') matches no manifest label");
  if (!problems.empty()) {
    std::string msg = path.string() + ": " + std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  if (data.utterances.empty()) throw ConfigError(path.string() + ": no utterances");

  std::set<std::string> vocab;
  for (const auto& u : data.utterances) vocab.insert(u.label_name);
  data.label_names.assign(vocab.begin(), vocab.end());  // std::set iterates sorted
  for (auto& u : data.utterances) {
    auto it = std::lower_bound(data.label_names.begin(), data.label_names.end(), u.label_name);
    u.label = static_cast<int>(it - data.label_names.begin());
  }
  return data;
}

void save_manifest(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "utterance_id,wav_path,label,fold\n";
  for (const auto& u : data.utterances) {
    out << u.id << ',' << u.wav_path.string() << ',' << u.label_name << ',';
    if (u.fold < 0)
      out << "auto";
    else
      out << u.fold;
    out << '\n';
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void assign_folds(Dataset& data, int k, uint64_t seed) {
  if (k < 3) throw ConfigError("k-fold needs k >= 3 (train/val/test rotation)");
  if (static_cast<size_t>(k) > data.utterances.size())
    throw ConfigError("k = " + std::to_string(k) + " exceeds utterance count " +
                      std::to_string(data.utterances.size()));
  for (const auto& u : data.utterances)
    if (u.fold >= k)
      throw ConfigError("utterance '" + u.id + "' carries explicit fold " +
                        std::to_string(u.fold) + " >= k = " + std::to_string(k));
  std::vector<int> totals(k, 0);
  for (const auto& u : data.utterances)
    if (u.fold >= 0) ++totals[u.fold];
  for (int c = 0; c < data.n_classes(); ++c) {
    std::vector<size_t> pending;
    std::vector<int> counts(k, 0);
    for (size_t i = 0; i < data.utterances.size(); ++i) {
      const auto& u = data.utterances[i];
      if (u.label != c) continue;
      if (u.fold >= 0)
        ++counts[u.fold];
      else
        pending.push_back(i);
    }
    Rng rng(Rng::derive(seed, static_cast<uint64_t>(c)));
    rng.shuffle(pending);
    for (size_t i : pending) {
      // Least-loaded within the class; overall fold size breaks ties so the
      // per-class remainders spread instead of piling onto the same folds.
      int best = 0;
      for (int f = 1; f < k; ++f)
        if (counts[f] < counts[best] ||
            (counts[f] == counts[best] && totals[f] < totals[best]))
          best = f;
      data.utterances[i].fold = best;
      ++counts[best];
      ++totals[best];
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic amplitude-burst corpus
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (n_classes < 1 || per_class < 1) throw ConfigError("n_classes and per_class must be >= 1");
  if (sample_rate < 1000) throw ConfigError("sample_rate too small");
  if (duration_s <= 0 || burst_ms <= 0) throw ConfigError("duration and burst length must be positive");
  if (noise_floor <= 0 || noise_floor >= 1) throw ConfigError("noise_floor must be in (0, 1)");
  if (!classes.empty() && static_cast<int>(classes.size()) != n_classes)
    throw ConfigError("classes list must be empty or have n_classes entries");
  if (min_burst_frame < 0 || max_burst_frame < min_burst_frame)
    throw ConfigError("need 0 <= min_burst_frame <= max_burst_frame");
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  nlohmann::json j;
  j["n_classes"] = cfg.n_classes;
  j["per_class"] = cfg.per_class;
  j["duration_s"] = cfg.duration_s;
  j["sample_rate"] = cfg.sample_rate;
  j["noise_floor"] = cfg.noise_floor;
  j["burst_ms"] = cfg.burst_ms;
  j["win_ms"] = cfg.win_ms;
  j["hop_ms"] = cfg.hop_ms;
  j["min_burst_frame"] = cfg.min_burst_frame;
  j["max_burst_frame"] = cfg.max_burst_frame;
  j["seed"] = cfg.seed;
  auto specs = nlohmann::json::array();
  for (const auto& c : cfg.classes)
    specs.push_back({{"gain", c.gain}, {"center_hz", c.center_hz}, {"bandwidth_hz", c.bandwidth_hz}});
  j["classes"] = specs;
  return j.dump(2);
}

SynthConfig synth_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SynthConfig d;
  SynthConfig c;
  c.n_classes = j.value("n_classes", d.n_classes);
  c.per_class = j.value("per_class", d.per_class);
  c.duration_s = j.value("duration_s", d.duration_s);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.noise_floor = j.value("noise_floor", d.noise_floor);
  c.burst_ms = j.value("burst_ms", d.burst_ms);
  c.win_ms = j.value("win_ms", d.win_ms);
  c.hop_ms = j.value("hop_ms", d.hop_ms);
  c.min_burst_frame = j.value("min_burst_frame", d.min_burst_frame);
  c.max_burst_frame = j.value("max_burst_frame", d.max_burst_frame);
  c.seed = j.value("seed", d.seed);
  for (const auto& e : j.value("classes", nlohmann::json::array())) {
    SynthClassSpec spec;
    spec.gain = e.value("gain", spec.gain);
    spec.center_hz = e.value("center_hz", spec.center_hz);
    spec.bandwidth_hz = e.value("bandwidth_hz", spec.bandwidth_hz);
    c.classes.push_back(spec);
  }
  return c;
}

std::vector<SynthClassSpec> default_class_specs(int n) {
  // Classes differ in burst gain (decibel level) and spectral shape so the
  // task is not solvable from a single scalar.
  std::vector<SynthClassSpec> specs(n);
  for (int c = 0; c < n; ++c) {
    specs[c].gain = 0.40 + 0.15 * c / std::max(1, n - 1) * 3.0;      // 0.40 .. 0.85
    specs[c].center_hz = 500.0 + (n > 1 ? 2400.0 * c / (n - 1) : 0); // 500 .. 2900
    specs[c].bandwidth_hz = 150.0 + 120.0 * c;
  }
  return specs;
}

Dataset generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  auto specs = cfg.classes.empty() ? default_class_specs(cfg.n_classes) : cfg.classes;
  for (int a = 0; a < cfg.n_classes; ++a)
    for (int b = a + 1; b < cfg.n_classes; ++b)
      if (specs[a].gain == specs[b].gain && specs[a].center_hz == specs[b].center_hz &&
          specs[a].bandwidth_hz == specs[b].bandwidth_hz)
        throw ConfigError("classes " + std::to_string(a) + " and " + std::to_string(b) +
                          " are indistinguishable");

  std::filesystem::create_directories(out_dir / "wav");
  int sr = cfg.sample_rate;
  int64_t n = static_cast<int64_t>(std::lround(cfg.duration_s * sr));
  int win = static_cast<int>(std::lround(cfg.win_ms * sr / 1000.0));
  int hop = static_cast<int>(std::lround(cfg.hop_ms * sr / 1000.0));
  int total_frames = n >= win ? 1 + static_cast<int>((n - win) / hop) : 0;
  if (total_frames <= cfg.max_burst_frame)
    throw ConfigError("duration " + std::to_string(cfg.duration_s) + "s yields only " +
                      std::to_string(total_frames) + " frames; max_burst_frame " +
                      std::to_string(cfg.max_burst_frame) + " does not fit");
  int burst_len = static_cast<int>(std::lround(cfg.burst_ms * sr / 1000.0));

  Dataset data;
  std::vector<GroundTruthPeak> peaks;
  int width = cfg.per_class > 1000 ? 4 : 3;
  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int u = 0; u < cfg.per_class; ++u) {
      uint64_t idx = static_cast<uint64_t>(c) * cfg.per_class + u;
      Rng rng(Rng::derive(cfg.seed, idx));
      char id[64];
      std::snprintf(id, sizeof id, "c%d_u%0*d", c, width, u);

      // Colored-noise bed: one-pole lowpass of white noise, RMS = noise_floor.
      std::vector<double> x(n, 0.0);
      double state = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        state = 0.9 * state + 0.1 * rng.normal();
        x[i] = state;
      }
      double rms = 0.0;
      for (double v : x) rms += v * v;
      rms = std::sqrt(rms / static_cast<double>(n));
      for (auto& v : x) v *= cfg.noise_floor / rms;

      // Class-shaped burst: resonator-filtered noise under a Hann envelope,
      // centered on a random frame's window center.
      int frame = rng.uniform_int(cfg.min_burst_frame, cfg.max_burst_frame);
      int64_t center = static_cast<int64_t>(frame) * hop + win / 2;
      double theta = 2.0 * std::numbers::pi * specs[c].center_hz / sr;
      double rpole = std::exp(-std::numbers::pi * specs[c].bandwidth_hz / sr);
      double a1 = 2.0 * rpole * std::cos(theta), a2 = -rpole * rpole;
      std::vector<double> b(burst_len, 0.0);
      double y1 = 0.0, y2 = 0.0, peak_abs = 0.0;
      for (int i = 0; i < burst_len; ++i) {
        double y = a1 * y1 + a2 * y2 + rng.normal();
        y2 = y1;
        y1 = y;
        double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (burst_len - 1));
        b[i] = y * env;
        peak_abs = std::max(peak_abs, std::abs(b[i]));
      }
      double gain = specs[c].gain * rng.uniform(0.9, 1.1);
      for (int i = 0; i < burst_len; ++i) {
        int64_t pos = center - burst_len / 2 + i;
        if (pos >= 0 && pos < n) x[pos] += b[i] / peak_abs * gain;
      }

      Waveform w;
      w.sample_rate = sr;
      w.samples = std::move(x);
      std::filesystem::path wav_path = out_dir / "wav" / (std::string(id) + ".wav");
      save_wav(wav_path, w);

      Utterance utt;
      utt.id = id;
      utt.wav_path = std::filesystem::path("wav") / (std::string(id) + ".wav");
      utt.label_name = "class" + std::to_string(c);
      utt.label = c;
      utt.fold = -1;
      data.utterances.push_back(std::move(utt));
      peaks.push_back({id, center, frame});
    }
    data.label_names.push_back("class" + std::to_string(c));
  }

  save_manifest(out_dir / "manifest.csv", data);
  {
    std::ofstream out(out_dir / "ground_truth_peaks.csv", std::ios::trunc);
    if (!out) throw std::runtime_error((out_dir / "ground_truth_peaks.csv").string() +
                                       ": cannot open for writing");
    out << "id,burst_sample,burst_frame\n";
    for (const auto& p : peaks)
      out << p.id << ',' << p.burst_sample << ',' << p.burst_frame << '\n';
  }
  // Hand back absolute wav paths for immediate in-process use.
  for (auto& u : data.utterances) u.wav_path = out_dir / u.wav_path;
  log_info("synthetic corpus: %d classes x %d utterances under %s", cfg.n_classes, cfg.per_class,
           out_dir.string().c_str());
  return data;
}

std::vector<GroundTruthPeak> load_ground_truth_peaks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"id", "burst_sample", "burst_frame"})
    throw ConfigError(path.string() + ": header must be id,burst_sample,burst_frame");
  std::vector<GroundTruthPeak> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) throw ConfigError(path.string() + ": malformed line '" + line + "'");
    out.push_back({f[0], std::stoll(f[1]), std::stoi(f[2])});
  }
  return out;
}

}  // namespace ampattn
