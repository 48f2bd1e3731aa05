#include "ampattn/mfcc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ampattn/errors.hpp"

namespace ampattn {

namespace detail {

void fft_pow2(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  if (n < 2) return;
  for (size_t i = 1, j = 0; i < n; ++i) {  // bit-reversal permutation
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

double mel_from_hz(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double hz_from_mel(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int MfccConfig::win_samples(int sample_rate) const {
  return static_cast<int>(std::lround(win_ms * sample_rate / 1000.0));
}
int MfccConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0));
}

std::string mfcc_config_to_json(const MfccConfig& cfg) {
  nlohmann::json j;
  j["n_mfcc"] = cfg.n_mfcc;
  j["n_mels"] = cfg.n_mels;
  j["win_ms"] = cfg.win_ms;
  j["hop_ms"] = cfg.hop_ms;
  j["preemph"] = cfg.preemph;
  j["fft_size"] = cfg.fft_size;
  j["fmin"] = cfg.fmin;
  j["fmax"] = cfg.fmax;
  return j.dump(2);
}

MfccConfig mfcc_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MfccConfig d;
  MfccConfig c;
  c.n_mfcc = j.value("n_mfcc", d.n_mfcc);
  c.n_mels = j.value("n_mels", d.n_mels);
  c.win_ms = j.value("win_ms", d.win_ms);
  c.hop_ms = j.value("hop_ms", d.hop_ms);
  c.preemph = j.value("preemph", d.preemph);
  c.fft_size = j.value("fft_size", d.fft_size);
  c.fmin = j.value("fmin", d.fmin);
  c.fmax = j.value("fmax", d.fmax);
  return c;
}

namespace {

constexpr double kLogFloor = 1e-10;

struct Plan {
  int win = 0, hop = 0, fft = 0, nbins = 0;
  double fmax = 0;
};

Plan make_plan(const MfccConfig& cfg, int sample_rate) {
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
  if (cfg.n_mfcc < 1 || cfg.n_mels < 1)
    throw ConfigError("n_mfcc and n_mels must be positive");
  if (cfg.n_mfcc > cfg.n_mels)
    throw ConfigError("n_mfcc " + std::to_string(cfg.n_mfcc) + " exceeds n_mels " +
                      std::to_string(cfg.n_mels));
  if (cfg.hop_ms <= 0 || cfg.win_ms <= 0 || cfg.hop_ms > cfg.win_ms)
    throw ConfigError("need 0 < hop_ms <= win_ms");
  Plan p;
  p.win = cfg.win_samples(sample_rate);
  p.hop = cfg.hop_samples(sample_rate);
  if (p.win < 2 || p.hop < 1) throw ConfigError("window or hop rounds to zero samples");
  p.fft = cfg.fft_size;
  if (p.fft == 0) {
    p.fft = 1;
    while (p.fft < p.win) p.fft <<= 1;
  }
  if ((p.fft & (p.fft - 1)) != 0 || p.fft < p.win)
    throw ConfigError("fft_size must be a power of two >= window samples (" +
                      std::to_string(p.win) + "), got " + std::to_string(cfg.fft_size));
  p.nbins = p.fft / 2 + 1;
  p.fmax = cfg.fmax == 0.0 ? sample_rate / 2.0 : cfg.fmax;
  if (p.fmax > sample_rate / 2.0)
    throw ConfigError("fmax " + std::to_string(p.fmax) + " exceeds Nyquist " +
                      std::to_string(sample_rate / 2.0));
  if (cfg.fmin < 0 || cfg.fmin >= p.fmax) throw ConfigError("need 0 <= fmin < fmax");
  return p;
}

/// Triangular filters, linear in Hz between HTK-mel-spaced points, each
/// scaled by 2/(hi - lo) so a flat power spectrum yields near-equal outputs
/// across filters (a constant signal then concentrates in cepstral
/// coefficient 0). Rows: n_mels filters over nbins spectrum bins.
std::vector<std::vector<double>> mel_filterbank(const MfccConfig& cfg, int sample_rate,
                                                const Plan& p) {
  int nf = cfg.n_mels;
  double mlo = mel_from_hz(cfg.fmin), mhi = mel_from_hz(p.fmax);
  std::vector<double> pts(nf + 2);
  for (int i = 0; i < nf + 2; ++i)
    pts[i] = hz_from_mel(mlo + (mhi - mlo) * i / (nf + 1));
  std::vector<std::vector<double>> fb(nf, std::vector<double>(p.nbins, 0.0));
  for (int m = 0; m < nf; ++m) {
    double lo = pts[m], c = pts[m + 1], hi = pts[m + 2];
    double norm = 2.0 / (hi - lo);
    for (int k = 0; k < p.nbins; ++k) {
      double f = static_cast<double>(k) * sample_rate / p.fft;
      if (f <= lo || f >= hi) continue;
      double tri = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      fb[m][k] = norm * tri;
    }
  }
  return fb;
}

std::vector<double> preemphasize(const std::vector<double>& x, double coeff) {
  std::vector<double> y(x.size());
  if (x.empty()) return y;
  y[0] = x[0];
  for (size_t i = 1; i < x.size(); ++i) y[i] = x[i] - coeff * x[i - 1];
  return y;
}

int frame_count(size_t n, const Plan& p) {
  return 1 + static_cast<int>((n - static_cast<size_t>(p.win)) / static_cast<size_t>(p.hop));
}

}  // namespace

std::vector<double> mel_centers_hz(const MfccConfig& cfg, int sample_rate) {
  Plan p = make_plan(cfg, sample_rate);
  double mlo = mel_from_hz(cfg.fmin), mhi = mel_from_hz(p.fmax);
  std::vector<double> centers(cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m)
    centers[m] = hz_from_mel(mlo + (mhi - mlo) * (m + 1) / (cfg.n_mels + 1));
  return centers;
}

Tensor mel_energies(const Waveform& w, const MfccConfig& cfg) {
  Plan p = make_plan(cfg, w.sample_rate);
  if (w.samples.size() < static_cast<size_t>(p.win))
    throw std::runtime_error("waveform has " + std::to_string(w.samples.size()) +
                             " samples; need at least " + std::to_string(p.win));
  auto fb = mel_filterbank(cfg, w.sample_rate, p);
  std::vector<double> x = preemphasize(w.samples, cfg.preemph);
  std::vector<double> window(p.win);
  for (int i = 0; i < p.win; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (p.win - 1));

  int T = frame_count(x.size(), p);
  Tensor out = Tensor::zeros({T, cfg.n_mels});
  std::vector<std::complex<double>> buf(p.fft);
  std::vector<double> power(p.nbins);
  for (int t = 0; t < T; ++t) {
    size_t start = static_cast<size_t>(t) * p.hop;
    for (int i = 0; i < p.fft; ++i)
      buf[i] = i < p.win ? x[start + i] * window[i] : 0.0;
    detail::fft_pow2(buf);
    for (int k = 0; k < p.nbins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < p.nbins; ++k) e += fb[m][k] * power[k];
      out.at2(t, m) = e;
    }
  }
  return out;
}

MfccMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg) {
  Plan p = make_plan(cfg, w.sample_rate);
  Tensor mel = mel_energies(w, cfg);
  int T = mel.extent(0), nm = cfg.n_mels, nc = cfg.n_mfcc;

  // Orthonormal DCT-II basis, nc x nm.
  std::vector<double> basis(static_cast<size_t>(nc) * nm);
  for (int k = 0; k < nc; ++k) {
    double s = std::sqrt((k == 0 ? 1.0 : 2.0) / nm);
    for (int n = 0; n < nm; ++n)
      basis[static_cast<size_t>(k) * nm + n] =
          s * std::cos(std::numbers::pi * k * (2 * n + 1) / (2.0 * nm));
  }

  MfccMatrix out;
  out.frames = Tensor::zeros({T, nc});
  out.frame_rate = static_cast<double>(w.sample_rate) / p.hop;
  std::vector<double> logmel(nm);
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < nm; ++m) logmel[m] = std::log(std::max(mel.at2(t, m), kLogFloor));
    for (int k = 0; k < nc; ++k) {
      double acc = 0.0;
      for (int n = 0; n < nm; ++n) acc += basis[static_cast<size_t>(k) * nm + n] * logmel[n];
      out.frames.at2(t, k) = acc;
    }
  }
  return out;
}

std::vector<Segment> segment_mfcc(const MfccMatrix& m, int seg_len, int hop) {
  if (seg_len < 1 || hop < 1) throw ConfigError("segment length and hop must be >= 1");
  int T = m.frames.extent(0), nc = m.frames.extent(1);
  std::vector<Segment> segs;
  if (T < seg_len) {
    Segment s;
    s.frames = Tensor::zeros({seg_len, nc});
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < nc; ++j) s.frames.at2(i, j) = m.frames.at2(i, j);
    s.source_offset = 0;
    s.valid = T;
    s.padded = true;
    segs.push_back(std::move(s));
    return segs;
  }
  int count = 1 + (T - seg_len) / hop;
  for (int c = 0; c < count; ++c) {
    Segment s;
    s.frames = Tensor::zeros({seg_len, nc});
    int off = c * hop;
    for (int i = 0; i < seg_len; ++i)
      for (int j = 0; j < nc; ++j) s.frames.at2(i, j) = m.frames.at2(off + i, j);
    s.source_offset = off;
    s.valid = seg_len;
    s.padded = false;
    segs.push_back(std::move(s));
  }
  return segs;
}

int amplitude_peak_frame(const Waveform& w, const MfccConfig& cfg, const Segment& seg) {
  Plan p = make_plan(cfg, w.sample_rate);
  int best = 0;
  double best_rms = -1.0;
  for (int r = 0; r < seg.valid; ++r) {
    size_t start = static_cast<size_t>(seg.source_offset + r) * p.hop;
    size_t stop = std::min(start + p.win, w.samples.size());
    if (start >= stop) break;
    double acc = 0.0;
    for (size_t i = start; i < stop; ++i) acc += w.samples[i] * w.samples[i];
    double rms = std::sqrt(acc / static_cast<double>(stop - start));
    if (rms > best_rms) {  // strict ">" keeps the earliest frame on ties
      best_rms = rms;
      best = r;
    }
  }
  return best;
}

void save_segment_metadata(const std::filesystem::path& path, const std::vector<Segment>& segs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "utterance_id,offset,padded,label\n";
  for (const auto& s : segs)
    out << s.utterance_id << ',' << s.source_offset << ',' << (s.padded ? 1 : 0) << ','
        << s.label << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace ampattn
