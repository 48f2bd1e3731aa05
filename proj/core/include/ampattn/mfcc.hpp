#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "ampattn/tensor.hpp"
#include "ampattn/wav.hpp"

namespace ampattn {

struct MfccConfig {
  int n_mfcc = 40;
  int n_mels = 40;
  double win_ms = 25.0;
  double hop_ms = 10.0;   // 10 ms makes 0.5 s = 50 frames and 0.1 s = 10 frames
  double preemph = 0.97;
  int fft_size = 0;       // 0: smallest power of two >= window samples
  double fmin = 20.0;
  double fmax = 0.0;      // 0: sample_rate / 2

  int win_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
};

std::string mfcc_config_to_json(const MfccConfig& cfg);
MfccConfig mfcc_config_from_json(const std::string& text);  // absent keys keep defaults

struct MfccMatrix {
  Tensor frames;          // T x n_mfcc
  double frame_rate = 0;  // frames per second
};

struct Segment {
  Tensor frames;              // m x n_mfcc; rows >= valid are zero padding
  int source_offset = 0;      // start frame within the utterance
  int valid = 0;
  bool padded = false;
  int label = -1;
  std::string utterance_id;
};

/// HTK mel scale.
double mel_from_hz(double hz);
double hz_from_mel(double mel);

/// Center frequencies (Hz) of the triangular mel filters.
std::vector<double> mel_centers_hz(const MfccConfig& cfg, int sample_rate);

/// Per-frame mel filterbank energies (T x n_mels, pre-log). Pipeline prefix of
/// compute_mfcc, exposed for inspection.
Tensor mel_energies(const Waveform& w, const MfccConfig& cfg);

/// Pre-emphasis, Hamming window, |FFT|^2, mel filterbank, floored log,
/// orthonormal DCT-II, first n_mfcc coefficients per frame.
/// T = 1 + floor((N - win_samples) / hop_samples).
MfccMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg);

/// Slice into fixed-length segments at offsets 0, hop, 2*hop, ...
/// A matrix shorter than seg_len yields one tail-padded segment.
std::vector<Segment> segment_mfcc(const MfccMatrix& m, int seg_len, int hop);

/// Frame within the segment whose windowed RMS amplitude is maximal
/// (ties resolve to the earliest frame; padded rows never win).
int amplitude_peak_frame(const Waveform& w, const MfccConfig& cfg, const Segment& seg);

/// Segment metadata CSV: header utterance_id,offset,padded,label.
void save_segment_metadata(const std::filesystem::path& path, const std::vector<Segment>& segs);

namespace detail {
/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& a);
}  // namespace detail

}  // namespace ampattn
