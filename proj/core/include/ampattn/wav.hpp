#pragma once

#include <filesystem>
#include <vector>

namespace ampattn {

struct Waveform {
  std::vector<double> samples;  // mono, in [-1, 1]
  int sample_rate = 0;
};

/// Read a PCM WAV file: 16-bit integer or 32-bit IEEE float, mono or stereo.
/// Stereo is averaged to mono; int16 samples are scaled by 1/32768.
/// Malformed or unsupported files raise a format error naming the chunk.
Waveform load_wav(const std::filesystem::path& path);

/// Write a mono 16-bit PCM WAV (samples clamped to [-1, 1], rounded).
void save_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace ampattn
