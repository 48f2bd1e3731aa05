#include "ampattn/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "wav reader assumes a little-endian host");

namespace ampattn {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

struct Reader {
  std::ifstream in;
  const std::filesystem::path& path;

  void bytes(void* dst, size_t n, const char* ctx) {
    if (!in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
      fail(path, std::string("truncated while reading ") + ctx);
  }
  uint32_t u32(const char* ctx) {
    uint32_t v;
    bytes(&v, 4, ctx);
    return v;
  }
  uint16_t u16(const char* ctx) {
    uint16_t v;
    bytes(&v, 2, ctx);
    return v;
  }
  std::string tag() {
    char t[4];
    if (!in.read(t, 4)) return {};
    return std::string(t, 4);
  }
};

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) fail(path, "cannot open");

  char riff[4];
  r.bytes(riff, 4, "'RIFF' header");
  if (std::memcmp(riff, "RIFF", 4) != 0) fail(path, "malformed 'RIFF' header");
  r.u32("'RIFF' size");
  char wave[4];
  r.bytes(wave, 4, "'WAVE' id");
  if (std::memcmp(wave, "WAVE", 4) != 0) fail(path, "not a 'WAVE' file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<char> payload;

  for (;;) {
    std::string id = r.tag();
    if (id.empty()) break;
    uint32_t size = r.u32("chunk size");
    if (id == "fmt ") {
      if (size < 16) fail(path, "'fmt ' chunk too small");
      format = r.u16("'fmt ' format");
      channels = r.u16("'fmt ' channels");
      sample_rate = r.u32("'fmt ' sample rate");
      r.u32("'fmt ' byte rate");
      r.u16("'fmt ' block align");
      bits = r.u16("'fmt ' bits per sample");
      r.in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      payload.resize(size);
      r.bytes(payload.data(), size, "'data' chunk");
    } else {
      r.in.seekg(size, std::ios::cur);
    }
    if (size % 2) r.in.seekg(1, std::ios::cur);  // chunks are word-aligned
    if (!r.in) fail(path, "truncated inside '" + id + "' chunk");
  }

  if (!have_fmt) fail(path, "missing 'fmt ' chunk");
  if (payload.empty()) fail(path, "missing or empty 'data' chunk");
  if (channels != 1 && channels != 2)
    fail(path, "unsupported channel count " + std::to_string(channels) + " in 'fmt ' chunk");
  bool pcm16 = format == 1 && bits == 16;
  bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    fail(path, "unsupported codec (format " + std::to_string(format) + ", " +
                   std::to_string(bits) + "-bit) in 'fmt ' chunk");

  size_t bytes_per = (pcm16 ? 2u : 4u) * channels;
  size_t n = payload.size() / bytes_per;
  Waveform w;
  w.sample_rate = static_cast<int>(sample_rate);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      if (pcm16) {
        int16_t v;
        std::memcpy(&v, &payload[(i * channels + c) * 2], 2);
        acc += v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, &payload[(i * channels + c) * 4], 4);
        acc += v;
      }
    }
    w.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return w;
}

void save_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
  uint32_t riff_size = 36 + data_size;
  uint16_t fmt = 1, channels = 1, bits = 16, block = 2;
  uint32_t sr = static_cast<uint32_t>(w.sample_rate), byte_rate = sr * block;
  uint32_t fmt_size = 16;
  out.write("RIFF", 4);
  out.write(reinterpret_cast<char*>(&riff_size), 4);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  out.write(reinterpret_cast<char*>(&fmt_size), 4);
  out.write(reinterpret_cast<char*>(&fmt), 2);
  out.write(reinterpret_cast<char*>(&channels), 2);
  out.write(reinterpret_cast<char*>(&sr), 4);
  out.write(reinterpret_cast<char*>(&byte_rate), 4);
  out.write(reinterpret_cast<char*>(&block), 2);
  out.write(reinterpret_cast<char*>(&bits), 2);
  out.write("data", 4);
  out.write(reinterpret_cast<char*>(&data_size), 4);
  for (double s : w.samples) {
    // Same 1/32768 step the reader uses; +1.0 saturates at 32767.
    double c = std::clamp(s, -1.0, 1.0);
    long q = std::lrint(c * 32768.0);
    int16_t v = static_cast<int16_t>(std::clamp(q, -32768L, 32767L));
    out.write(reinterpret_cast<char*>(&v), 2);
  }
  if (!out) fail(path, "write failed");
}

}  // namespace ampattn
