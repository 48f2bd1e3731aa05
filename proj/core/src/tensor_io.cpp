#include "ampattn/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ampattn/logging.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swaps");

namespace ampattn {

namespace {
constexpr char kMagic[8] = {'A', 'M', 'P', 'T', 'N', 'S', 'R', '1'};
constexpr uint32_t kMaxRank = 8;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}
}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(kMagic, sizeof kMagic);
  uint32_t rank = static_cast<uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (int a = 0; a < t.rank(); ++a) {
    uint32_t e = static_cast<uint32_t>(t.extent(a));
    out.write(reinterpret_cast<const char*>(&e), sizeof e);
  }
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) fail(path, "write failed");
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    fail(path, "not a tensor file (bad magic)");
  uint32_t rank = 0;
  if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank == 0 || rank > kMaxRank)
    fail(path, "invalid rank " + std::to_string(rank));
  Shape shape(rank);
  for (uint32_t a = 0; a < rank; ++a) {
    uint32_t e = 0;
    if (!in.read(reinterpret_cast<char*>(&e), sizeof e) || e == 0)
      fail(path, "invalid extent on axis " + std::to_string(a));
    shape[a] = static_cast<int>(e);
  }
  Tensor t = Tensor::zeros(shape);
  if (!in.read(reinterpret_cast<char*>(t.data().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double))))
    fail(path, "truncated payload for shape " + shape_str(shape));
  char extra;
  if (in.read(&extra, 1)) fail(path, "trailing bytes after payload");
  return t;
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void save_csv(const std::filesystem::path& path, const Tensor& t) {
  if (t.rank() != 2)
    throw std::invalid_argument("csv export needs a rank-2 tensor, got " + shape_str(t.shape()));
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  int m = t.extent(0), n = t.extent(1);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j) out << ',';
      out << csv_double(t.at2(i, j));
    }
    out << '\n';
  }
  if (!out) fail(path, "write failed");
}

}  // namespace ampattn
