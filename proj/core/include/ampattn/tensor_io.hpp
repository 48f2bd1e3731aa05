#pragma once

#include <filesystem>

#include "ampattn/tensor.hpp"

namespace ampattn {

/// Flat binary tensor file: 8-byte magic "AMPTNSR1", u32 rank, u32 extents,
/// then the row-major payload as little-endian f64.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// CSV export for 2-D tensors: one row per line, comma-separated values with
/// 17 significant digits (round-trips f64 exactly).
void save_csv(const std::filesystem::path& path, const Tensor& t);

/// One f64 formatted with 17 significant digits.
std::string csv_double(double v);

}  // namespace ampattn
