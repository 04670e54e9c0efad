#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "reconkit/tensor.hpp"

namespace reconkit {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct TnsrEntry {
  std::string name;
  Tensor value;
  DType dtype = DType::f64;
};

/// TNSR container: "TNSR", u8 version (1), u32 entry count, then per entry
/// u32 name length, name bytes, u8 dtype, u8 ndim, u32 extents, raw data.
/// All integers and data little-endian.
std::string encode_tnsr(const std::vector<TnsrEntry>& entries);
std::vector<TnsrEntry> decode_tnsr(const std::string& bytes);

void write_tnsr(const std::filesystem::path& path, const std::vector<TnsrEntry>& entries);
std::vector<TnsrEntry> read_tnsr(const std::filesystem::path& path);

/// Entry by name; throws DataError when absent.
const TnsrEntry& find_entry(const std::vector<TnsrEntry>& entries, const std::string& name);

/// Binary 8-bit PGM (1 channel) or PPM (3 channels); values clipped to [0, 1].
void export_pnm(const Tensor& image, const std::filesystem::path& path);
/// Reads P5/P6 back to (C, H, W) in [0, 1].
Tensor import_pnm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace reconkit
