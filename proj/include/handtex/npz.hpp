#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "handtex/tensor.hpp"

/// Named-array container stored as a NumPy .npz archive so every artifact
/// (atlases, PCA models, checkpoints, raster caches) opens with numpy.load.
///
/// Arrays are written uncompressed ("stored" zip entries) in C order as
/// little-endian float64 ('<f8'), int64 ('<i8') or uint8 ('|u1'). Reading also
/// accepts deflate-compressed entries and '<f4' / '<i4' / '|b1' payloads.
namespace handtex::npz {

enum class DType { kFloat64, kInt64, kUInt8 };

struct Array {
  DType dtype = DType::kFloat64;
  std::vector<int64_t> shape;
  std::vector<double> f64;
  std::vector<int64_t> i64;
  std::vector<uint8_t> u8;

  std::size_t numel() const;

  static Array from_tensor(const Tensor& t);
  static Array from_doubles(std::vector<double> values, std::vector<int64_t> shape);
  static Array from_ints(std::vector<int64_t> values, std::vector<int64_t> shape);
  static Array from_bytes(std::vector<uint8_t> values, std::vector<int64_t> shape);

  Tensor to_tensor() const;
  std::vector<double> as_doubles() const;
  std::vector<int64_t> as_ints() const;
};

using Archive = std::map<std::string, Array>;

void save(const std::filesystem::path& path, const Archive& archive);
Archive load(const std::filesystem::path& path);

/// Fetch with a descriptive error when missing.
const Array& get(const Archive& archive, const std::string& name);

/// Serialized .npy bytes for one array (exposed for tests).
std::string encode_npy(const Array& array);
Array decode_npy(const std::string& bytes);

}  // namespace handtex::npz
