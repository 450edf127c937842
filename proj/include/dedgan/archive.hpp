#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

/// Versioned binary archive of named float32 tensors:
///   "DEDGANCK" | u32 version | { u32 name_len | name | u32 rank | u32 dims[rank] | f32 data[] }*
/// All integers and floats little-endian. 64-bit values (doubles, counters,
/// RNG state) are split into four 16-bit limbs, each exactly representable as
/// a float32, under a name ending in "@f64" or "@u64". Raw bytes use "@bytes".
class Archive {
 public:
  static constexpr char kMagic[8] = {'D', 'E', 'D', 'G', 'A', 'N', 'C', 'K'};
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const TensorF& t);
  void put_f64(const std::string& name, const std::vector<double>& values);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& values);
  void put_bytes(const std::string& name, const std::string& bytes);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  bool contains_f64(const std::string& name) const { return contains(name + "@f64"); }
  bool contains_u64(const std::string& name) const { return contains(name + "@u64"); }
  const TensorF& get(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  double get_f64_scalar(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  std::uint64_t get_u64_scalar(const std::string& name) const;
  std::string get_bytes(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }

  std::string serialize() const;
  static Archive deserialize(const std::string& blob, const std::string& source = "<memory>");

  /// Writes through a temporary file and renames it into place.
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, TensorF> index_;
};

}  // namespace dedgan
