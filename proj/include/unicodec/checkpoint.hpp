#pragma once

// Binary tensor container used for model weights and training state.
//
// Layout (all integers little-endian):
//   magic    4 bytes  "UCKP"
//   version  u32      1
//   count    u32      number of records
//   per record:
//     name_len u32, name bytes (UTF-8, no terminator)
//     dtype    u8     0 = f32, 1 = f64, 2 = i64, 3 = u8
//     rank     u32
//     dims     rank x u64
//     payload  prod(dims) elements, little-endian
//
// Records keep insertion order, so serializing the same state twice yields
// identical bytes.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unicodec/tensor.hpp"

namespace unicodec {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;  // already little-endian
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  // Stores a matrix; rank 1 records flatten a single row.
  template <typename S>
  void put_matrix(const std::string& name, const Matrix<S>& m, int rank = 2);
  template <typename S>
  void put_parameter(const Parameter<S>& p) { put_matrix(p.name, p.value, p.rank); }

  // Reads a record of either float dtype into Scalar S; rank-1 records
  // come back as 1 x n.
  template <typename S>
  Matrix<S> get_matrix(const std::string& name) const;

  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  void put_bytes(const std::string& name, const std::string& bytes);
  std::string get_bytes(const std::string& name) const;

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<TensorRecord>& records() const { return records_; }
  const TensorRecord& record(const std::string& name) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  // Writes to a temporary sibling and renames it into place.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  void put(TensorRecord rec);
  std::vector<TensorRecord> records_;
  std::map<std::string, std::size_t> index_;
};

// Whole-file helpers shared by the binary formats.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace unicodec
