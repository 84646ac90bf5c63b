#include "unicodec/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace unicodec {
namespace {

constexpr char kMagic[4] = {'U', 'C', 'K', 'P'};

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
}

template <typename U>
void append_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

template <typename U>
U read_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I64: return 8;
    case DType::U8: return 1;
  }
  throw FormatError("unknown dtype code");
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : data_(reinterpret_cast<const std::uint8_t*>(bytes.data())), size_(bytes.size()) {}

  template <typename U>
  U take(const char* what) {
    need(sizeof(U), what);
    U v = read_le<U>(data_ + pos_);
    pos_ += sizeof(U);
    return v;
  }

  const std::uint8_t* take_bytes(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n, const char* what) {
    if (size_ - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void Checkpoint::put(TensorRecord rec) {
  auto it = index_.find(rec.name);
  if (it != index_.end()) {
    records_[it->second] = std::move(rec);
    return;
  }
  index_[rec.name] = records_.size();
  records_.push_back(std::move(rec));
}

const TensorRecord& Checkpoint::record(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("checkpoint has no tensor named '" + name + "'");
  return records_[it->second];
}

template <typename S>
void Checkpoint::put_matrix(const std::string& name, const Matrix<S>& m, int rank) {
  TensorRecord rec;
  rec.name = name;
  if (rank == 1) {
    rec.dims = {static_cast<std::uint64_t>(m.size())};
  } else {
    rec.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  }
  if constexpr (std::is_same_v<S, float>) {
    rec.dtype = DType::F32;
    rec.payload.reserve(static_cast<std::size_t>(m.size()) * 4);
    for (Eigen::Index i = 0; i < m.size(); ++i) append_le(rec.payload, std::bit_cast<std::uint32_t>(m.data()[i]));
  } else {
    rec.dtype = DType::F64;
    rec.payload.reserve(static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index i = 0; i < m.size(); ++i) append_le(rec.payload, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  put(std::move(rec));
}

template <typename S>
Matrix<S> Checkpoint::get_matrix(const std::string& name) const {
  const TensorRecord& rec = record(name);
  Eigen::Index rows = 1, cols = 1;
  if (rec.dims.size() == 1) {
    cols = static_cast<Eigen::Index>(rec.dims[0]);
  } else if (rec.dims.size() == 2) {
    rows = static_cast<Eigen::Index>(rec.dims[0]);
    cols = static_cast<Eigen::Index>(rec.dims[1]);
  } else {
    throw FormatError("tensor '" + name + "' has unsupported rank " + std::to_string(rec.dims.size()));
  }
  Matrix<S> m(rows, cols);
  const std::uint8_t* p = rec.payload.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (rec.dtype == DType::F32) {
      m.data()[i] = static_cast<S>(std::bit_cast<float>(read_le<std::uint32_t>(p + 4 * i)));
    } else if (rec.dtype == DType::F64) {
      m.data()[i] = static_cast<S>(std::bit_cast<double>(read_le<std::uint64_t>(p + 8 * i)));
    } else {
      throw FormatError("tensor '" + name + "' is not floating point");
    }
  }
  return m;
}

void Checkpoint::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = DType::I64;
  rec.dims = {values.size()};
  for (auto v : values) append_le(rec.payload, static_cast<std::uint64_t>(v));
  put(std::move(rec));
}

std::vector<std::int64_t> Checkpoint::get_i64(const std::string& name) const {
  const TensorRecord& rec = record(name);
  if (rec.dtype != DType::I64) throw FormatError("tensor '" + name + "' is not i64");
  std::vector<std::int64_t> out(rec.payload.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::int64_t>(read_le<std::uint64_t>(rec.payload.data() + 8 * i));
  }
  return out;
}

void Checkpoint::put_bytes(const std::string& name, const std::string& bytes) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = DType::U8;
  rec.dims = {bytes.size()};
  rec.payload.assign(bytes.begin(), bytes.end());
  put(std::move(rec));
}

std::string Checkpoint::get_bytes(const std::string& name) const {
  const TensorRecord& rec = record(name);
  if (rec.dtype != DType::U8) throw FormatError("tensor '" + name + "' is not u8");
  return std::string(rec.payload.begin(), rec.payload.end());
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, 4);
  append_le(out, kVersion);
  append_le(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& rec : records_) {
    append_le(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    out.push_back(static_cast<char>(rec.dtype));
    append_le(out, static_cast<std::uint32_t>(rec.dims.size()));
    for (auto d : rec.dims) append_le(out, d);
    out.append(reinterpret_cast<const char*>(rec.payload.data()), rec.payload.size());
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take_bytes(4, "magic");
  if (std::string(reinterpret_cast<const char*>(magic), 4) != std::string(kMagic, 4)) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = r.take<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.take<std::uint32_t>("tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const auto len = r.take<std::uint32_t>("name length");
    const std::uint8_t* name = r.take_bytes(len, "name");
    rec.name.assign(reinterpret_cast<const char*>(name), len);
    const auto code = r.take<std::uint8_t>("dtype");
    if (code > 3) throw FormatError("tensor '" + rec.name + "' has unknown dtype code " + std::to_string(code));
    rec.dtype = static_cast<DType>(code);
    const auto rank = r.take<std::uint32_t>("rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.dims.push_back(r.take<std::uint64_t>("dims"));
      n *= rec.dims.back();
    }
    const std::uint8_t* payload = r.take_bytes(n * dtype_size(rec.dtype), "payload");
    rec.payload.assign(payload, payload + n * dtype_size(rec.dtype));
    ck.put(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after last checkpoint record");
  return ck;
}

void Checkpoint::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

template void Checkpoint::put_matrix<float>(const std::string&, const Matrix<float>&, int);
template void Checkpoint::put_matrix<double>(const std::string&, const Matrix<double>&, int);
template Matrix<float> Checkpoint::get_matrix<float>(const std::string&) const;
template Matrix<double> Checkpoint::get_matrix<double>(const std::string&) const;

}  // namespace unicodec
