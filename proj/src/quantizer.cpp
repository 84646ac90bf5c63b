#include "unicodec/quantizer.hpp"

#include <cstring>
#include <memory>
#include <set>

#include "unicodec/checkpoint.hpp"

namespace unicodec {

void CodebookLayout::validate() const {
  if (size < 4 || size % 4 != 0) throw ConfigError("codebook size must be a positive multiple of 4");
  if (size > 65536) throw ConfigError("codebook size must fit 16-bit token ids");
}

IndexRange CodebookLayout::region(Domain d) const {
  const int q = size / 4;
  switch (d) {
    case Domain::Speech: return {0, q};
    case Domain::Music: return {q, 2 * q};
    case Domain::Sound: return {2 * q, size};
  }
  return {0, size};
}

Domain CodebookLayout::owner(int id) const {
  if (id < 0 || id >= size) throw InputError("token id " + std::to_string(id) + " outside codebook");
  for (int d = 0; d < kDomainCount; ++d) {
    if (region(static_cast<Domain>(d)).contains(id)) return static_cast<Domain>(d);
  }
  throw InputError("token id " + std::to_string(id) + " has no region");
}

namespace {

constexpr char kTokenMagic[4] = {'U', 'C', 'T', 'K'};
constexpr std::uint32_t kTokenVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& b, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_token_stream(const TokenStream& s) {
  std::string out(kTokenMagic, 4);
  put_u32(out, kTokenVersion);
  put_u32(out, static_cast<std::uint32_t>(s.source_sample_rate));
  put_u32(out, static_cast<std::uint32_t>(s.frame_rate));
  put_u32(out, static_cast<std::uint32_t>(s.codebook_size));
  const auto n = static_cast<std::uint64_t>(s.ids.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  for (int id : s.ids) {
    if (id < 0 || id >= s.codebook_size || id > 0xffff) {
      throw InputError("token id " + std::to_string(id) + " does not fit the stream's codebook");
    }
    out.push_back(static_cast<char>(id & 0xff));
    out.push_back(static_cast<char>((id >> 8) & 0xff));
  }
  return out;
}

TokenStream decode_token_stream(const std::string& bytes) {
  constexpr std::size_t kHeader = 4 + 4 * 4 + 8;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTokenMagic, 4) != 0) {
    throw FormatError("not a token stream (magic mismatch, expected UCTK)");
  }
  if (bytes.size() < kHeader) throw FormatError("token stream header truncated");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kTokenVersion) {
    throw FormatError("token stream version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kTokenVersion) + ")");
  }
  TokenStream s;
  s.source_sample_rate = static_cast<int>(get_le(bytes, 8, 4));
  s.frame_rate = static_cast<int>(get_le(bytes, 12, 4));
  s.codebook_size = static_cast<int>(get_le(bytes, 16, 4));
  const std::uint64_t n = get_le(bytes, 20, 8);
  if (bytes.size() != kHeader + 2 * n) throw FormatError("token stream length does not match its token count");
  s.ids.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    s.ids[i] = static_cast<int>(get_le(bytes, kHeader + 2 * i, 2));
    if (s.ids[i] >= s.codebook_size) throw FormatError("token id exceeds codebook size in stream");
  }
  return s;
}

void save_token_stream(const std::string& path, const TokenStream& s) {
  write_file_atomic(path, encode_token_stream(s));
}

TokenStream load_token_stream(const std::string& path) { return decode_token_stream(read_file(path)); }

template <typename S>
std::vector<int> nearest_codewords(const Matrix<S>& frames, const Matrix<S>& codebook, IndexRange range) {
  if (frames.cols() != codebook.cols()) {
    throw DimensionError("quantize: frames " + shape_of(frames) + " vs codebook " + shape_of(codebook));
  }
  if (range.begin < 0 || range.end > codebook.rows() || range.size() < 1) {
    throw InputError("quantize: empty or out-of-range codebook region");
  }
  const auto block = codebook.middleRows(range.begin, range.size());
  std::vector<int> ids(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const Vector<S> d = (block.rowwise() - frames.row(t)).rowwise().squaredNorm();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < d.size(); ++i) {
      if (d(i) < d(best)) best = i;
    }
    ids[static_cast<std::size_t>(t)] = range.begin + static_cast<int>(best);
  }
  return ids;
}

template <typename S>
Quantizer<S>::Quantizer(CodebookLayout layout, int dim, InitRng& rng, bool train_base, double base_std) : layout_(layout) {
  layout_.validate();
  base_ = Parameter<S>("quantizer.base", gaussian<S>(rng, layout_.size, dim, base_std), 2, train_base);
  projection_ = Parameter<S>("quantizer.projection", Matrix<S>::Identity(dim, dim));
}

template <typename S>
Matrix<S> Quantizer<S>::effective_codebook() const {
  return base_.value * projection_.value.transpose();
}

template <typename S>
Vector<S> Quantizer<S>::simvq_embed(int id) const {
  if (id < 0 || id >= layout_.size) {
    throw InputError("codeword index " + std::to_string(id) + " out of range [0, " + std::to_string(layout_.size) + ")");
  }
  return effective_codebook().row(id).transpose();
}

template <typename S>
std::vector<int> Quantizer<S>::encode(const Matrix<S>& frames, std::optional<Domain> domain) const {
  const IndexRange range = domain ? layout_.region(*domain) : layout_.whole();
  return nearest_codewords<S>(frames, effective_codebook(), range);
}

template <typename S>
QuantizerOutput<S> Quantizer<S>::quantize(Tape<S>& t, Var<S> frames, std::optional<Domain> domain) {
  const Matrix<S> book = effective_codebook();
  const IndexRange range = domain ? layout_.region(*domain) : layout_.whole();
  QuantizerOutput<S> out;
  out.ids = nearest_codewords<S>(frames.value(), book, range);
  for (int id : out.ids) t.note_decision(static_cast<std::uint64_t>(id));

  Matrix<S> q(frames.rows(), frames.cols());
  for (std::size_t i = 0; i < out.ids.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = book.row(out.ids[i]);

  // codewords = base[ids] * P^T; the value comes from `book` so both outputs
  // agree bit for bit with effective_codebook().
  Var<S> proj = t.param(projection_);
  Var<S> base = t.param(base_);
  const std::size_t pi = proj.id, bi = base.id;
  const std::vector<int> ids = out.ids;
  const bool ng = t.needs_grad(proj) || t.needs_grad(base);
  out.codewords = t.record("codebook_lookup", q, ng, [pi, bi, ids](Tape<S>& tp, const Matrix<S>& g) {
    const Matrix<S>& bv = tp.value(bi);
    if (tp.needs_grad(pi)) {
      Matrix<S> rows(static_cast<Eigen::Index>(ids.size()), bv.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = bv.row(ids[i]);
      tp.accumulate(pi, g.transpose() * rows);
    }
    if (tp.needs_grad(bi)) {
      const Matrix<S> gp = g * tp.value(pi);
      Matrix<S> full = Matrix<S>::Zero(bv.rows(), bv.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) full.row(ids[i]) += gp.row(static_cast<Eigen::Index>(i));
      tp.accumulate(bi, full);
    }
  });
  out.straight_through = ad::passthrough(frames, std::move(q));
  return out;
}

template <typename S>
VqLosses<S> vq_losses(Var<S> frames, Var<S> codewords, S beta) {
  if (frames.rows() != codewords.rows() || frames.cols() != codewords.cols()) {
    throw DimensionError("vq_losses: frames " + shape_of(frames.value()) + " vs codewords " +
                         shape_of(codewords.value()));
  }
  const S per_frame = S(1) / static_cast<S>(frames.rows());
  VqLosses<S> l;
  l.commitment = ad::scale(ad::sum(ad::square(ad::sub(frames, ad::stop_gradient(codewords)))), beta * per_frame);
  l.codebook = ad::scale(ad::sum(ad::square(ad::sub(ad::stop_gradient(frames), codewords))), per_frame);
  return l;
}

double utilization(const std::vector<TokenStream>& streams, std::optional<Domain> region) {
  if (streams.empty()) throw InputError("utilization of an empty stream collection");
  const CodebookLayout layout{streams.front().codebook_size};
  const IndexRange r = region ? layout.region(*region) : layout.whole();
  std::set<int> seen;
  for (const auto& s : streams) {
    if (s.codebook_size != layout.size) throw InputError("utilization: streams disagree on codebook size");
    for (int id : s.ids) {
      if (r.contains(id)) seen.insert(id);
    }
  }
  return static_cast<double>(seen.size()) / static_cast<double>(r.size());
}

template std::vector<int> nearest_codewords<float>(const Matrix<float>&, const Matrix<float>&, IndexRange);
template std::vector<int> nearest_codewords<double>(const Matrix<double>&, const Matrix<double>&, IndexRange);
template class Quantizer<float>;
template class Quantizer<double>;
template VqLosses<float> vq_losses<float>(Var<float>, Var<float>, float);
template VqLosses<double> vq_losses<double>(Var<double>, Var<double>, double);

}  // namespace unicodec
