#pragma once

// Single-codebook quantizer with domain partitions and SimVQ
// reparameterization: the effective codeword for index i is
// projection * base[i], where `base` is a frozen Gaussian table and only
// `projection` is trained.
//
// Partition of an N-entry book: speech [0, N/4), music [N/4, N/2),
// sound [N/2, N). For N = 16384 that is 0-4095, 4096-8191, 8192-16383.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/nn.hpp"

namespace unicodec {

struct IndexRange {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
  bool contains(int id) const { return id >= begin && id < end; }
};

struct CodebookLayout {
  int size = 16384;

  IndexRange region(Domain d) const;
  IndexRange whole() const { return {0, size}; }
  // Domain whose region holds id.
  Domain owner(int id) const;
  void validate() const;
};

struct TokenStream {
  std::vector<int> ids;
  int frame_rate = 75;
  int source_sample_rate = kModelSampleRate;
  int codebook_size = 16384;
};

// Token file: "UCTK", u32 version, u32 sample_rate, u32 frame_rate,
// u32 codebook_size, u64 count, then count little-endian u16 ids.
std::string encode_token_stream(const TokenStream& s);
TokenStream decode_token_stream(const std::string& bytes);
void save_token_stream(const std::string& path, const TokenStream& s);
TokenStream load_token_stream(const std::string& path);

// Lowest-index argmin of squared Euclidean distance from each frame row to
// the codebook rows inside `range`.
template <typename S>
std::vector<int> nearest_codewords(const Matrix<S>& frames, const Matrix<S>& codebook, IndexRange range);

template <typename S>
struct QuantizerOutput {
  std::vector<int> ids;
  Var<S> straight_through;  // codeword values, gradient routed to the frames
  Var<S> codewords;         // codeword values, gradient routed to the projection
};

template <typename S>
struct VqLosses {
  Var<S> commitment;  // beta * mean_t |z_t - sg(q_t)|^2
  Var<S> codebook;    // mean_t |sg(z_t) - q_t|^2
};

template <typename S>
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(CodebookLayout layout, int dim, InitRng& rng, bool train_base = false, double base_std = 1.0);

  const CodebookLayout& layout() const { return layout_; }
  int dim() const { return static_cast<int>(projection_.value.rows()); }

  // size x dim table of effective codewords.
  Matrix<S> effective_codebook() const;
  Vector<S> simvq_embed(int id) const;

  // Without a domain the search covers the whole book; with one it is
  // restricted to that domain's region.
  QuantizerOutput<S> quantize(Tape<S>& t, Var<S> frames, std::optional<Domain> domain);
  std::vector<int> encode(const Matrix<S>& frames, std::optional<Domain> domain) const;

  Parameter<S>& base() { return base_; }
  Parameter<S>& projection() { return projection_; }

  template <typename F>
  void for_each_parameter(F&& f) {
    f(base_);
    f(projection_);
  }

 private:
  CodebookLayout layout_;
  Parameter<S> base_;        // size x dim, frozen unless train_base
  Parameter<S> projection_;  // dim x dim
};

template <typename S>
VqLosses<S> vq_losses(Var<S> frames, Var<S> codewords, S beta = S(0.25));

// Distinct ids observed / region size. Throws on empty input.
double utilization(const std::vector<TokenStream>& streams, std::optional<Domain> region);

}  // namespace unicodec
