#pragma once

// Differentiable operators. Every op takes and returns tape handles; a
// shape mismatch throws DimensionError listing both shapes. Tensors are 2-D:
// sequences are laid out time x channels.

#include <cstddef>
#include <vector>

#include "unicodec/tensor.hpp"

namespace unicodec::ad {

// Elementwise. add/mul also accept a 1 x cols row that is broadcast over
// rows; mul additionally accepts a rows x 1 column broadcast over columns.
template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> add_scalar(Var<S> a, S offset);

template <typename S> Var<S> gelu(Var<S> x);
template <typename S> Var<S> sigmoid(Var<S> x);
template <typename S> Var<S> tanh(Var<S> x);
template <typename S> Var<S> exp(Var<S> x);
template <typename S> Var<S> log(Var<S> x);
template <typename S> Var<S> square(Var<S> x);
// Records the sign pattern as a decision (kink at 0).
template <typename S> Var<S> abs(Var<S> x);

// Reductions.
template <typename S> Var<S> sum(Var<S> x);
template <typename S> Var<S> mean(Var<S> x);
// rows x cols -> rows x 1
template <typename S> Var<S> sum_cols(Var<S> x);

// Linear algebra.
template <typename S> Var<S> matmul(Var<S> a, Var<S> b);
// a * b^T
template <typename S> Var<S> matmul_nt(Var<S> a, Var<S> b);
template <typename S> Var<S> transpose(Var<S> x);
// x * W^T + b, with W out x in and b a 1 x out row.
template <typename S> Var<S> linear(Var<S> x, Var<S> weight, Var<S> bias);
template <typename S> Var<S> linear(Var<S> x, Var<S> weight);

// Row-wise normalizations.
template <typename S> Var<S> softmax_rows(Var<S> x);
template <typename S> Var<S> log_softmax_rows(Var<S> x);
// Zero mean, unit variance per row (no affine).
template <typename S> Var<S> layer_norm_rows(Var<S> x, S eps = S(1e-5));
template <typename S> Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5));
template <typename S> Var<S> l2_normalize_rows(Var<S> x);
// a_i . b_i / (|a_i| |b_i|) per row, rows x 1
template <typename S> Var<S> cosine_similarity(Var<S> a, Var<S> b);

// Slicing and assembly.
template <typename S> Var<S> slice_rows(Var<S> x, Eigen::Index start, Eigen::Index count);
template <typename S> Var<S> slice_cols(Var<S> x, Eigen::Index start, Eigen::Index count);
template <typename S> Var<S> concat_rows(const std::vector<Var<S>>& parts);
template <typename S> Var<S> concat_cols(const std::vector<Var<S>>& parts);
template <typename S> Var<S> gather_rows(Var<S> x, const std::vector<Eigen::Index>& rows);
// Places row i of x at output row rows[i]; other rows are zero.
template <typename S> Var<S> scatter_rows(Var<S> x, const std::vector<Eigen::Index>& rows,
                                          Eigen::Index total_rows);

// Convolutions over time x channels sequences.
// weight: out_channels x (kernel * in_channels), column index k * in + c.
template <typename S> Var<S> conv1d(Var<S> x, Var<S> weight, Var<S> bias, int kernel, int stride,
                                    int pad_left, int pad_right);
// weight: in_channels x (kernel * out_channels), column index k * out + c.
// Output length (T - 1) * stride - 2 * padding + kernel + output_padding.
template <typename S> Var<S> conv_transpose1d(Var<S> x, Var<S> weight, Var<S> bias, int kernel,
                                              int stride, int padding, int output_padding);

// Rotary position rotation applied per head to adjacent channel pairs.
// Row t is treated as position t + position_offset.
template <typename S> Var<S> rope(Var<S> x, int heads, S base = S(10000),
                                  Eigen::Index position_offset = 0);
// Full-context multi-head attention with rotary queries/keys. q, k, v are
// already projected (T x hidden); returns concatenated head outputs.
template <typename S> Var<S> rope_attention(Var<S> q, Var<S> k, Var<S> v, int heads,
                                            Eigen::Index position_offset = 0);

// Gradient plumbing.
template <typename S> Var<S> stop_gradient(Var<S> x);
// Forward value is `value`; the incoming gradient is handed to `source`
// unchanged (straight-through identity).
template <typename S> Var<S> passthrough(Var<S> source, Matrix<S> value);

// Row-wise top-k renormalization of positive scores: entries outside the k
// largest (ties -> lowest index) become 0, the rest are divided by their sum.
template <typename S> Var<S> topk_normalize(Var<S> scores, int k);

// Rows where mask[t] is true are replaced by the shared row `embedding`.
template <typename S> Var<S> mask_rows(Var<S> x, const std::vector<bool>& mask, Var<S> embedding);

// One-sided STFT magnitude of a mono signal (N x 1), frames x (fft/2 + 1),
// frames fully inside the signal. `window` has fft_size entries.
template <typename S> Var<S> stft_magnitude(Var<S> signal, const Vector<S>& window, int fft_size,
                                            int hop);

}  // namespace unicodec::ad
