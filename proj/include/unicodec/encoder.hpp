#pragma once

// Waveform encoder: strided convolution front end (24 kHz -> 75 Hz) followed
// by pre-norm transformer blocks whose feed-forward sublayers are domain
// mixture-of-experts:
//
//   h_t = u_t + sum_i FFN^s_i(u_t) + sum_i g_{i,t} FFN^r_i(u_t)
//   g_{i,t} = g'_{i,t} / sum_j g'_{j,t}
//   g'_{i,t} = s_{i,t} if s_{i,t} is among the K_r largest, else 0
//   s_{i,t} = sigmoid(u_t . e_i)
//
// Top-k ties go to the lowest expert index. Because sigmoid > 0 the
// normalizer of the selected gates is always positive.

#include <optional>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/nn.hpp"

namespace unicodec {

struct MoEConfig {
  int num_shared = 1;
  int num_routed = 3;
  int top_k = 1;
  int expert_dim = 2048;
  double centroid_std = 0.02;

  void validate() const;
};

struct EncoderConfig {
  std::vector<int> conv_channels = {32, 64, 128, 256, 512};
  std::vector<int> strides = {2, 4, 5, 4, 2};
  int layers = 8;
  int heads = 8;
  int hidden = 512;
  int mlp_dim = 2048;
  MoEConfig moe;

  void validate() const;
  int hop() const;  // product of strides
};

template <typename S>
struct MoELayer {
  std::vector<FeedForward<S>> shared;
  std::vector<FeedForward<S>> routed;
  Parameter<S> centroids;  // num_routed x hidden
  int top_k = 1;

  MoELayer() = default;
  MoELayer(const std::string& name, int hidden, const MoEConfig& cfg, InitRng& rng);

  // Gates g (T x num_routed) for token rows of `input`.
  Var<S> gates(Tape<S>& t, Var<S> input);
  // residual + shared experts + gated routed experts, experts applied to
  // `input`. The header formula is the special case residual == input.
  Var<S> forward(Tape<S>& t, Var<S> residual, Var<S> input);
  Var<S> forward(Tape<S>& t, Var<S> u) { return forward(t, u, u); }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& e : shared) e.for_each_parameter(f);
    for (auto& e : routed) e.for_each_parameter(f);
    f(centroids);
  }
};

// Per-vector forms of the routing math, evaluated through the same tape ops
// the model uses.
template <typename S>
Vector<S> moe_gate(const Vector<S>& u, const Matrix<S>& centroids, int top_k);
template <typename S>
Vector<S> moe_ffn(const Vector<S>& u, MoELayer<S>& layer);

template <typename S>
struct SelfAttention {
  Linear<S> q, k, v, o;
  int heads = 8;

  SelfAttention() = default;
  SelfAttention(const std::string& name, int hidden, int heads, InitRng& rng);
  Var<S> operator()(Tape<S>& t, Var<S> x);

  template <typename F>
  void for_each_parameter(F&& f) {
    q.for_each_parameter(f);
    k.for_each_parameter(f);
    v.for_each_parameter(f);
    o.for_each_parameter(f);
  }
};

template <typename S>
struct TransformerBlock {
  LayerNorm<S> attn_norm;
  SelfAttention<S> attn;
  LayerNorm<S> ffn_norm;
  MoELayer<S> moe;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, const EncoderConfig& cfg, InitRng& rng);
  // x + attn(norm(x)), then moe with that sum as residual.
  Var<S> operator()(Tape<S>& t, Var<S> x);

  template <typename F>
  void for_each_parameter(F&& f) {
    attn_norm.for_each_parameter(f);
    attn.for_each_parameter(f);
    ffn_norm.for_each_parameter(f);
    moe.for_each_parameter(f);
  }
};

template <typename S>
struct ConvStage {
  Parameter<S> weight;
  Parameter<S> bias;
  int kernel = 1;
  int stride = 1;
  int pad_left = 0;
  int pad_right = 0;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, InitRng& rng);

  const EncoderConfig& config() const { return cfg_; }

  // waveform: N x 1 at 24 kHz -> floor(N / hop) x hidden conv latents,
  // layer-normalized per frame.
  Var<S> conv_encode(Tape<S>& t, Var<S> waveform);
  // Replaces masked frames with the shared learned mask embedding.
  Var<S> apply_mask(Tape<S>& t, Var<S> features, const std::vector<bool>& mask);
  // Transformer blocks without the final norm.
  Var<S> blocks(Tape<S>& t, Var<S> features);
  // Blocks followed by the final layer norm; output shape equals input.
  Var<S> transformer_encode(Tape<S>& t, Var<S> features);

  std::vector<TransformerBlock<S>>& transformer() { return blocks_; }
  std::vector<ConvStage<S>>& conv_stages() { return convs_; }
  Parameter<S>& mask_embedding() { return mask_embedding_; }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& c : convs_) c.for_each_parameter(f);
    feature_norm_.for_each_parameter(f);
    for (auto& b : blocks_) b.for_each_parameter(f);
    final_norm_.for_each_parameter(f);
    f(mask_embedding_);
  }

 private:
  EncoderConfig cfg_;
  std::vector<ConvStage<S>> convs_;
  LayerNorm<S> feature_norm_;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNorm<S> final_norm_;
  Parameter<S> mask_embedding_;
};

// Frames produced for n samples: floor(n / hop).
inline Eigen::Index frame_count(Eigen::Index samples, int hop) { return samples / hop; }

}  // namespace unicodec
