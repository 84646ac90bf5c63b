#include "unicodec/encoder.hpp"

#include <numeric>

namespace unicodec {

void MoEConfig::validate() const {
  if (num_shared < 0 || num_routed < 0) throw ConfigError("moe expert counts must be non-negative");
  if (num_routed > 0 && (top_k < 1 || top_k > num_routed)) {
    throw ConfigError("moe.top_k must satisfy 1 <= top_k <= num_routed");
  }
  if (expert_dim < 1) throw ConfigError("moe.expert_dim must be positive");
}

int EncoderConfig::hop() const {
  return std::accumulate(strides.begin(), strides.end(), 1, std::multiplies<>());
}

void EncoderConfig::validate() const {
  if (strides.empty() || strides.size() != conv_channels.size()) {
    throw ConfigError("encoder.strides and encoder.conv_channels must have equal, nonzero length");
  }
  for (int s : strides) {
    if (s < 1) throw ConfigError("encoder.strides entries must be >= 1");
  }
  if (hop() != kModelSampleRate / 75) {
    throw ConfigError("encoder.strides must multiply to 320 (24000 Hz / 75 Hz), got " + std::to_string(hop()));
  }
  if (conv_channels.back() != hidden) throw ConfigError("encoder.conv_channels must end at encoder.hidden");
  if (heads < 1 || hidden % heads != 0 || (hidden / heads) % 2 != 0) {
    throw ConfigError("encoder.hidden must split into encoder.heads heads of even width");
  }
  if (layers < 0) throw ConfigError("encoder.layers must be non-negative");
  moe.validate();
}

template <typename S>
MoELayer<S>::MoELayer(const std::string& name, int hidden, const MoEConfig& cfg, InitRng& rng)
    : top_k(cfg.top_k) {
  for (int i = 0; i < cfg.num_shared; ++i) {
    shared.emplace_back(name + ".shared" + std::to_string(i), hidden, cfg.expert_dim, rng);
  }
  for (int i = 0; i < cfg.num_routed; ++i) {
    routed.emplace_back(name + ".routed" + std::to_string(i), hidden, cfg.expert_dim, rng);
  }
  centroids = Parameter<S>(name + ".centroids", gaussian<S>(rng, cfg.num_routed, hidden, cfg.centroid_std));
}

template <typename S>
Var<S> MoELayer<S>::gates(Tape<S>& t, Var<S> input) {
  Var<S> affinity = ad::sigmoid(ad::matmul_nt(input, t.param(centroids)));
  return ad::topk_normalize(affinity, top_k);
}

template <typename S>
Var<S> MoELayer<S>::forward(Tape<S>& t, Var<S> residual, Var<S> input) {
  Var<S> out = residual;
  for (auto& e : shared) out = ad::add(out, e(t, input));
  if (routed.empty()) return out;
  Var<S> g = gates(t, input);
  const Eigen::Index steps = input.rows();
  for (std::size_t i = 0; i < routed.size(); ++i) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < steps; ++r) {
      if (g.value()(r, static_cast<Eigen::Index>(i)) != S(0)) rows.push_back(r);
    }
    if (rows.empty()) continue;
    Var<S> y = routed[i](t, ad::gather_rows(input, rows));
    Var<S> gi = ad::slice_cols(ad::gather_rows(g, rows), static_cast<Eigen::Index>(i), 1);
    out = ad::add(out, ad::scatter_rows(ad::mul(y, gi), rows, steps));
  }
  return out;
}

template <typename S>
Vector<S> moe_gate(const Vector<S>& u, const Matrix<S>& centroids, int top_k) {
  if (u.size() != centroids.cols()) {
    throw DimensionError("moe_gate: token " + shape_of(u) + " vs centroids " + shape_of(centroids));
  }
  Tape<S> t;
  Var<S> aff = ad::sigmoid(ad::matmul_nt(t.constant(u.transpose()), t.constant(centroids)));
  return ad::topk_normalize(aff, top_k).value().row(0).transpose();
}

template <typename S>
Vector<S> moe_ffn(const Vector<S>& u, MoELayer<S>& layer) {
  Tape<S> t;
  return layer.forward(t, t.constant(u.transpose())).value().row(0).transpose();
}

template <typename S>
SelfAttention<S>::SelfAttention(const std::string& name, int hidden, int h, InitRng& rng)
    : q(name + ".q", hidden, hidden, rng),
      k(name + ".k", hidden, hidden, rng),
      v(name + ".v", hidden, hidden, rng),
      o(name + ".o", hidden, hidden, rng, 0.5),
      heads(h) {}

template <typename S>
Var<S> SelfAttention<S>::operator()(Tape<S>& t, Var<S> x) {
  return o(t, ad::rope_attention(q(t, x), k(t, x), v(t, x), heads));
}

template <typename S>
TransformerBlock<S>::TransformerBlock(const std::string& name, const EncoderConfig& cfg, InitRng& rng)
    : attn_norm(name + ".attn_norm", cfg.hidden),
      attn(name + ".attn", cfg.hidden, cfg.heads, rng),
      ffn_norm(name + ".ffn_norm", cfg.hidden),
      moe(name + ".moe", cfg.hidden, cfg.moe, rng) {}

template <typename S>
Var<S> TransformerBlock<S>::operator()(Tape<S>& t, Var<S> x) {
  Var<S> h = ad::add(x, attn(t, attn_norm(t, x)));
  return moe.forward(t, h, ffn_norm(t, h));
}

template <typename S>
Encoder<S>::Encoder(const EncoderConfig& cfg, InitRng& rng) : cfg_(cfg) {
  cfg_.validate();
  int in = 1;
  for (std::size_t i = 0; i < cfg.strides.size(); ++i) {
    ConvStage<S> c;
    c.stride = cfg.strides[i];
    c.kernel = 2 * c.stride;
    c.pad_left = (c.stride + 1) / 2;
    c.pad_right = c.stride / 2;
    const int out = cfg.conv_channels[i];
    const std::string name = "encoder.conv" + std::to_string(i);
    const double fan_in = static_cast<double>(c.kernel * in);
    c.weight = Parameter<S>(name + ".weight", gaussian<S>(rng, out, c.kernel * in, std::sqrt(2.0 / fan_in)));
    c.bias = Parameter<S>(name + ".bias", Matrix<S>::Zero(1, out), 1);
    convs_.push_back(std::move(c));
    in = out;
  }
  feature_norm_ = LayerNorm<S>("encoder.feature_norm", cfg.hidden);
  for (int l = 0; l < cfg.layers; ++l) {
    blocks_.emplace_back("encoder.block" + std::to_string(l), cfg_, rng);
  }
  final_norm_ = LayerNorm<S>("encoder.final_norm", cfg.hidden);
  mask_embedding_ = Parameter<S>("encoder.mask_embedding", gaussian<S>(rng, 1, cfg.hidden, 0.1), 1);
}

template <typename S>
Var<S> Encoder<S>::conv_encode(Tape<S>& t, Var<S> waveform) {
  if (waveform.cols() != 1) throw DimensionError("conv_encode expects N x 1 audio, got " + shape_of(waveform.value()));
  if (waveform.rows() < cfg_.hop()) {
    throw InputError("clip of " + std::to_string(waveform.rows()) + " samples is shorter than one frame (" +
                     std::to_string(cfg_.hop()) + " samples)");
  }
  Var<S> x = waveform;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    auto& c = convs_[i];
    x = ad::conv1d(x, t.param(c.weight), t.param(c.bias), c.kernel, c.stride, c.pad_left, c.pad_right);
    if (i + 1 < convs_.size()) x = ad::gelu(x);
  }
  return feature_norm_(t, x);
}

template <typename S>
Var<S> Encoder<S>::apply_mask(Tape<S>& t, Var<S> features, const std::vector<bool>& mask) {
  return ad::mask_rows(features, mask, t.param(mask_embedding_));
}

template <typename S>
Var<S> Encoder<S>::blocks(Tape<S>& t, Var<S> features) {
  Var<S> x = features;
  for (auto& b : blocks_) x = b(t, x);
  return x;
}

template <typename S>
Var<S> Encoder<S>::transformer_encode(Tape<S>& t, Var<S> features) {
  return final_norm_(t, blocks(t, features));
}

template struct MoELayer<float>;
template struct MoELayer<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template Vector<float> moe_gate<float>(const Vector<float>&, const Matrix<float>&, int);
template Vector<double> moe_gate<double>(const Vector<double>&, const Matrix<double>&, int);
template Vector<float> moe_ffn<float>(const Vector<float>&, MoELayer<float>&);
template Vector<double> moe_ffn<double>(const Vector<double>&, MoELayer<double>&);

}  // namespace unicodec
