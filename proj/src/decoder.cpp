#include "unicodec/decoder.hpp"

#include <cmath>
#include <numeric>

namespace unicodec {

int DecoderConfig::hop() const {
  return std::accumulate(strides.begin(), strides.end(), 1, std::multiplies<>());
}

void DecoderConfig::validate() const {
  if (strides.empty() || strides.size() != channels.size()) {
    throw ConfigError("decoder.strides and decoder.channels must have equal, nonzero length");
  }
  for (int s : strides) {
    if (s < 1) throw ConfigError("decoder.strides entries must be >= 1");
  }
  for (int c : channels) {
    if (c < 1) throw ConfigError("decoder.channels entries must be >= 1");
  }
  if (hop() != kModelSampleRate / 75) {
    throw ConfigError("decoder.strides must multiply to 320, got " + std::to_string(hop()));
  }
  if (hidden < 1) throw ConfigError("decoder.hidden must be positive");
  if (output_kernel < 1 || output_kernel % 2 == 0) throw ConfigError("decoder.output_kernel must be odd");
}

template <typename S>
Decoder<S>::Decoder(const DecoderConfig& cfg, InitRng& rng) : cfg_(cfg) {
  cfg_.validate();
  int in = cfg_.hidden;
  for (std::size_t i = 0; i < cfg_.strides.size(); ++i) {
    UpsampleStage<S> st;
    st.stride = cfg_.strides[i];
    st.kernel = 2 * st.stride;
    st.padding = (st.stride + 1) / 2;
    st.output_padding = 2 * st.padding - st.stride;
    const int out = cfg_.channels[i];
    const std::string name = "decoder.up" + std::to_string(i);
    // Each output sample sees in * kernel / stride = 2 * in inputs.
    st.weight = Parameter<S>(name + ".weight", gaussian<S>(rng, in, st.kernel * out, std::sqrt(1.0 / in)));
    st.bias = Parameter<S>(name + ".bias", Matrix<S>::Zero(1, out), 1);
    stages_.push_back(std::move(st));
    in = out;
  }
  const double fan_in = static_cast<double>(in * cfg_.output_kernel);
  out_weight_ = Parameter<S>("decoder.out.weight", gaussian<S>(rng, 1, cfg_.output_kernel * in, 0.5 / std::sqrt(fan_in)));
  out_bias_ = Parameter<S>("decoder.out.bias", Matrix<S>::Zero(1, 1), 1);
}

template <typename S>
Var<S> Decoder<S>::decode(Tape<S>& t, Var<S> frames) {
  if (frames.rows() < 1) throw InputError("decode: no frames to decode");
  if (frames.cols() != cfg_.hidden) {
    throw DimensionError("decode: frames " + shape_of(frames.value()) + " vs hidden " + std::to_string(cfg_.hidden));
  }
  Var<S> x = frames;
  for (auto& st : stages_) {
    x = ad::gelu(ad::conv_transpose1d(x, t.param(st.weight), t.param(st.bias), st.kernel, st.stride, st.padding,
                                      st.output_padding));
  }
  const int half = cfg_.output_kernel / 2;
  x = ad::conv1d(x, t.param(out_weight_), t.param(out_bias_), cfg_.output_kernel, 1, half, half);
  return ad::tanh(x);
}

template <typename S>
AudioClip Decoder<S>::decode(const Matrix<S>& frames) {
  Tape<S> t;
  const Matrix<S>& y = decode(t, t.constant(frames)).value();
  AudioClip clip;
  clip.sample_rate = kModelSampleRate;
  clip.samples = Eigen::Map<const Vector<S>>(y.data(), y.rows()).template cast<float>();
  return clip;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace unicodec
