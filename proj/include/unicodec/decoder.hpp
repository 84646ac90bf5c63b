#pragma once

// Transposed-convolution decoder: 75 Hz latent frames back to 24 kHz audio.
// Each stage upsamples by its stride with kernel 2*stride, so T frames give
// exactly T * hop samples. A kernel-7 projection to one channel and tanh
// close the stack.

#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/nn.hpp"

namespace unicodec {

struct DecoderConfig {
  std::vector<int> strides = {2, 4, 5, 4, 2};
  std::vector<int> channels = {512, 256, 128, 64, 32};
  int hidden = 512;
  int output_kernel = 7;

  void validate() const;
  int hop() const;
};

template <typename S>
struct UpsampleStage {
  Parameter<S> weight;  // in x (kernel * out)
  Parameter<S> bias;    // 1 x out
  int kernel = 2;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename S>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& cfg, InitRng& rng);

  const DecoderConfig& config() const { return cfg_; }

  // frames: T x hidden -> (T * hop) x 1, values in (-1, 1).
  Var<S> decode(Tape<S>& t, Var<S> frames);
  AudioClip decode(const Matrix<S>& frames);

  std::vector<UpsampleStage<S>>& stages() { return stages_; }
  Parameter<S>& output_weight() { return out_weight_; }
  Parameter<S>& output_bias() { return out_bias_; }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& s : stages_) s.for_each_parameter(f);
    f(out_weight_);
    f(out_bias_);
  }

 private:
  DecoderConfig cfg_;
  std::vector<UpsampleStage<S>> stages_;
  Parameter<S> out_weight_;
  Parameter<S> out_bias_;
};

}  // namespace unicodec
