#pragma once

// The full model: encoder -> partitioned quantizer -> decoder.

#include <optional>
#include <string>

#include "unicodec/checkpoint.hpp"
#include "unicodec/decoder.hpp"
#include "unicodec/encoder.hpp"
#include "unicodec/json_config.hpp"
#include "unicodec/losses.hpp"
#include "unicodec/quantizer.hpp"

namespace unicodec {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int codebook_size = 16384;
  bool train_base_embeddings = false;
  double codebook_init_std = 0.1;
  double commitment_weight = 0.25;

  // hidden 512, 8 layers, 8 heads, 16384 codes.
  static ModelConfig full();
  // hidden 64, 2 layers, 512 codes; trains on one CPU core.
  static ModelConfig toy();

  void validate() const;
};

Json to_json(const ModelConfig& cfg);
// Missing keys keep the values of `base`; unknown keys are errors.
ModelConfig model_config_from_json(JsonSection section, const ModelConfig& base);

template <typename S>
struct CodecForward {
  Var<S> features;  // conv latents, T x hidden
  Var<S> encoded;   // transformer output, T x hidden
  QuantizerOutput<S> quant;
  VqLosses<S> vq;
  Var<S> audio;  // (T * hop) x 1
};

template <typename S>
class Codec {
 public:
  Codec() = default;
  Codec(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  Encoder<S>& encoder() { return encoder_; }
  Quantizer<S>& quantizer() { return quantizer_; }
  Decoder<S>& decoder() { return decoder_; }

  // waveform: N x 1 at 24 kHz. When `mask` is given, masked conv frames are
  // replaced by the mask embedding before the transformer.
  CodecForward<S> forward(Tape<S>& t, Var<S> waveform, std::optional<Domain> domain,
                          const MaskSet* mask = nullptr);

  // Resamples to 24 kHz when needed.
  TokenStream encode(const AudioClip& clip, std::optional<Domain> domain = std::nullopt);
  AudioClip decode(const TokenStream& tokens);
  AudioClip reconstruct(const AudioClip& clip, std::optional<Domain> domain = std::nullopt);

  template <typename F>
  void for_each_parameter(F&& f) {
    encoder_.for_each_parameter(f);
    quantizer_.for_each_parameter(f);
    decoder_.for_each_parameter(f);
  }
  std::size_t parameter_count();

  void save_to(Checkpoint& ck);
  static Codec load_from(const Checkpoint& ck);

 private:
  ModelConfig cfg_;
  Encoder<S> encoder_;
  Quantizer<S> quantizer_;
  Decoder<S> decoder_;
};

}  // namespace unicodec
