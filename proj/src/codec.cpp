#include "unicodec/codec.hpp"

#include "unicodec/resample.hpp"

namespace unicodec {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.encoder.conv_channels = {16, 32, 48, 64, 64};
  c.encoder.layers = 2;
  c.encoder.heads = 8;
  c.encoder.hidden = 64;
  c.encoder.mlp_dim = 128;
  c.encoder.moe.expert_dim = 128;
  c.decoder.channels = {64, 48, 32, 16, 8};
  c.decoder.hidden = 64;
  c.codebook_size = 512;
  return c;
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.hidden != encoder.hidden) throw ConfigError("decoder.hidden must equal encoder.hidden");
  CodebookLayout{codebook_size}.validate();
  if (!(codebook_init_std > 0.0)) throw ConfigError("codebook_init_std must be positive");
  if (!(commitment_weight >= 0.0)) throw ConfigError("commitment_weight must be non-negative");
}

Json to_json(const ModelConfig& c) {
  Json moe = {{"num_shared", c.encoder.moe.num_shared},
              {"num_routed", c.encoder.moe.num_routed},
              {"top_k", c.encoder.moe.top_k},
              {"expert_dim", c.encoder.moe.expert_dim},
              {"centroid_std", c.encoder.moe.centroid_std}};
  Json enc = {{"conv_channels", c.encoder.conv_channels},
              {"strides", c.encoder.strides},
              {"layers", c.encoder.layers},
              {"heads", c.encoder.heads},
              {"hidden", c.encoder.hidden},
              {"mlp_dim", c.encoder.mlp_dim},
              {"moe", moe}};
  Json dec = {{"strides", c.decoder.strides},
              {"channels", c.decoder.channels},
              {"hidden", c.decoder.hidden},
              {"output_kernel", c.decoder.output_kernel}};
  return Json{{"encoder", enc},
              {"decoder", dec},
              {"codebook_size", c.codebook_size},
              {"train_base_embeddings", c.train_base_embeddings},
              {"codebook_init_std", c.codebook_init_std},
              {"commitment_weight", c.commitment_weight}};
}

ModelConfig model_config_from_json(JsonSection s, const ModelConfig& base) {
  ModelConfig c = base;
  {
    JsonSection e = s.section("encoder");
    e.read("conv_channels", c.encoder.conv_channels);
    e.read("strides", c.encoder.strides);
    e.read("layers", c.encoder.layers);
    e.read("heads", c.encoder.heads);
    e.read("hidden", c.encoder.hidden);
    e.read("mlp_dim", c.encoder.mlp_dim);
    JsonSection m = e.section("moe");
    m.read("num_shared", c.encoder.moe.num_shared);
    m.read("num_routed", c.encoder.moe.num_routed);
    m.read("top_k", c.encoder.moe.top_k);
    m.read("expert_dim", c.encoder.moe.expert_dim);
    m.read("centroid_std", c.encoder.moe.centroid_std);
    m.finish();
    e.finish();
  }
  {
    JsonSection d = s.section("decoder");
    d.read("strides", c.decoder.strides);
    d.read("channels", c.decoder.channels);
    d.read("hidden", c.decoder.hidden);
    d.read("output_kernel", c.decoder.output_kernel);
    d.finish();
  }
  s.read("codebook_size", c.codebook_size);
  s.read("train_base_embeddings", c.train_base_embeddings);
  s.read("codebook_init_std", c.codebook_init_std);
  s.read("commitment_weight", c.commitment_weight);
  s.finish();
  c.validate();
  return c;
}

template <typename S>
Codec<S>::Codec(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  InitRng rng(init_seed);
  encoder_ = Encoder<S>(cfg_.encoder, rng);
  quantizer_ = Quantizer<S>(CodebookLayout{cfg_.codebook_size}, cfg_.encoder.hidden, rng, cfg_.train_base_embeddings,
                           cfg_.codebook_init_std);
  decoder_ = Decoder<S>(cfg_.decoder, rng);
}

template <typename S>
CodecForward<S> Codec<S>::forward(Tape<S>& t, Var<S> waveform, std::optional<Domain> domain, const MaskSet* mask) {
  CodecForward<S> out;
  out.features = encoder_.conv_encode(t, waveform);
  Var<S> x = mask ? encoder_.apply_mask(t, out.features, mask->mask) : out.features;
  out.encoded = encoder_.transformer_encode(t, x);
  out.quant = quantizer_.quantize(t, out.encoded, domain);
  out.vq = vq_losses(out.encoded, out.quant.codewords, static_cast<S>(cfg_.commitment_weight));
  out.audio = decoder_.decode(t, out.quant.straight_through);
  return out;
}

template <typename S>
TokenStream Codec<S>::encode(const AudioClip& clip, std::optional<Domain> domain) {
  const AudioClip in = clip.sample_rate == kModelSampleRate ? clip : resample(clip, kModelSampleRate);
  Tape<S> t;
  const Matrix<S> wav = in.samples.cast<S>();
  Var<S> z = encoder_.transformer_encode(t, encoder_.conv_encode(t, t.constant(wav)));
  TokenStream s;
  s.ids = quantizer_.encode(z.value(), domain);
  s.frame_rate = kModelSampleRate / cfg_.encoder.hop();
  s.source_sample_rate = clip.sample_rate;
  s.codebook_size = cfg_.codebook_size;
  return s;
}

template <typename S>
AudioClip Codec<S>::decode(const TokenStream& tokens) {
  if (tokens.codebook_size != cfg_.codebook_size) {
    throw InputError("token stream uses a " + std::to_string(tokens.codebook_size) + "-entry codebook, model has " +
                     std::to_string(cfg_.codebook_size));
  }
  if (tokens.ids.empty()) throw InputError("token stream is empty");
  const Matrix<S> book = quantizer_.effective_codebook();
  Matrix<S> frames(static_cast<Eigen::Index>(tokens.ids.size()), book.cols());
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id >= book.rows()) throw InputError("token id " + std::to_string(id) + " outside codebook");
    frames.row(static_cast<Eigen::Index>(i)) = book.row(id);
  }
  return decoder_.decode(frames);
}

template <typename S>
AudioClip Codec<S>::reconstruct(const AudioClip& clip, std::optional<Domain> domain) {
  AudioClip out = decode(encode(clip, domain));
  out.domain = clip.domain;
  return out;
}

template <typename S>
std::size_t Codec<S>::parameter_count() {
  std::size_t n = 0;
  for_each_parameter([&](Parameter<S>& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

template <typename S>
void Codec<S>::save_to(Checkpoint& ck) {
  ck.put_bytes("model.config", to_json(cfg_).dump());
  for_each_parameter([&](Parameter<S>& p) { ck.put_parameter(p); });
}

template <typename S>
Codec<S> Codec<S>::load_from(const Checkpoint& ck) {
  if (!ck.contains("model.config")) throw FormatError("checkpoint has no model.config record");
  Json j;
  try {
    j = Json::parse(ck.get_bytes("model.config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint model.config is not valid JSON: ") + e.what());
  }
  Codec<S> c(model_config_from_json(JsonSection(j, "model"), ModelConfig{}), 0);
  c.for_each_parameter([&](Parameter<S>& p) {
    if (!ck.contains(p.name)) throw FormatError("checkpoint is missing parameter " + p.name);
    Matrix<S> v = ck.get_matrix<S>(p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw FormatError("checkpoint parameter " + p.name + " has shape " + shape_of(v) + ", model expects " +
                        shape_of(p.value));
    }
    p.value = std::move(v);
    p.zero_grad();
  });
  return c;
}

template class Codec<float>;
template class Codec<double>;

}  // namespace unicodec
