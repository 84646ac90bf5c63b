#include "unicodec/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "unicodec/resample.hpp"
#include "unicodec/spectral.hpp"
#include "unicodec/toy_data.hpp"
#include "unicodec/wav.hpp"

namespace unicodec {

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Acoustic: return "acoustic";
    case Stage::Semantic: return "semantic";
    case Stage::Finetune: return "finetune";
  }
  return "acoustic";
}

Stage parse_stage(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "acoustic") return Stage::Acoustic;
  if (lower == "semantic") return Stage::Semantic;
  if (lower == "finetune" || lower == "fine-tune") return Stage::Finetune;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected acoustic, semantic or finetune)");
}

template <typename S>
void AdamW<S>::step(const std::vector<Parameter<S>*>& params, double lr) {
  for (const Parameter<S>* p : params) {
    if (p->trainable && !p->grad.allFinite()) {
      throw NonFiniteError("non-finite gradient in " + p->name + " at optimizer step " + std::to_string(t_ + 1));
    }
  }
  ++t_;
  const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
  const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  const S step_lr = static_cast<S>(lr);
  const S decay = static_cast<S>(1.0 - lr * cfg_.weight_decay);
  const S eps = static_cast<S>(cfg_.eps);

  for (Parameter<S>* p : params) {
    if (!p->trainable) continue;
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw DimensionError("gradient of " + p->name + " has shape " + shape_of(p->grad) + ", value " +
                           shape_of(p->value));
    }
    auto [it, fresh] = moments_.try_emplace(p->name);
    AdamMoments<S>& mo = it->second;
    if (fresh) {
      mo.m = Matrix<S>::Zero(p->value.rows(), p->value.cols());
      mo.v = Matrix<S>::Zero(p->value.rows(), p->value.cols());
    }
    auto update_rows = [&](Eigen::Index r0, Eigen::Index n) {
      auto pv = p->value.middleRows(r0, n);
      auto g = p->grad.middleRows(r0, n);
      auto m = mo.m.middleRows(r0, n);
      auto v = mo.v.middleRows(r0, n);
      pv *= decay;
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
      pv.array() -= step_lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    };
    if (cfg_.row_sparse.count(p->name)) {
      for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
        if ((p->grad.row(r).array() != S(0)).any()) update_rows(r, 1);
      }
    } else {
      update_rows(0, p->value.rows());
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min) {
  if (total_steps <= 0) return lr0;
  const double s = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * s / static_cast<double>(total_steps)));
}

StageConfig StageConfig::defaults(Stage s) {
  StageConfig c;
  c.stage = s;
  switch (s) {
    case Stage::Acoustic: break;
    case Stage::Semantic:
      c.enable_mask = true;
      c.enable_contrastive = true;
      break;
    case Stage::Finetune:
      c.lr = 5e-5;
      c.lambda_mel = kFinetuneMelWeight;
      break;
  }
  return c;
}

void StageConfig::validate() const {
  const bool semantic = stage == Stage::Semantic;
  if (semantic && !(enable_mask && enable_contrastive)) {
    throw ConfigError("enable_mask and enable_contrastive must both be true for the semantic stage");
  }
  if (!semantic && (enable_mask || enable_contrastive)) {
    throw ConfigError("enable_mask and enable_contrastive are only valid in the semantic stage");
  }
  if (stage == Stage::Finetune) {
    if (lr != 5e-5) throw ConfigError("lr must be 5e-5 for the finetune stage");
    if (lambda_mel != kFinetuneMelWeight) throw ConfigError("lambda_mel must be 450 for the finetune stage");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lr_min >= 0.0 && lr_min <= lr)) throw ConfigError("lr_min must lie in [0, lr]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("betas[0] must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("betas[1] must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(lambda_mel >= 0.0)) throw ConfigError("lambda_mel must be non-negative");
  if (!(lambda_contrastive >= 0.0)) throw ConfigError("lambda_contrastive must be non-negative");
  if (!(max_clip_seconds > 0.0 && max_clip_seconds <= 10.0)) throw ConfigError("max_clip_seconds must lie in (0, 10]");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (resume && init_checkpoint.empty()) throw ConfigError("resume requires init_checkpoint");
  mask.validate();
  contrastive.validate();
  model.validate();
}

StageConfig stage_config_from_json(const Json& j) {
  JsonSection s(j, "");
  std::string stage_name = "acoustic";
  s.read("stage", stage_name);
  StageConfig c = StageConfig::defaults(parse_stage(stage_name));

  std::string preset = "toy";
  s.read("model_preset", preset);
  if (preset == "toy") {
    c.model = ModelConfig::toy();
  } else if (preset == "full") {
    c.model = ModelConfig::full();
  } else {
    throw ConfigError("model_preset must be 'toy' or 'full'");
  }
  c.model = model_config_from_json(s.section("model"), c.model);

  s.read("lr", c.lr);
  s.read("lr_min", c.lr_min);
  std::vector<double> betas = {c.adam.beta1, c.adam.beta2};
  s.read("betas", betas);
  if (betas.size() != 2) throw ConfigError("betas must hold exactly two numbers");
  c.adam.beta1 = betas[0];
  c.adam.beta2 = betas[1];
  s.read("eps", c.adam.eps);
  s.read("weight_decay", c.adam.weight_decay);
  s.read("lambda_mel", c.lambda_mel);
  s.read("lambda_contrastive", c.lambda_contrastive);
  s.read("enable_mask", c.enable_mask);
  s.read("enable_contrastive", c.enable_contrastive);
  s.read("max_clip_seconds", c.max_clip_seconds);
  {
    JsonSection m = s.section("mask");
    m.read("p", c.mask.p);
    m.read("span", c.mask.span);
    m.finish();
  }
  {
    JsonSection k = s.section("contrastive");
    if (k.has("distractors")) {
      int d = 0;
      k.read("distractors", d);
      c.contrastive.distractors = d;
    }
    k.read("temperature", c.contrastive.temperature);
    k.read("divide_by_distractor_count", c.contrastive.divide_by_distractor_count);
    k.finish();
  }
  s.read("steps", c.steps);
  s.read("batch_size", c.batch_size);
  s.read("checkpoint_every", c.checkpoint_every);
  s.read("seed", c.seed);
  s.read("manifest", c.manifest);
  s.read("init_checkpoint", c.init_checkpoint);
  s.read("resume", c.resume);
  s.read("out_dir", c.out_dir);
  s.finish();
  c.validate();
  return c;
}

StageConfig load_stage_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  StageConfig c = stage_config_from_json(j);
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (dir / p).lexically_normal().string();
  };
  resolve(c.manifest);
  resolve(c.init_checkpoint);
  resolve(c.out_dir);
  return c;
}

Json to_json(const StageConfig& c) {
  Json contrastive = {{"temperature", c.contrastive.temperature},
                      {"divide_by_distractor_count", c.contrastive.divide_by_distractor_count}};
  if (c.contrastive.distractors) contrastive["distractors"] = *c.contrastive.distractors;
  return Json{{"stage", std::string(to_string(c.stage))},
              {"lr", c.lr},
              {"lr_min", c.lr_min},
              {"betas", {c.adam.beta1, c.adam.beta2}},
              {"eps", c.adam.eps},
              {"weight_decay", c.adam.weight_decay},
              {"lambda_mel", c.lambda_mel},
              {"lambda_contrastive", c.lambda_contrastive},
              {"enable_mask", c.enable_mask},
              {"enable_contrastive", c.enable_contrastive},
              {"max_clip_seconds", c.max_clip_seconds},
              {"mask", {{"p", c.mask.p}, {"span", c.mask.span}}},
              {"contrastive", contrastive},
              {"steps", c.steps},
              {"batch_size", c.batch_size},
              {"checkpoint_every", c.checkpoint_every},
              {"seed", c.seed},
              {"manifest", c.manifest},
              {"init_checkpoint", c.init_checkpoint},
              {"resume", c.resume},
              {"out_dir", c.out_dir},
              {"model", to_json(c.model)}};
}

namespace {

AdamWConfig with_row_sparse_base(AdamWConfig adam) {
  adam.row_sparse.insert("quantizer.base");
  return adam;
}

std::mt19937_64 training_rng(std::uint64_t seed, Stage stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage)};
  return std::mt19937_64(seq);
}

template <typename S>
std::vector<Parameter<S>*> parameter_list(Codec<S>& model) {
  std::vector<Parameter<S>*> ps;
  model.for_each_parameter([&](Parameter<S>& p) { ps.push_back(&p); });
  return ps;
}

}  // namespace

template <typename S>
TrainState<S>::TrainState(Codec<S> m, AdamWConfig adam, std::uint64_t seed, Stage s)
    : model(std::move(m)), optimizer(with_row_sparse_base(std::move(adam))), rng(training_rng(seed, s)), stage(s) {}

template <typename S>
void TrainState<S>::save_to(Checkpoint& ck) {
  model.save_to(ck);
  ck.put_bytes("train.stage", std::string(to_string(stage)));
  ck.put_i64("train.step", {step, optimizer.steps()});
  std::ostringstream rs;
  rs << rng;
  ck.put_bytes("train.rng", rs.str());
  model.for_each_parameter([&](Parameter<S>& p) {
    auto it = optimizer.moments().find(p.name);
    if (it == optimizer.moments().end()) return;
    ck.put_matrix("adam.m." + p.name, it->second.m, p.rank);
    ck.put_matrix("adam.v." + p.name, it->second.v, p.rank);
  });
}

template <typename S>
void TrainState<S>::save(const std::string& path) {
  Checkpoint ck;
  save_to(ck);
  ck.save(path);
}

template <typename S>
TrainState<S> TrainState<S>::load(const Checkpoint& ck, const AdamWConfig& adam) {
  TrainState<S> st;
  st.model = Codec<S>::load_from(ck);
  st.optimizer = AdamW<S>(with_row_sparse_base(adam));
  st.stage = ck.contains("train.stage") ? parse_stage(ck.get_bytes("train.stage")) : Stage::Acoustic;
  if (ck.contains("train.step")) {
    const auto steps = ck.get_i64("train.step");
    if (steps.size() != 2) throw FormatError("checkpoint train.step must hold two counters");
    st.step = steps[0];
    st.optimizer.set_steps(steps[1]);
  }
  if (ck.contains("train.rng")) {
    std::istringstream rs(ck.get_bytes("train.rng"));
    rs >> st.rng;
    if (!rs) throw FormatError("checkpoint train.rng is not a valid generator state");
  }
  st.model.for_each_parameter([&](Parameter<S>& p) {
    const std::string m = "adam.m." + p.name, v = "adam.v." + p.name;
    if (!ck.contains(m) || !ck.contains(v)) return;
    AdamMoments<S> mo{ck.get_matrix<S>(m), ck.get_matrix<S>(v)};
    if (mo.m.rows() != p.value.rows() || mo.m.cols() != p.value.cols() || mo.v.rows() != p.value.rows() ||
        mo.v.cols() != p.value.cols()) {
      throw FormatError("optimizer moments for " + p.name + " do not match the parameter shape");
    }
    st.optimizer.moments()[p.name] = std::move(mo);
  });
  return st;
}

template <typename S>
TrainState<S> TrainState<S>::load(const std::string& path, const AdamWConfig& adam) {
  return load(Checkpoint::load(path), adam);
}

template <typename S>
TrainState<S> prepare_state(const StageConfig& cfg) {
  cfg.validate();
  if (cfg.init_checkpoint.empty()) {
    if (cfg.stage == Stage::Semantic) {
      throw StageOrderError("the semantic stage needs an acoustic-stage checkpoint (set init_checkpoint)");
    }
    if (cfg.stage == Stage::Finetune) {
      throw StageOrderError("the finetune stage needs a prior checkpoint (set init_checkpoint)");
    }
    return TrainState<S>(Codec<S>(cfg.model, cfg.seed), cfg.adam, cfg.seed, cfg.stage);
  }
  TrainState<S> loaded = TrainState<S>::load(cfg.init_checkpoint, cfg.adam);
  if (cfg.resume) {
    if (loaded.stage != cfg.stage) {
      throw StageOrderError("cannot resume a " + std::string(to_string(loaded.stage)) + " checkpoint as the " +
                            std::string(to_string(cfg.stage)) + " stage");
    }
    return loaded;
  }
  if (cfg.stage == Stage::Semantic && loaded.stage == Stage::Finetune) {
    throw StageOrderError("the semantic stage must start from an acoustic-stage checkpoint, got a finetune checkpoint");
  }
  return TrainState<S>(std::move(loaded.model), cfg.adam, cfg.seed, cfg.stage);
}

std::string to_json_line(const StepMetrics& m) {
  Json j = {{"step", m.step},
            {"stage", std::string(to_string(m.stage))},
            {"lr", m.lr},
            {"loss", m.loss},
            {"reconstruction", m.reconstruction},
            {"time_l1", m.time_l1},
            {"mel_l1", m.mel_l1},
            {"commitment", m.commitment},
            {"codebook", m.codebook}};
  if (m.stage == Stage::Semantic) {
    j["contrastive"] = m.contrastive;
    j["contrastive_clips"] = m.contrastive_clips;
  }
  return j.dump();
}

std::vector<AudioClip> cleanest_speech(const std::vector<AudioClip>& dataset) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].domain == Domain::Speech) scored.emplace_back(spectral_flatness(dataset[i]), i);
  }
  if (scored.empty()) throw InputError("finetune stage needs speech clips in the dataset");
  std::vector<double> values;
  for (const auto& s : scored) values.push_back(s.first);
  std::sort(values.begin(), values.end());
  const double median = values[(values.size() - 1) / 2];
  std::vector<AudioClip> out;
  for (const auto& [flatness, i] : scored) {
    if (flatness <= median) out.push_back(dataset[i]);
  }
  return out;
}

namespace {

void check_dataset(const std::vector<AudioClip>& dataset) {
  if (dataset.empty()) throw InputError("training dataset is empty");
  const MelConfig mel;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const AudioClip& c = dataset[i];
    if (c.sample_rate != kModelSampleRate) {
      throw InputError("training clip " + std::to_string(i) + " is at " + std::to_string(c.sample_rate) +
                       " Hz; resample to 24000 Hz first");
    }
    if (!c.domain) throw InputError("training clip " + std::to_string(i) + " has no domain label");
    if (c.size() < mel.stft.fft_size) {
      throw InputError("training clip " + std::to_string(i) + " is shorter than " +
                       std::to_string(mel.stft.fft_size) + " samples");
    }
  }
}

template <typename S>
struct ClipLoss {
  Var<S> total;
  double time = 0, mel = 0, recon = 0, commitment = 0, codebook = 0, contrastive = 0;
  bool has_contrastive = false;
};

template <typename S>
ClipLoss<S> clip_loss(Tape<S>& t, Codec<S>& model, const Matrix<S>& wav, Domain domain, const StageConfig& cfg,
                      const MelFeatures<S>& mel, std::mt19937_64& rng) {
  std::optional<MaskSet> mask;
  const int frames = static_cast<int>(frame_count(wav.rows(), model.config().encoder.hop()));
  if (cfg.enable_mask) mask = sample_mask(frames, cfg.mask, rng);
  Var<S> x = t.constant(wav);
  CodecForward<S> f = model.forward(t, x, domain, mask ? &*mask : nullptr);
  ReconstructionTerms<S> r = reconstruction_loss(x, f.audio, static_cast<S>(cfg.lambda_mel), mel);
  ClipLoss<S> out;
  out.total = ad::add(r.total, ad::add(f.vq.commitment, f.vq.codebook));
  out.time = r.time.item();
  out.mel = r.mel.item();
  out.recon = r.total.item();
  out.commitment = f.vq.commitment.item();
  out.codebook = f.vq.codebook.item();
  if (cfg.enable_contrastive) {
    const int masked = mask->masked_count();
    const int k = cfg.contrastive.resolve_distractors(masked);
    if (k >= 1 && masked >= k + 1) {
      Var<S> lm = contrastive_loss(f.quant.straight_through, f.features, *mask, cfg.contrastive, rng);
      out.contrastive = lm.item();
      out.has_contrastive = true;
      out.total = ad::add(out.total, ad::scale(lm, static_cast<S>(cfg.lambda_contrastive)));
    }
  }
  return out;
}

}  // namespace

template <typename S>
std::vector<StepMetrics> train_stage(const std::vector<AudioClip>& input, const StageConfig& cfg, TrainState<S>& state,
                                     const TrainHooks& hooks) {
  cfg.validate();
  if (state.stage != cfg.stage) {
    throw StageOrderError("training state is tagged " + std::string(to_string(state.stage)) + ", config asks for " +
                          std::string(to_string(cfg.stage)));
  }
  const std::vector<AudioClip> dataset = cfg.stage == Stage::Finetune ? cleanest_speech(input) : input;
  check_dataset(dataset);

  const MelFeatures<S> mel(MelConfig{}, kModelSampleRate);
  const auto params = parameter_list(state.model);
  const auto max_samples = static_cast<Eigen::Index>(std::lround(cfg.max_clip_seconds * kModelSampleRate));
  std::string last_good = "none";
  std::vector<StepMetrics> metrics;

  while (state.step < cfg.steps) {
    const double lr = cosine_lr(state.step, cfg.steps, cfg.lr, cfg.lr_min);
    StepMetrics m;
    m.step = state.step + 1;
    m.stage = cfg.stage;
    m.lr = lr;
    try {
      Tape<S> t;
      std::vector<Var<S>> losses;
      std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
      for (int b = 0; b < cfg.batch_size; ++b) {
        const AudioClip& clip = dataset[pick(state.rng)];
        Eigen::Index start = 0, len = clip.size();
        if (len > max_samples) {
          std::uniform_int_distribution<Eigen::Index> off(0, len - max_samples);
          start = off(state.rng);
          len = max_samples;
        }
        const Matrix<S> wav = clip.samples.segment(start, len).template cast<S>();
        ClipLoss<S> cl = clip_loss(t, state.model, wav, *clip.domain, cfg, mel, state.rng);
        losses.push_back(cl.total);
        m.time_l1 += cl.time;
        m.mel_l1 += cl.mel;
        m.reconstruction += cl.recon;
        m.commitment += cl.commitment;
        m.codebook += cl.codebook;
        if (cl.has_contrastive) {
          m.contrastive += cl.contrastive;
          ++m.contrastive_clips;
        }
      }
      Var<S> total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
      total = ad::scale(total, S(1) / static_cast<S>(cfg.batch_size));
      m.loss = total.item();
      for (Parameter<S>* p : params) p->zero_grad();
      t.backward(total);
      state.optimizer.step(params, lr);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + " during step " + std::to_string(m.step) +
                           "; last good checkpoint: " + last_good);
    }
    const double inv = 1.0 / cfg.batch_size;
    m.time_l1 *= inv;
    m.mel_l1 *= inv;
    m.reconstruction *= inv;
    m.commitment *= inv;
    m.codebook *= inv;
    if (m.contrastive_clips > 0) m.contrastive /= m.contrastive_clips;
    ++state.step;

    metrics.push_back(m);
    if (hooks.log) *hooks.log << to_json_line(m) << '\n' << std::flush;
    if (hooks.on_step) hooks.on_step(m);
    if (cfg.checkpoint_every > 0 && !cfg.out_dir.empty() && state.step % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.out_dir);
      last_good = checkpoint_path(cfg.out_dir, state.step);
      state.save(last_good);
      if (hooks.on_checkpoint) hooks.on_checkpoint(last_good);
    }
  }
  return metrics;
}

template <typename S>
double dataset_reconstruction_loss(Codec<S>& model, const std::vector<AudioClip>& clips, double lambda_mel) {
  check_dataset(clips);
  const MelFeatures<S> mel(MelConfig{}, kModelSampleRate);
  double total = 0;
  for (const AudioClip& clip : clips) {
    Tape<S> t;
    Var<S> x = t.constant(clip.samples.cast<S>());
    CodecForward<S> f = model.forward(t, x, clip.domain);
    total += reconstruction_loss(x, f.audio, static_cast<S>(lambda_mel), mel).total.item();
  }
  return total / static_cast<double>(clips.size());
}

template <typename S>
double dataset_contrastive_loss(Codec<S>& model, const std::vector<AudioClip>& clips, const MaskSpec& mask_spec,
                                const ContrastiveConfig& cc, std::uint64_t seed) {
  check_dataset(clips);
  std::mt19937_64 rng(seed);
  double total = 0;
  int used = 0;
  for (const AudioClip& clip : clips) {
    Tape<S> t;
    Var<S> x = t.constant(clip.samples.cast<S>());
    const int frames = static_cast<int>(frame_count(clip.size(), model.config().encoder.hop()));
    const MaskSet mask = sample_mask(frames, mask_spec, rng);
    const int k = cc.resolve_distractors(mask.masked_count());
    if (k < 1 || mask.masked_count() < k + 1) continue;
    CodecForward<S> f = model.forward(t, x, clip.domain, &mask);
    total += contrastive_loss(f.quant.straight_through, f.features, mask, cc, rng).item();
    ++used;
  }
  if (used == 0) throw InputError("no clip had enough masked steps for the contrastive loss");
  return total / used;
}

std::vector<AudioClip> load_manifest_clips(const std::string& manifest_path) {
  std::vector<AudioClip> clips;
  for (const ManifestEntry& e : read_manifest(manifest_path)) {
    AudioClip c = resample(load_wav(e.path), kModelSampleRate);
    c.domain = e.domain;
    clips.push_back(std::move(c));
  }
  return clips;
}

std::string checkpoint_path(const std::string& out_dir, std::int64_t step) {
  std::ostringstream os;
  os << "step" << std::setw(6) << std::setfill('0') << step << ".uckp";
  return (std::filesystem::path(out_dir) / os.str()).string();
}

std::string final_checkpoint_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "final.uckp").string();
}

template class AdamW<float>;
template class AdamW<double>;
template struct TrainState<float>;
template struct TrainState<double>;
template TrainState<float> prepare_state<float>(const StageConfig&);
template TrainState<double> prepare_state<double>(const StageConfig&);
template std::vector<StepMetrics> train_stage<float>(const std::vector<AudioClip>&, const StageConfig&,
                                                     TrainState<float>&, const TrainHooks&);
template std::vector<StepMetrics> train_stage<double>(const std::vector<AudioClip>&, const StageConfig&,
                                                      TrainState<double>&, const TrainHooks&);
template double dataset_reconstruction_loss<float>(Codec<float>&, const std::vector<AudioClip>&, double);
template double dataset_reconstruction_loss<double>(Codec<double>&, const std::vector<AudioClip>&, double);
template double dataset_contrastive_loss<float>(Codec<float>&, const std::vector<AudioClip>&, const MaskSpec&,
                                                const ContrastiveConfig&, std::uint64_t);
template double dataset_contrastive_loss<double>(Codec<double>&, const std::vector<AudioClip>&, const MaskSpec&,
                                                 const ContrastiveConfig&, std::uint64_t);

}  // namespace unicodec
