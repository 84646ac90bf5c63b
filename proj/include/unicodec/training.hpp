#pragma once

// Three-stage training: acoustic (reconstruction + commitment), semantic
// (adds span masking and the masked contrastive loss) and fine-tune
// (reconstruction with a heavier mel weight on the cleanest speech).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "unicodec/codec.hpp"

namespace unicodec {

enum class Stage { Acoustic, Semantic, Finetune };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Parameters updated row-sparsely: rows whose gradient is entirely zero
  // keep their values and moments untouched (no decay either).
  std::set<std::string> row_sparse;
};

template <typename S>
struct AdamMoments {
  Matrix<S> m;
  Matrix<S> v;
};

// Decoupled weight decay followed by a bias-corrected Adam step:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename S>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(std::move(cfg)) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }

  // Applies one update to every trainable parameter. A non-finite gradient
  // throws NonFiniteError naming the parameter and leaves all values as
  // they were.
  void step(const std::vector<Parameter<S>*>& params, double lr);

  std::map<std::string, AdamMoments<S>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<S>>& moments() const { return moments_; }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, AdamMoments<S>> moments_;
};

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min);

struct StageConfig {
  Stage stage = Stage::Acoustic;
  double lr = 2e-4;
  double lr_min = 0.0;
  AdamWConfig adam;
  double lambda_mel = kAcousticMelWeight;
  double lambda_contrastive = 1.0;
  bool enable_mask = false;
  bool enable_contrastive = false;
  double max_clip_seconds = 10.0;
  MaskSpec mask;
  ContrastiveConfig contrastive;
  std::int64_t steps = 500;
  int batch_size = 6;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 7;
  std::string manifest;
  std::string init_checkpoint;  // weights (and, with resume, optimizer state)
  bool resume = false;          // continue the stage stored in init_checkpoint
  std::string out_dir = "run";
  ModelConfig model = ModelConfig::toy();

  // Stage-specific defaults (fine-tune: lr 5e-5, lambda_mel 450; semantic:
  // masking and contrastive loss enabled).
  static StageConfig defaults(Stage s);
  void validate() const;
};

// Reads a JSON object; "stage" selects the defaults, other keys override
// them. Unknown keys raise ConfigError naming the key.
StageConfig stage_config_from_json(const Json& j);
StageConfig load_stage_config(const std::string& path);
Json to_json(const StageConfig& cfg);

template <typename S>
struct TrainState {
  Codec<S> model;
  AdamW<S> optimizer;
  std::int64_t step = 0;  // completed steps within `stage`
  std::mt19937_64 rng;
  Stage stage = Stage::Acoustic;

  TrainState() = default;
  TrainState(Codec<S> m, AdamWConfig adam, std::uint64_t seed, Stage s);

  void save_to(Checkpoint& ck);
  void save(const std::string& path);
  static TrainState load(const Checkpoint& ck, const AdamWConfig& adam);
  static TrainState load(const std::string& path, const AdamWConfig& adam);
};

// Builds the starting state for cfg: a fresh model for the acoustic stage,
// the weights of cfg.init_checkpoint otherwise (optimizer state and step
// counter too when cfg.resume). Semantic refuses to start from anything but
// an acoustic or semantic checkpoint.
template <typename S>
TrainState<S> prepare_state(const StageConfig& cfg);

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the completed step
  Stage stage = Stage::Acoustic;
  double lr = 0;
  double loss = 0;
  double reconstruction = 0;
  double time_l1 = 0;
  double mel_l1 = 0;
  double commitment = 0;
  double codebook = 0;
  double contrastive = 0;  // mean over clips that had enough masked steps
  int contrastive_clips = 0;
};

std::string to_json_line(const StepMetrics& m);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  // Called after each periodic checkpoint write with its path.
  std::function<void(const std::string&)> on_checkpoint;
  std::ostream* log = nullptr;  // receives one JSON line per step
};

// Runs cfg.steps - state.step further steps. Clips must be 24 kHz and
// domain-labeled; each clip is quantized within its domain's region.
template <typename S>
std::vector<StepMetrics> train_stage(const std::vector<AudioClip>& dataset, const StageConfig& cfg, TrainState<S>& state,
                                     const TrainHooks& hooks = {});

// Speech clips whose spectral flatness is at most the speech median.
std::vector<AudioClip> cleanest_speech(const std::vector<AudioClip>& dataset);

// Mean reconstruction loss over clips (no masking, domain-restricted
// quantization, no parameter updates).
template <typename S>
double dataset_reconstruction_loss(Codec<S>& model, const std::vector<AudioClip>& clips, double lambda_mel);

// Mean contrastive loss over clips with masks drawn from `seed`; clips with
// too few masked steps are skipped. Throws if every clip is skipped.
template <typename S>
double dataset_contrastive_loss(Codec<S>& model, const std::vector<AudioClip>& clips, const MaskSpec& mask,
                                const ContrastiveConfig& cc, std::uint64_t seed);

// Loads every manifest entry, resampled to 24 kHz and labeled.
std::vector<AudioClip> load_manifest_clips(const std::string& manifest_path);

std::string checkpoint_path(const std::string& out_dir, std::int64_t step);
std::string final_checkpoint_path(const std::string& out_dir);

}  // namespace unicodec
