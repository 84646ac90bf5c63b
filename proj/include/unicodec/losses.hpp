#pragma once

// Training objectives and evaluation distances.

#include <optional>
#include <random>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/ops.hpp"
#include "unicodec/spectral.hpp"

namespace unicodec {

// Span masking: round(p * T) start indices (at least one) drawn without
// replacement, each masking frames [s, min(s + span, T)).
struct MaskSpec {
  double p = 0.1;
  int span = 5;

  void validate() const;
};

struct MaskSet {
  std::vector<bool> mask;
  std::vector<int> starts;  // in draw order

  int masked_count() const;
  std::vector<int> masked_indices() const;  // ascending
};

MaskSet sample_mask(int frames, const MaskSpec& spec, std::mt19937_64& rng);

struct ContrastiveConfig {
  // Distractors per masked step; empty means min(masked - 1, 100).
  std::optional<int> distractors;
  double temperature = 0.1;
  // Divide similarities by the distractor count instead of the temperature.
  bool divide_by_distractor_count = false;

  void validate() const;
  int resolve_distractors(int masked) const;
};

// Masked contrastive loss averaged over masked steps:
//   -log softmax_j( cos(q_t, cand_j) / tau )[0],  cand = {c_t} + K distractors
// with distractors c_s, s drawn uniformly without replacement from the other
// masked steps. q and c are T x d; rows outside the mask are ignored.
template <typename S>
Var<S> contrastive_loss(Var<S> q, Var<S> c, const MaskSet& mask, const ContrastiveConfig& cfg, std::mt19937_64& rng);

// Spectral constants for the differentiable mel path, built once per
// sample rate and reused across steps.
template <typename S>
struct MelFeatures {
  MelConfig config;
  int sample_rate = kModelSampleRate;
  Matrix<S> filterbank;  // n_mels x bins
  Vector<S> window;

  MelFeatures() : MelFeatures(MelConfig{}, kModelSampleRate) {}
  MelFeatures(const MelConfig& cfg, int sample_rate);

  // frames x n_mels for an N x 1 signal on the tape.
  Var<S> operator()(Var<S> signal) const;
};

template <typename S>
struct ReconstructionTerms {
  Var<S> time;   // mean |x_hat - x|
  Var<S> mel;    // mean |mel(x_hat) - mel(x)|
  Var<S> total;  // time + lambda_mel * mel
};

// Both signals are N x 1 on the same tape; the longer is truncated.
template <typename S>
ReconstructionTerms<S> reconstruction_loss(Var<S> x, Var<S> x_hat, S lambda_mel, const MelFeatures<S>& mel);

struct ReconstructionValue {
  double time = 0.0;
  double mel = 0.0;
  double total = 0.0;
};

ReconstructionValue reconstruction_loss(const AudioClip& x, const AudioClip& x_hat, double lambda_mel);

inline constexpr double kAcousticMelWeight = 45.0;
inline constexpr double kFinetuneMelWeight = 450.0;

// Mean L1 between mel spectrograms under the default MelConfig.
double mel_distance(const AudioClip& x, const AudioClip& x_hat);
// Mean over fft sizes of the mean L1 between Hann STFT magnitudes with
// hop fft / 4.
double stft_distance(const AudioClip& x, const AudioClip& x_hat, const std::vector<int>& scales = {512, 1024, 2048});

}  // namespace unicodec
