#pragma once

// Magnitude spectrograms and mel filterbanks.
//
// Framing never pads: frame f covers samples [f * hop, f * hop + fft_size),
// so a signal of n samples yields floor((n - fft_size) / hop) + 1 frames.
// Spectra are one-sided (fft_size / 2 + 1 bins) and unnormalized.

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/errors.hpp"
#include "unicodec/tensor.hpp"

namespace unicodec {

enum class WindowKind { Hann, Rectangular };

struct StftConfig {
  int fft_size = 1024;
  int hop = 256;
  WindowKind window = WindowKind::Hann;

  void validate() const;
  int bins() const { return fft_size / 2 + 1; }
  Eigen::Index frames(Eigen::Index n) const { return (n - fft_size) / hop + 1; }
};

// HTK mel scale; defaults are the 24 kHz metric configuration.
struct MelConfig {
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 12000.0;
  StftConfig stft;

  void validate(int sample_rate) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic window of length n.
template <typename S>
Vector<S> make_window(WindowKind kind, int n) {
  Vector<S> w(n);
  for (int i = 0; i < n; ++i) {
    w(i) = kind == WindowKind::Hann ? static_cast<S>(0.5 - 0.5 * std::cos(2.0 * M_PI * i / n)) : S(1);
  }
  return w;
}

// n_mels x bins triangular filterbank (unit peak).
template <typename S>
Matrix<S> mel_filterbank(const MelConfig& cfg, int sample_rate);

// freq x frames magnitude spectrogram of any real vector expression.
template <typename Derived>
Matrix<typename Derived::Scalar> stft_magnitude(const Eigen::MatrixBase<Derived>& x, const StftConfig& cfg) {
  using S = typename Derived::Scalar;
  cfg.validate();
  const Eigen::Index n = x.size();
  if (n < cfg.fft_size) {
    throw InputError("clip of " + std::to_string(n) + " samples is too short for fft_size " +
                     std::to_string(cfg.fft_size));
  }
  const Vector<S> w = make_window<S>(cfg.window, cfg.fft_size);
  const Eigen::Index frames = cfg.frames(n);
  Matrix<S> out(cfg.bins(), frames);
  Eigen::FFT<S> fft;
  std::vector<S> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<std::complex<S>> spec;
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int i = 0; i < cfg.fft_size; ++i) buf[i] = x(f * cfg.hop + i) * w(i);
    fft.fwd(spec, buf);
    for (int b = 0; b < cfg.bins(); ++b) out(b, f) = std::abs(spec[b]);
  }
  return out;
}

// mel x frames: mel_filterbank * stft_magnitude.
template <typename Derived>
Matrix<typename Derived::Scalar> mel_spectrogram(const Eigen::MatrixBase<Derived>& x, const MelConfig& cfg,
                                                 int sample_rate) {
  using S = typename Derived::Scalar;
  return mel_filterbank<S>(cfg, sample_rate) * stft_magnitude(x, cfg.stft);
}

Matrix<float> stft_magnitude(const AudioClip& clip, const StftConfig& cfg);
Matrix<float> mel_spectrogram(const AudioClip& clip, const MelConfig& cfg);

// Mean over frames of geometric / arithmetic mean of the power spectrum.
double spectral_flatness(const AudioClip& clip, const StftConfig& cfg = {});

}  // namespace unicodec
