#include "unicodec/spectral.hpp"

namespace unicodec {

void StftConfig::validate() const {
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) {
    throw ConfigError("stft fft_size " + std::to_string(fft_size) + " is not a power of two");
  }
  if (hop < 1 || hop > fft_size) throw ConfigError("stft hop must be in [1, fft_size]");
}

void MelConfig::validate(int sample_rate) const {
  stft.validate();
  if (n_mels < 1) throw ConfigError("n_mels must be positive");
  if (!(fmin >= 0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel range requires 0 <= fmin < fmax <= sample_rate / 2");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

template <typename S>
Matrix<S> mel_filterbank(const MelConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  const int bins = cfg.stft.bins();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  Matrix<S> fb = Matrix<S>::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / cfg.stft.fft_size;
      double w = 0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, b) = static_cast<S>(w);
    }
    if (!(fb.row(m).sum() > 0)) {
      throw ConfigError("mel filter " + std::to_string(m) + " covers no FFT bin; use a larger fft_size or fewer mels");
    }
  }
  return fb;
}

template Matrix<float> mel_filterbank<float>(const MelConfig&, int);
template Matrix<double> mel_filterbank<double>(const MelConfig&, int);

Matrix<float> stft_magnitude(const AudioClip& clip, const StftConfig& cfg) {
  return stft_magnitude(clip.samples, cfg);
}

Matrix<float> mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  return mel_spectrogram(clip.samples, cfg, clip.sample_rate);
}

double spectral_flatness(const AudioClip& clip, const StftConfig& cfg) {
  const Matrix<double> mag = stft_magnitude(clip.samples.cast<double>(), cfg);
  double total = 0;
  for (Eigen::Index f = 0; f < mag.cols(); ++f) {
    const Eigen::ArrayXd power = mag.col(f).array().square() + 1e-12;
    total += std::exp(power.log().mean()) / power.mean();
  }
  return total / static_cast<double>(mag.cols());
}

}  // namespace unicodec
