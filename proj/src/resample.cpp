#include "unicodec/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "unicodec/errors.hpp"

namespace unicodec {
namespace {

constexpr double kKaiserBeta = 8.0;
constexpr double kCutoffMargin = 0.95;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

// Taps for input offsets k = -(taps/2 - 1) .. taps/2 around floor(position),
// normalized to unit DC gain.
std::vector<double> phase_taps(double frac, double cutoff) {
  constexpr int half = kResamplerTaps / 2;
  std::vector<double> taps(kResamplerTaps);
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
  double total = 0;
  for (int j = 0; j < kResamplerTaps; ++j) {
    const double d = static_cast<double>(j - (half - 1)) - frac;
    const double r = d / half;
    const double win = std::abs(r) <= 1.0 ? std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta : 0.0;
    taps[j] = cutoff * sinc(cutoff * d) * win;
    total += taps[j];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw InputError("resample: target rate must be positive");
  if (clip.sample_rate <= 0) throw InputError("resample: source rate must be positive");
  if (clip.sample_rate == target_rate) return clip;

  const long long g = std::gcd(clip.sample_rate, target_rate);
  const long long up = target_rate / g;
  const long long down = clip.sample_rate / g;
  const double cutoff = kCutoffMargin * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));

  const long long n_in = clip.samples.size();
  const long long n_out = (n_in * up + down / 2) / down;

  constexpr long long kMaxCachedPhases = 4096;
  std::vector<std::vector<double>> cache;
  if (up <= kMaxCachedPhases) {
    cache.reserve(static_cast<std::size_t>(up));
    for (long long p = 0; p < up; ++p) cache.push_back(phase_taps(static_cast<double>(p) / up, cutoff));
  }

  AudioClip out;
  out.sample_rate = target_rate;
  out.domain = clip.domain;
  out.samples.resize(n_out);
  constexpr int half = kResamplerTaps / 2;
  for (long long j = 0; j < n_out; ++j) {
    const long long base = (j * down) / up;
    const long long phase = (j * down) % up;
    std::vector<double> local;
    const std::vector<double>* taps = nullptr;
    if (!cache.empty()) {
      taps = &cache[static_cast<std::size_t>(phase)];
    } else {
      local = phase_taps(static_cast<double>(phase) / up, cutoff);
      taps = &local;
    }
    double acc = 0;
    for (int k = 0; k < kResamplerTaps; ++k) {
      const long long i = base + k - (half - 1);
      if (i >= 0 && i < n_in) acc += (*taps)[k] * clip.samples(i);
    }
    out.samples(j) = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

}  // namespace unicodec
