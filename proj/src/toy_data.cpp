#include "unicodec/toy_data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "unicodec/checkpoint.hpp"
#include "unicodec/errors.hpp"

namespace unicodec {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

void peak_normalize(Eigen::VectorXd& x) {
  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 0) x *= 0.95 / peak;
}

Eigen::VectorXd speech(Rng& rng, Eigen::Index n, double sr) {
  const double f0 = uniform(rng, 100, 220);
  const double glide_rate = uniform(rng, 1, 3);
  const double glide_phase = uniform(rng, 0, 2 * M_PI);
  const double syllable_rate = uniform(rng, 3, 5);
  const double syllable_phase = uniform(rng, 0, 2 * M_PI);
  const double f1 = uniform(rng, 400, 900);
  const double f2 = uniform(rng, 1000, 2500);
  const double snr_db = uniform(rng, 15, 45);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  double phase = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double time = t / sr;
    const double f = f0 * (1.0 + 0.08 * std::sin(2 * M_PI * glide_rate * time + glide_phase));
    phase += 2 * M_PI * f / sr;
    const double env = std::pow(std::max(0.0, std::sin(2 * M_PI * syllable_rate * time + syllable_phase)), 0.7);
    double v = 0;
    for (int h = 1; f * h < 5000.0; ++h) {
      const double fh = f * h;
      const double formant = std::exp(-std::pow((fh - f1) / 200.0, 2)) +
                             0.7 * std::exp(-std::pow((fh - f2) / 300.0, 2)) + 0.1;
      v += formant / std::pow(h, 0.7) * std::sin(h * phase);
    }
    x(t) = env * v;
  }
  const double signal_power = x.squaredNorm() / static_cast<double>(n);
  const double noise_std = std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index t = 0; t < n; ++t) x(t) += noise_std * noise(rng);
  return x;
}

Eigen::VectorXd music(Rng& rng, Eigen::Index n, double sr) {
  const int root = std::uniform_int_distribution<int>(48, 60)(rng);
  const bool minor = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  std::vector<int> notes = {root, root + (minor ? 3 : 4), root + 7};
  if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) notes.push_back(root + 12);
  const double decay = uniform(rng, 1.0, 3.0);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (int note : notes) {
    const double freq = 440.0 * std::pow(2.0, (note - 69) / 12.0) * (1.0 + uniform(rng, -0.002, 0.002));
    const double start_phase = uniform(rng, 0, 2 * M_PI);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double time = t / sr;
      const double env = std::min(1.0, time / 0.02) * std::exp(-time / decay);
      double v = 0;
      for (int h = 1; h <= 6 && freq * h < sr / 2; ++h) {
        v += std::sin(2 * M_PI * freq * h * time + h * start_phase) / std::pow(h, 1.5);
      }
      x(t) += env * v;
    }
  }
  return x;
}

Eigen::VectorXd sound(Rng& rng, Eigen::Index n, double sr) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int bursts = std::uniform_int_distribution<int>(2, 5)(rng);
  const double duration = n / sr;
  for (int b = 0; b < bursts; ++b) {
    const double start = uniform(rng, 0, std::max(0.0, duration - 0.1));
    const double length = uniform(rng, 0.05, 0.3);
    const double center = uniform(rng, 300, 6000);
    const double q = uniform(rng, 0.2, 0.8);
    const double gain = uniform(rng, 0.4, 1.0);
    // RBJ band-pass biquad (constant 0 dB peak gain)
    const double w0 = 2 * M_PI * center / sr;
    const double alpha = std::sin(w0) / (2 * q);
    const double a0 = 1 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2 * std::cos(w0) / a0, a2 = (1 - alpha) / a0;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    const auto s0 = static_cast<Eigen::Index>(start * sr);
    const auto s1 = std::min<Eigen::Index>(n, s0 + static_cast<Eigen::Index>(length * sr));
    for (Eigen::Index t = s0; t < s1; ++t) {
      const double in = noise(rng);
      const double y = b0 * in + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = in;
      y2 = y1;
      y1 = y;
      const double env = std::exp(-static_cast<double>(t - s0) / (0.3 * length * sr));
      x(t) += gain * env * (y + 0.3 * in);
    }
  }
  for (Eigen::Index t = 0; t < n; ++t) x(t) += 0.003 * noise(rng);
  return x;
}

}  // namespace

std::vector<AudioClip> gen_toy_dataset(std::uint64_t seed, int per_domain, double duration_seconds) {
  if (per_domain < 1) throw InputError("per_domain must be at least 1");
  if (!(duration_seconds > 0)) throw InputError("duration must be positive");
  const auto n = static_cast<Eigen::Index>(std::llround(duration_seconds * kModelSampleRate));
  const double sr = kModelSampleRate;
  Rng rng(seed);
  std::vector<AudioClip> clips;
  for (int d = 0; d < kDomainCount; ++d) {
    for (int i = 0; i < per_domain; ++i) {
      Eigen::VectorXd x;
      switch (static_cast<Domain>(d)) {
        case Domain::Speech: x = speech(rng, n, sr); break;
        case Domain::Music: x = music(rng, n, sr); break;
        case Domain::Sound: x = sound(rng, n, sr); break;
      }
      peak_normalize(x);
      AudioClip clip;
      clip.samples = x.cast<float>();
      clip.sample_rate = kModelSampleRate;
      clip.domain = static_cast<Domain>(d);
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::istringstream in(read_file(path));
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 'path,domain'");
    }
    std::string domain = line.substr(comma + 1);
    while (!domain.empty() && domain.front() == ' ') domain.erase(domain.begin());
    std::filesystem::path p(line.substr(0, comma));
    if (p.is_relative()) p = dir / p;
    entries.push_back({p.string(), parse_domain(domain)});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.path;
    out += ',';
    out += to_string(e.domain);
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace unicodec
