#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>

namespace unicodec {

enum class Domain { Speech = 0, Music = 1, Sound = 2 };

inline constexpr int kDomainCount = 3;
inline constexpr int kModelSampleRate = 24000;

std::string_view to_string(Domain d);
// Accepts "speech", "music", "sound" (case-insensitive).
Domain parse_domain(std::string_view s);

// Mono waveform. Samples are kept in [-1, 1].
struct AudioClip {
  Eigen::VectorXf samples;
  int sample_rate = kModelSampleRate;
  std::optional<Domain> domain;

  Eigen::Index size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

}  // namespace unicodec
