#pragma once

#include "unicodec/audio.hpp"

namespace unicodec {

// Windowed-sinc polyphase resampler (Kaiser window, 64 taps per phase).
// Output length is round(n * target / source); the rate ratio is reduced by
// gcd so every rational pair gets an exact polyphase schedule. Same-rate
// input is returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate);

inline constexpr int kResamplerTaps = 64;

}  // namespace unicodec
