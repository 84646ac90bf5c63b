#pragma once

#include <string>

#include "unicodec/audio.hpp"

namespace unicodec {

enum class WavEncoding { Pcm16, Float32 };

// RIFF/WAVE reader for 16-bit PCM and 32-bit IEEE float (plain or
// WAVE_FORMAT_EXTENSIBLE). Multichannel input is averaged to mono and
// integer samples are scaled by 1/32768.
AudioClip load_wav(const std::string& path);
AudioClip parse_wav(const std::string& bytes);

// 16-bit output rounds x * 32768 and clamps to [-32768, 32767].
void save_wav(const std::string& path, const AudioClip& clip, WavEncoding enc = WavEncoding::Pcm16);
std::string encode_wav(const AudioClip& clip, WavEncoding enc = WavEncoding::Pcm16);
// Raw interleaved float32 writer, mostly for tests of the multichannel path.
std::string encode_wav_float_interleaved(const Eigen::MatrixXf& frames_by_channel, int sample_rate);

}  // namespace unicodec
