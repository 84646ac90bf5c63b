#include "unicodec/wav.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "unicodec/checkpoint.hpp"
#include "unicodec/errors.hpp"

namespace unicodec {

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::Speech: return "speech";
    case Domain::Music: return "music";
    case Domain::Sound: return "sound";
  }
  return "unknown";
}

Domain parse_domain(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "speech") return Domain::Speech;
  if (lower == "music") return Domain::Music;
  if (lower == "sound") return Domain::Sound;
  throw InputError("unknown domain '" + std::string(s) + "' (expected speech|music|sound)");
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) | (static_cast<std::uint8_t>(p[1]) << 8));
}

std::uint32_t u32(const char* p) {
  return static_cast<std::uint32_t>(u16(p)) | (static_cast<std::uint32_t>(u16(p + 2)) << 16);
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v & 0xffff));
  put16(out, static_cast<std::uint16_t>(v >> 16));
}

std::string header(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                   std::uint32_t data_bytes) {
  std::string out;
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  put32(out, 16);
  put16(out, format);
  put16(out, channels);
  put32(out, rate);
  put32(out, rate * channels * bits / 8);
  put16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put16(out, bits);
  out += "data";
  put32(out, data_bytes);
  return out;
}

}  // namespace

AudioClip parse_wav(const std::string& bytes) {
  const char* d = bytes.data();
  if (bytes.size() < 12 || std::memcmp(d, "RIFF", 4) != 0 || std::memcmp(d + 8, "WAVE", 4) != 0) {
    throw FormatError("malformed RIFF chunk: missing RIFF/WAVE signature");
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(d + pos, 4);
    const std::size_t len = u32(d + pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + len > bytes.size()) throw FormatError("malformed 'fmt ' chunk: truncated");
      format = u16(d + body);
      channels = u16(d + body + 2);
      rate = u32(d + body + 4);
      bits = u16(d + body + 14);
      if (format == kFormatExtensible) {
        if (len < 40) throw FormatError("malformed 'fmt ' chunk: extensible header truncated");
        format = u16(d + body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("malformed 'data' chunk: appears before 'fmt '");
      data = d + body;
      data_len = std::min(len, bytes.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) throw FormatError("malformed WAVE: missing 'fmt ' chunk");
  if (data == nullptr) throw FormatError("malformed WAVE: missing 'data' chunk");
  if (channels == 0) throw FormatError("malformed 'fmt ' chunk: zero channels");
  if (rate == 0) throw FormatError("malformed 'fmt ' chunk: zero sample rate");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw UnsupportedFormatError("unsupported WAV encoding: format " + std::to_string(format) + ", " +
                                 std::to_string(bits) + " bits (need 16-bit PCM or 32-bit float)");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(static_cast<Eigen::Index>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + (f * channels + c) * width;
      if (pcm16) {
        acc += static_cast<double>(static_cast<std::int16_t>(u16(p))) / 32768.0;
      } else {
        acc += static_cast<double>(std::bit_cast<float>(u32(p)));
      }
    }
    clip.samples(static_cast<Eigen::Index>(f)) = static_cast<float>(acc / channels);
  }
  if (!clip.samples.allFinite()) throw FormatError("malformed 'data' chunk: non-finite float samples");
  return clip;
}

AudioClip load_wav(const std::string& path) { return parse_wav(read_file(path)); }

std::string encode_wav(const AudioClip& clip, WavEncoding enc) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string out;
  if (enc == WavEncoding::Pcm16) {
    out = header(kFormatPcm, 1, static_cast<std::uint32_t>(clip.sample_rate), 16, n * 2);
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
      const double v = std::round(static_cast<double>(clip.samples(i)) * 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0))));
    }
  } else {
    out = header(kFormatFloat, 1, static_cast<std::uint32_t>(clip.sample_rate), 32, n * 4);
    for (Eigen::Index i = 0; i < clip.samples.size(); ++i) put32(out, std::bit_cast<std::uint32_t>(clip.samples(i)));
  }
  return out;
}

std::string encode_wav_float_interleaved(const Eigen::MatrixXf& frames_by_channel, int sample_rate) {
  const auto frames = static_cast<std::uint32_t>(frames_by_channel.rows());
  const auto ch = static_cast<std::uint16_t>(frames_by_channel.cols());
  std::string out = header(kFormatFloat, ch, static_cast<std::uint32_t>(sample_rate), 32, frames * ch * 4);
  for (Eigen::Index f = 0; f < frames_by_channel.rows(); ++f) {
    for (Eigen::Index c = 0; c < frames_by_channel.cols(); ++c) {
      put32(out, std::bit_cast<std::uint32_t>(frames_by_channel(f, c)));
    }
  }
  return out;
}

void save_wav(const std::string& path, const AudioClip& clip, WavEncoding enc) {
  write_file_atomic(path, encode_wav(clip, enc));
}

}  // namespace unicodec
