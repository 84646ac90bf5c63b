#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unicodec/audio.hpp"

namespace unicodec {

// Synthetic three-domain corpus at 24 kHz, peak-normalized to 0.95:
//   speech - harmonic source with formant weighting, slow pitch glide and
//            syllable-rate amplitude modulation, plus noise at 10-40 dB SNR
//   music  - sustained chords of harmonic notes
//   sound  - band-pass filtered noise bursts
// Output order is speech..., music..., sound..., fully determined by seed.
std::vector<AudioClip> gen_toy_dataset(std::uint64_t seed, int per_domain, double duration_seconds);

struct ManifestEntry {
  std::string path;  // as resolved against the manifest's directory
  Domain domain = Domain::Speech;
};

// One "path,domain" record per line; relative paths resolve against the
// manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace unicodec
