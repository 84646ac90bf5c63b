#pragma once

// Codec evaluation: per-domain reconstruction distances, rate fields and
// codebook utilization, rendered as sorted key=value lines.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unicodec/codec.hpp"

namespace unicodec {

struct EvalReport {
  int tpf = 1;
  int tps = 75;
  int dr = 320;
  int clips = 0;
  double mel_distance = 0;   // mean over all clips
  double stft_distance = 0;  // mean over all clips
  std::map<Domain, int> domain_clips;
  std::map<Domain, double> domain_mel_distance;
  std::map<Domain, double> domain_stft_distance;
  double utilization = 0;
  std::map<Domain, double> region_utilization;

  std::map<std::string, std::string> fields() const;
  // One key=value per line, keys in lexicographic order.
  std::string to_text() const;
};

// Aggregates reference / reconstruction pairs (references carry the domain
// labels) and the token streams they produced.
EvalReport aggregate_report(const std::vector<AudioClip>& references, const std::vector<AudioClip>& reconstructions,
                            const std::vector<TokenStream>& streams, int sample_rate, int tokens_per_second);

enum class EvalDomainMode { None, Labels, Forced };

struct EvalOptions {
  EvalDomainMode mode = EvalDomainMode::None;
  Domain forced = Domain::Speech;
};

// Round-trips every clip through the codec. By default no domain ids are
// passed, so each frame searches the whole codebook.
template <typename S>
EvalReport evaluate(Codec<S>& model, const std::vector<AudioClip>& clips, const EvalOptions& opt = {},
                    std::vector<TokenStream>* streams_out = nullptr);

}  // namespace unicodec
