#include "unicodec/eval.hpp"

#include <cstdio>
#include <sstream>

#include "unicodec/resample.hpp"

namespace unicodec {

namespace {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> EvalReport::fields() const {
  std::map<std::string, std::string> f;
  f["tpf"] = std::to_string(tpf);
  f["tps"] = std::to_string(tps);
  f["dr"] = std::to_string(dr);
  f["clips"] = std::to_string(clips);
  f["mel_distance"] = format_number(mel_distance);
  f["stft_distance"] = format_number(stft_distance);
  f["utilization"] = format_number(utilization);
  for (const auto& [d, n] : domain_clips) f["clips." + std::string(to_string(d))] = std::to_string(n);
  for (const auto& [d, v] : domain_mel_distance) f["mel_distance." + std::string(to_string(d))] = format_number(v);
  for (const auto& [d, v] : domain_stft_distance) f["stft_distance." + std::string(to_string(d))] = format_number(v);
  for (const auto& [d, v] : region_utilization) f["utilization." + std::string(to_string(d))] = format_number(v);
  return f;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : fields()) os << k << '=' << v << '\n';
  return os.str();
}

EvalReport aggregate_report(const std::vector<AudioClip>& references, const std::vector<AudioClip>& reconstructions,
                            const std::vector<TokenStream>& streams, int sample_rate, int tokens_per_second) {
  if (references.empty()) throw InputError("evaluation needs at least one clip");
  if (references.size() != reconstructions.size()) {
    throw InputError("evaluation needs one reconstruction per reference clip");
  }
  if (tokens_per_second < 1 || sample_rate % tokens_per_second != 0) {
    throw InputError("sample rate must be a whole multiple of the token rate");
  }
  EvalReport r;
  r.tps = tokens_per_second;
  r.dr = sample_rate / tokens_per_second;
  r.clips = static_cast<int>(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    const double mel = mel_distance(references[i], reconstructions[i]);
    const double stft = stft_distance(references[i], reconstructions[i]);
    r.mel_distance += mel;
    r.stft_distance += stft;
    if (references[i].domain) {
      const Domain d = *references[i].domain;
      r.domain_clips[d] += 1;
      r.domain_mel_distance[d] += mel;
      r.domain_stft_distance[d] += stft;
    }
  }
  r.mel_distance /= r.clips;
  r.stft_distance /= r.clips;
  for (auto& [d, n] : r.domain_clips) {
    r.domain_mel_distance[d] /= n;
    r.domain_stft_distance[d] /= n;
  }
  if (!streams.empty()) {
    r.utilization = utilization(streams, std::nullopt);
    for (int d = 0; d < kDomainCount; ++d) {
      r.region_utilization[static_cast<Domain>(d)] = utilization(streams, static_cast<Domain>(d));
    }
  }
  return r;
}

template <typename S>
EvalReport evaluate(Codec<S>& model, const std::vector<AudioClip>& clips, const EvalOptions& opt,
                    std::vector<TokenStream>* streams_out) {
  if (clips.empty()) throw InputError("evaluation needs at least one clip");
  std::vector<AudioClip> refs, recons;
  std::vector<TokenStream> streams;
  for (const AudioClip& clip : clips) {
    AudioClip ref = clip.sample_rate == kModelSampleRate ? clip : resample(clip, kModelSampleRate);
    ref.domain = clip.domain;
    std::optional<Domain> d;
    if (opt.mode == EvalDomainMode::Labels) d = clip.domain;
    if (opt.mode == EvalDomainMode::Forced) d = opt.forced;
    TokenStream s = model.encode(ref, d);
    recons.push_back(model.decode(s));
    streams.push_back(std::move(s));
    refs.push_back(std::move(ref));
  }
  EvalReport r = aggregate_report(refs, recons, streams, kModelSampleRate,
                                  kModelSampleRate / model.config().encoder.hop());
  if (streams_out) *streams_out = std::move(streams);
  return r;
}

template EvalReport evaluate<float>(Codec<float>&, const std::vector<AudioClip>&, const EvalOptions&,
                                    std::vector<TokenStream>*);
template EvalReport evaluate<double>(Codec<double>&, const std::vector<AudioClip>&, const EvalOptions&,
                                     std::vector<TokenStream>*);

}  // namespace unicodec
