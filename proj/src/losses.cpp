#include "unicodec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unicodec {

void MaskSpec::validate() const {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("mask.p must lie in (0, 1)");
  if (span < 1) throw ConfigError("mask.span must be >= 1");
}

int MaskSet::masked_count() const { return static_cast<int>(std::count(mask.begin(), mask.end(), true)); }

std::vector<int> MaskSet::masked_indices() const {
  std::vector<int> idx;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) idx.push_back(static_cast<int>(t));
  }
  return idx;
}

namespace {

// First `k` entries of `pool` become a uniform sample without replacement.
void partial_shuffle(std::vector<int>& pool, int k, std::mt19937_64& rng) {
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
}

}  // namespace

MaskSet sample_mask(int frames, const MaskSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (frames < 1) throw InputError("sample_mask needs at least one frame");
  const int n_starts = std::min(frames, std::max(1, static_cast<int>(std::lround(spec.p * frames))));
  std::vector<int> pool(static_cast<std::size_t>(frames));
  std::iota(pool.begin(), pool.end(), 0);
  partial_shuffle(pool, n_starts, rng);
  MaskSet m;
  m.mask.assign(static_cast<std::size_t>(frames), false);
  m.starts.assign(pool.begin(), pool.begin() + n_starts);
  for (int s : m.starts) {
    for (int t = s; t < std::min(s + spec.span, frames); ++t) m.mask[static_cast<std::size_t>(t)] = true;
  }
  return m;
}

void ContrastiveConfig::validate() const {
  if (distractors && *distractors < 1) throw ConfigError("contrastive.distractors must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("contrastive.temperature must be positive");
}

int ContrastiveConfig::resolve_distractors(int masked) const {
  return distractors ? *distractors : std::min(masked - 1, 100);
}

template <typename S>
Var<S> contrastive_loss(Var<S> q, Var<S> c, const MaskSet& mask, const ContrastiveConfig& cfg,
                        std::mt19937_64& rng) {
  cfg.validate();
  if (q.rows() != c.rows() || q.cols() != c.cols()) {
    throw DimensionError("contrastive_loss: q " + shape_of(q.value()) + " vs c " + shape_of(c.value()));
  }
  if (static_cast<Eigen::Index>(mask.mask.size()) != q.rows()) {
    throw DimensionError("contrastive_loss: mask covers " + std::to_string(mask.mask.size()) + " frames, inputs have " +
                         std::to_string(q.rows()));
  }
  const std::vector<int> masked = mask.masked_indices();
  const int m = static_cast<int>(masked.size());
  const int k = cfg.resolve_distractors(m);
  if (k < 1 || m < k + 1) {
    throw InputError("contrastive loss needs more than " + std::to_string(std::max(k, 1)) + " masked steps, got " +
                     std::to_string(m) + "; use longer inputs or fewer distractors");
  }

  std::vector<Eigen::Index> rows(masked.begin(), masked.end());
  Var<S> qn = ad::l2_normalize_rows(ad::gather_rows(q, rows));
  Var<S> cn = ad::l2_normalize_rows(c);

  // slot 0 is the positive; slots 1..k are distractors.
  std::vector<std::vector<Eigen::Index>> slots(static_cast<std::size_t>(k + 1));
  std::vector<int> pool;
  for (int i = 0; i < m; ++i) {
    slots[0].push_back(masked[static_cast<std::size_t>(i)]);
    pool.clear();
    for (int j = 0; j < m; ++j) {
      if (j != i) pool.push_back(masked[static_cast<std::size_t>(j)]);
    }
    partial_shuffle(pool, k, rng);
    for (int d = 0; d < k; ++d) slots[static_cast<std::size_t>(d + 1)].push_back(pool[static_cast<std::size_t>(d)]);
  }
  std::vector<Var<S>> logits;
  logits.reserve(slots.size());
  for (const auto& s : slots) logits.push_back(ad::sum_cols(ad::mul(qn, ad::gather_rows(cn, s))));
  const S divisor = cfg.divide_by_distractor_count ? static_cast<S>(k) : static_cast<S>(cfg.temperature);
  Var<S> lsm = ad::log_softmax_rows(ad::scale(ad::concat_cols(logits), S(1) / divisor));
  return ad::scale(ad::sum(ad::slice_cols(lsm, 0, 1)), S(-1) / static_cast<S>(m));
}

template <typename S>
MelFeatures<S>::MelFeatures(const MelConfig& cfg, int rate)
    : config(cfg),
      sample_rate(rate),
      filterbank(mel_filterbank<S>(cfg, rate)),
      window(make_window<S>(cfg.stft.window, cfg.stft.fft_size)) {}

template <typename S>
Var<S> MelFeatures<S>::operator()(Var<S> signal) const {
  Var<S> mag = ad::stft_magnitude(signal, window, config.stft.fft_size, config.stft.hop);
  return ad::matmul_nt(mag, signal.tape->constant(filterbank));
}

template <typename S>
ReconstructionTerms<S> reconstruction_loss(Var<S> x, Var<S> x_hat, S lambda_mel, const MelFeatures<S>& mel) {
  if (x.cols() != 1 || x_hat.cols() != 1) {
    throw DimensionError("reconstruction_loss expects N x 1 signals, got " + shape_of(x.value()) + " and " +
                         shape_of(x_hat.value()));
  }
  const Eigen::Index n = std::min(x.rows(), x_hat.rows());
  if (n < 1) throw InputError("reconstruction_loss on empty signal");
  Var<S> a = x.rows() == n ? x : ad::slice_rows(x, 0, n);
  Var<S> b = x_hat.rows() == n ? x_hat : ad::slice_rows(x_hat, 0, n);
  ReconstructionTerms<S> r;
  r.time = ad::mean(ad::abs(ad::sub(b, a)));
  r.mel = ad::mean(ad::abs(ad::sub(mel(b), mel(a))));
  r.total = ad::add(r.time, ad::scale(r.mel, lambda_mel));
  return r;
}

namespace {

void require_same_rate(const AudioClip& x, const AudioClip& y) {
  if (x.sample_rate != y.sample_rate) {
    throw InputError("sample rate mismatch: " + std::to_string(x.sample_rate) + " Hz vs " +
                     std::to_string(y.sample_rate) + " Hz");
  }
}

Eigen::Index common_length(const AudioClip& x, const AudioClip& y) { return std::min(x.size(), y.size()); }

}  // namespace

ReconstructionValue reconstruction_loss(const AudioClip& x, const AudioClip& x_hat, double lambda_mel) {
  require_same_rate(x, x_hat);
  const Eigen::Index n = common_length(x, x_hat);
  if (n < 1) throw InputError("reconstruction_loss on empty signal");
  const Eigen::VectorXd a = x.samples.head(n).cast<double>();
  const Eigen::VectorXd b = x_hat.samples.head(n).cast<double>();
  ReconstructionValue v;
  v.time = (b - a).cwiseAbs().mean();
  MelConfig cfg;
  v.mel = (mel_spectrogram(b, cfg, x.sample_rate) - mel_spectrogram(a, cfg, x.sample_rate)).cwiseAbs().mean();
  v.total = v.time + lambda_mel * v.mel;
  return v;
}

double mel_distance(const AudioClip& x, const AudioClip& x_hat) {
  require_same_rate(x, x_hat);
  const Eigen::Index n = common_length(x, x_hat);
  const MelConfig cfg;
  const Eigen::VectorXd a = x.samples.head(n).cast<double>();
  const Eigen::VectorXd b = x_hat.samples.head(n).cast<double>();
  return (mel_spectrogram(a, cfg, x.sample_rate) - mel_spectrogram(b, cfg, x.sample_rate)).cwiseAbs().mean();
}

double stft_distance(const AudioClip& x, const AudioClip& x_hat, const std::vector<int>& scales) {
  require_same_rate(x, x_hat);
  if (scales.empty()) throw InputError("stft_distance needs at least one scale");
  const Eigen::Index n = common_length(x, x_hat);
  const Eigen::VectorXd a = x.samples.head(n).cast<double>();
  const Eigen::VectorXd b = x_hat.samples.head(n).cast<double>();
  double total = 0.0;
  for (int fft : scales) {
    const StftConfig cfg{fft, fft / 4, WindowKind::Hann};
    total += (stft_magnitude(a, cfg) - stft_magnitude(b, cfg)).cwiseAbs().mean();
  }
  return total / static_cast<double>(scales.size());
}

template Var<float> contrastive_loss<float>(Var<float>, Var<float>, const MaskSet&, const ContrastiveConfig&,
                                            std::mt19937_64&);
template Var<double> contrastive_loss<double>(Var<double>, Var<double>, const MaskSet&, const ContrastiveConfig&,
                                              std::mt19937_64&);
template struct MelFeatures<float>;
template struct MelFeatures<double>;
template ReconstructionTerms<float> reconstruction_loss<float>(Var<float>, Var<float>, float,
                                                                const MelFeatures<float>&);
template ReconstructionTerms<double> reconstruction_loss<double>(Var<double>, Var<double>, double,
                                                                  const MelFeatures<double>&);

}  // namespace unicodec
