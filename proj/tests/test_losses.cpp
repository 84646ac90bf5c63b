#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "unicodec/grad_check.hpp"
#include "unicodec/losses.hpp"

using namespace unicodec;
using M = Matrix<double>;
using T = Tape<double>;

namespace {

M gaussian_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double std = 1.0) {
  std::normal_distribution<double> d(0.0, std);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

MaskSet mask_of(const std::vector<int>& masked, int frames) {
  MaskSet m;
  m.mask.assign(static_cast<std::size_t>(frames), false);
  for (int i : masked) m.mask[static_cast<std::size_t>(i)] = true;
  m.starts = masked;
  return m;
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

// Cross-entropy with every other masked step as a distractor.
double all_distractor_oracle(const M& q, const M& c, const std::vector<int>& masked, double divisor) {
  double total = 0;
  for (int t : masked) {
    const double pos = cosine(q.row(t), c.row(t)) / divisor;
    double denom = std::exp(pos);
    for (int s : masked)
      if (s != t) denom += std::exp(cosine(q.row(t), c.row(s)) / divisor);
    total += -(pos - std::log(denom));
  }
  return total / static_cast<double>(masked.size());
}

AudioClip clip_of(const Eigen::VectorXf& x, int rate = 24000) {
  AudioClip c;
  c.samples = x;
  c.sample_rate = rate;
  return c;
}

Eigen::VectorXf noise(std::uint64_t seed, Eigen::Index n, float std = 0.3f) {
  std::mt19937_64 g(seed);
  std::normal_distribution<float> d(0.0f, std);
  Eigen::VectorXf x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = d(g);
  return x;
}

}  // namespace

TEST_CASE("span masks follow the start-count and span rules") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const MaskSet m = sample_mask(100, {}, rng);
    CHECK(m.starts.size() == 10);
    CHECK(std::set<int>(m.starts.begin(), m.starts.end()).size() == 10);
    CHECK(m.masked_count() <= 50);
    CHECK(m.masked_count() >= 5);
    for (int t : m.masked_indices()) {
      bool covered = false;
      for (int s : m.starts) covered |= (t >= s && t < s + 5);
      CHECK(covered);
    }
  }
  CHECK(sample_mask(3, {}, rng).starts.size() == 1);
  CHECK(sample_mask(1, {}, rng).masked_count() == 1);
  CHECK_THROWS_AS(sample_mask(0, {}, rng), InputError);
  CHECK_THROWS_AS(sample_mask(10, {1.5, 5}, rng), ConfigError);
  CHECK_THROWS_AS(sample_mask(10, {0.1, 0}, rng), ConfigError);
}

TEST_CASE("masked fraction matches the exact coverage probability") {
  const int frames = 1000, span = 5, starts = 100;
  // P(frame t unmasked) = C(T - w_t, n) / C(T, n), w_t = number of start slots covering t.
  double expected = 0;
  for (int t = 0; t < frames; ++t) {
    const int w = std::min(t + 1, span);
    double unmasked = 1;
    for (int i = 0; i < starts; ++i) unmasked *= static_cast<double>(frames - w - i) / (frames - i);
    expected += 1 - unmasked;
  }
  expected /= frames;

  std::mt19937_64 rng(2);
  double observed = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) observed += sample_mask(frames, {}, rng).masked_count();
  observed /= static_cast<double>(trials) * frames;
  CHECK(std::abs(observed - expected) < 0.01);
  CHECK(expected == doctest::Approx(0.41).epsilon(0.02));
}

TEST_CASE("contrastive loss at the uniform-similarity point is log(K + 1)") {
  std::mt19937_64 rng(3);
  const M row = gaussian_matrix(rng, 1, 8);
  const M q = row.replicate(12, 1), c = (2.0 * row).replicate(12, 1);
  const MaskSet mask = mask_of({1, 2, 3, 4, 5, 6, 7, 8}, 12);
  for (int k : {1, 3, 7}) {
    ContrastiveConfig cfg;
    cfg.distractors = k;
    T t;
    const double l = contrastive_loss<double>(t.constant(q), t.constant(c), mask, cfg, rng).item();
    CHECK(l == doctest::Approx(std::log(k + 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("contrastive loss vanishes when positives dominate") {
  M q(2, 3), c(2, 3);
  q << 1, 0, 0, -1, 0, 0;
  c = q;
  ContrastiveConfig cfg;
  cfg.temperature = 0.01;
  std::mt19937_64 rng(4);
  T t;
  const double l = contrastive_loss<double>(t.constant(q), t.constant(c), mask_of({0, 1}, 2), cfg, rng).item();
  CHECK(l >= 0.0);
  CHECK(l < 1e-80);
}

TEST_CASE("contrastive loss matches a direct softmax cross-entropy") {
  std::mt19937_64 rng(5);
  const M q = gaussian_matrix(rng, 9, 8), c = gaussian_matrix(rng, 9, 8);
  const std::vector<int> masked = {0, 2, 3, 6, 8};
  const MaskSet mask = mask_of(masked, 9);
  ContrastiveConfig cfg;
  cfg.distractors = 4;
  T t;
  CHECK(contrastive_loss<double>(t.constant(q), t.constant(c), mask, cfg, rng).item() ==
        doctest::Approx(all_distractor_oracle(q, c, masked, 0.1)).epsilon(1e-10));
  cfg.divide_by_distractor_count = true;
  CHECK(contrastive_loss<double>(t.constant(q), t.constant(c), mask, cfg, rng).item() ==
        doctest::Approx(all_distractor_oracle(q, c, masked, 4.0)).epsilon(1e-10));
  cfg.distractors.reset();
  cfg.divide_by_distractor_count = false;
  CHECK(cfg.resolve_distractors(5) == 4);
  CHECK(cfg.resolve_distractors(500) == 100);
  CHECK(contrastive_loss<double>(t.constant(q), t.constant(c), mask, cfg, rng).item() ==
        doctest::Approx(all_distractor_oracle(q, c, masked, 0.1)).epsilon(1e-10));
}

TEST_CASE("distractors are drawn without replacement from other masked steps") {
  std::mt19937_64 rng(6);
  const M q = gaussian_matrix(rng, 30, 4), c = gaussian_matrix(rng, 30, 4);
  std::vector<int> masked;
  for (int i = 0; i < 30; i += 2) masked.push_back(i);
  const MaskSet mask = mask_of(masked, 30);
  ContrastiveConfig cfg;
  cfg.distractors = 3;
  // Every value must lie between the best and worst 3-distractor choices.
  double lo = 0, hi = 0;
  for (int t : masked) {
    std::vector<double> e;
    for (int s : masked)
      if (s != t) e.push_back(std::exp(cosine(q.row(t), c.row(s)) / 0.1));
    std::sort(e.begin(), e.end());
    const double pos = std::exp(cosine(q.row(t), c.row(t)) / 0.1);
    lo += std::log((pos + e[0] + e[1] + e[2]) / pos);
    hi += std::log((pos + e[e.size() - 1] + e[e.size() - 2] + e[e.size() - 3]) / pos);
  }
  lo /= masked.size();
  hi /= masked.size();
  std::set<double> seen;
  for (int trial = 0; trial < 20; ++trial) {
    T t;
    const double l = contrastive_loss<double>(t.constant(q), t.constant(c), mask, cfg, rng).item();
    CHECK(l >= lo - 1e-12);
    CHECK(l <= hi + 1e-12);
    seen.insert(l);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("contrastive loss needs more than K masked steps") {
  std::mt19937_64 rng(7);
  const M q = gaussian_matrix(rng, 6, 4);
  ContrastiveConfig cfg;
  cfg.distractors = 4;
  T t;
  CHECK_THROWS_AS(contrastive_loss<double>(t.constant(q), t.constant(q), mask_of({0, 1, 2, 3}, 6), cfg, rng),
                  InputError);
  cfg.distractors.reset();
  CHECK_THROWS_AS(contrastive_loss<double>(t.constant(q), t.constant(q), mask_of({2}, 6), cfg, rng), InputError);
  cfg.temperature = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("contrastive loss gradient with respect to q") {
  std::mt19937_64 g(8);
  const M q = gaussian_matrix(g, 7, 5), c = gaussian_matrix(g, 7, 5);
  const MaskSet mask = mask_of({0, 1, 3, 4, 6}, 7);
  ContrastiveConfig cfg;
  cfg.distractors = 2;
  const auto r = grad_check<double>(
      [&](T& t, Var<double> v) {
        std::mt19937_64 rng(9);
        return contrastive_loss<double>(v, t.constant(c), mask, cfg, rng);
      },
      q);
  CHECK_MESSAGE(r.passed, "max relative error " << r.max_rel_error);
  T t;
  Var<double> qv = t.leaf(q);
  std::mt19937_64 rng(9);
  t.backward(contrastive_loss<double>(qv, t.constant(c), mask, cfg, rng));
  for (int unmasked : {2, 5}) CHECK(t.grad(qv).row(unmasked).isZero(0));
}

TEST_CASE("reconstruction loss decomposition") {
  const MelFeatures<double> mel;
  std::mt19937_64 g(10);
  const M x = gaussian_matrix(g, 4000, 1, 0.2);
  T t;
  auto l0 = reconstruction_loss<double>(t.constant(x), t.constant(x), 45.0, mel);
  CHECK(l0.total.item() == 0.0);

  const M shifted = (x.array() + 0.05).matrix();
  auto l1 = reconstruction_loss<double>(t.constant(x), t.constant(shifted), 45.0, mel);
  CHECK(l1.time.item() == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(l1.total.item() == doctest::Approx(l1.time.item() + 45.0 * l1.mel.item()).epsilon(1e-14));

  const M other = gaussian_matrix(g, 4100, 1, 0.2);
  auto a = reconstruction_loss<double>(t.constant(x), t.constant(other), 45.0, mel);
  auto b = reconstruction_loss<double>(t.constant(x), t.constant(other), 90.0, mel);
  CHECK((b.total.item() - b.time.item()) == doctest::Approx(2.0 * (a.total.item() - a.time.item())).epsilon(1e-12));
  CHECK(a.mel.item() == b.mel.item());
  CHECK(a.time.item() == doctest::Approx((x - other.topRows(4000)).cwiseAbs().mean()).epsilon(1e-12));

  const AudioClip cx = clip_of(x.cast<float>()), co = clip_of(other.cast<float>());
  const ReconstructionValue v = reconstruction_loss(cx, co, 45.0);
  CHECK(v.total == doctest::Approx(a.total.item()).epsilon(1e-5));
  CHECK(kAcousticMelWeight == 45.0);
  CHECK(kFinetuneMelWeight == 450.0);
}

TEST_CASE("mel and STFT distances") {
  const AudioClip x = clip_of(noise(11, 12000)), y = clip_of(noise(12, 12000));
  CHECK(mel_distance(x, x) == 0.0);
  CHECK(stft_distance(x, x) == 0.0);
  CHECK(mel_distance(x, y) > 0.0);
  CHECK(stft_distance(x, y) > 0.0);
  CHECK(mel_distance(x, y) == doctest::Approx(mel_distance(y, x)).epsilon(1e-12));
  CHECK(stft_distance(x, y) == doctest::Approx(stft_distance(y, x)).epsilon(1e-12));

  const AudioClip silent = clip_of(Eigen::VectorXf::Zero(12000));
  CHECK(mel_distance(x, silent) == doctest::Approx(mel_spectrogram(x, MelConfig{}).cast<double>().mean()).epsilon(1e-6));
  double per_scale = 0;
  for (int fft : {512, 1024, 2048}) {
    StftConfig sc;
    sc.fft_size = fft;
    sc.hop = fft / 4;
    per_scale += stft_magnitude(x, sc).cast<double>().mean();
  }
  CHECK(stft_distance(x, silent) == doctest::Approx(per_scale / 3).epsilon(1e-6));

  CHECK_THROWS_AS(mel_distance(x, clip_of(noise(13, 12000), 16000)), InputError);
  CHECK_THROWS_AS(stft_distance(x, clip_of(noise(13, 12000), 16000)), InputError);
  CHECK_THROWS_AS(stft_distance(x, y, {}), InputError);
}
