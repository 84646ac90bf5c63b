#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "unicodec/spectral.hpp"
#include "unicodec/toy_data.hpp"
#include "unicodec/training.hpp"

using namespace unicodec;
namespace fs = std::filesystem;
using M = Matrix<double>;

namespace {

ModelConfig tiny_model() {
  ModelConfig m = ModelConfig::toy();
  m.encoder.conv_channels = {4, 8, 8, 16, 16};
  m.encoder.hidden = 16;
  m.encoder.heads = 2;
  m.encoder.layers = 1;
  m.encoder.mlp_dim = 32;
  m.encoder.moe.expert_dim = 32;
  m.decoder.hidden = 16;
  m.decoder.channels = {16, 8, 8, 4, 4};
  m.codebook_size = 64;
  return m;
}

StageConfig tiny_stage(Stage s, const fs::path& out) {
  StageConfig c = StageConfig::defaults(s);
  c.model = tiny_model();
  c.steps = 4;
  c.batch_size = 2;
  c.lr = s == Stage::Finetune ? 5e-5 : 1e-3;
  c.out_dir = out.string();
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unicodec_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string parameter_bytes(Codec<double>& model) {
  Checkpoint ck;
  model.save_to(ck);
  return ck.serialize();
}

// Scalar AdamW written out step by step.
struct ScalarAdamW {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    p = p * (1.0 - lr * wd);
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mhat = m / (1.0 - std::pow(b1, t));
    const double vhat = v / (1.0 - std::pow(b2, t));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("AdamW with zero gradient only decays") {
  Parameter<double> p("w", M::Constant(2, 3, 1.5));
  AdamW<double> opt;
  opt.step({&p}, 0.1);
  CHECK((p.value.array() - 1.5 * (1.0 - 0.1 * 0.01)).abs().maxCoeff() < 1e-15);
  CHECK(opt.steps() == 1);
  CHECK(opt.moments().at("w").m.isZero(0));
}

TEST_CASE("AdamW update approaches -lr * sign(g) under a constant gradient") {
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  AdamW<double> opt(cfg);
  M start(1, 2);
  start << 0.0, 0.0;
  Parameter<double> p("w", start);
  double before[2] = {0, 0};
  for (int i = 0; i < 3000; ++i) {
    p.grad << 0.7, -3.0;
    before[0] = p.value(0, 0);
    before[1] = p.value(0, 1);
    opt.step({&p}, 1e-3);
  }
  CHECK((p.value(0, 0) - before[0]) / 1e-3 == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK((p.value(0, 1) - before[1]) / 1e-3 == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("AdamW matches a scalar oracle over ten quadratic steps") {
  AdamWConfig cfg;
  cfg.beta1 = 0.8;
  cfg.beta2 = 0.95;
  cfg.weight_decay = 0.1;
  AdamW<double> opt(cfg);
  M start(1, 3);
  start << 1.0, -2.0, 0.5;
  const double curvature[3] = {1.0, 4.0, 0.25};
  Parameter<double> p("w", start);
  ScalarAdamW oracle[3];
  double expect[3] = {1.0, -2.0, 0.5};
  for (int step = 0; step < 10; ++step) {
    const double lr = cosine_lr(step, 10, 0.05, 0.001);
    for (int i = 0; i < 3; ++i) {
      p.grad(0, i) = curvature[i] * p.value(0, i);
      expect[i] = oracle[i].step(expect[i], curvature[i] * expect[i], lr, 0.8, 0.95, 1e-8, 0.1);
    }
    opt.step({&p}, lr);
    for (int i = 0; i < 3; ++i) CHECK(p.value(0, i) == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("AdamW skips frozen parameters and all-zero rows of row-sparse ones") {
  AdamWConfig cfg;
  cfg.row_sparse = {"table"};
  AdamW<double> opt(cfg);
  Parameter<double> table("table", M::Ones(4, 2));
  Parameter<double> frozen("frozen", M::Ones(2, 2), 2, false);
  table.grad.row(1) << 0.5, 0.0;
  frozen.grad.setOnes();
  opt.step({&table, &frozen}, 0.1);
  CHECK(table.value.row(0) == M::Ones(1, 2));
  CHECK(table.value.row(2) == M::Ones(1, 2));
  CHECK(table.value.row(3) == M::Ones(1, 2));
  CHECK(table.value(1, 0) < 1.0);
  CHECK(table.value(1, 1) < 1.0);  // decay applies to the whole touched row
  CHECK(opt.moments().at("table").m.row(0).isZero(0));
  CHECK(frozen.value == M::Ones(2, 2));
  CHECK(opt.moments().count("frozen") == 0);
}

TEST_CASE("a non-finite gradient aborts the step and names the parameter") {
  AdamW<double> opt;
  Parameter<double> a("alpha", M::Ones(1, 2)), b("beta", M::Ones(1, 2));
  a.grad.setConstant(1.0);
  b.grad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step({&a, &b}, 0.1);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
  CHECK(a.value == M::Ones(1, 2));
  CHECK(opt.steps() == 0);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 2e-4, 1e-6) == 2e-4);
  CHECK(cosine_lr(100, 100, 2e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 2e-4, 1e-6) == doctest::Approx((2e-4 + 1e-6) / 2).epsilon(1e-12));
  CHECK(cosine_lr(25, 100, 1.0, 0.0) == doctest::Approx(0.5 * (1 + std::cos(M_PI / 4))).epsilon(1e-12));
  double prev = 2.0;
  for (int s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(s, 100, 1.0, 0.1);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("stage defaults and validation") {
  const StageConfig a = StageConfig::defaults(Stage::Acoustic);
  CHECK(a.lr == 2e-4);
  CHECK(a.adam.beta1 == 0.9);
  CHECK(a.adam.beta2 == 0.999);
  CHECK(a.lambda_mel == 45.0);
  CHECK_FALSE(a.enable_mask);
  CHECK(a.max_clip_seconds == 10.0);
  const StageConfig s = StageConfig::defaults(Stage::Semantic);
  CHECK(s.enable_mask);
  CHECK(s.enable_contrastive);
  const StageConfig f = StageConfig::defaults(Stage::Finetune);
  CHECK(f.lr == 5e-5);
  CHECK(f.lambda_mel == 450.0);
  CHECK_NOTHROW(a.validate());
  CHECK_NOTHROW(s.validate());
  CHECK_NOTHROW(f.validate());

  StageConfig bad = f;
  bad.lr = 1e-4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = a;
  bad.enable_mask = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.enable_contrastive = false;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = a;
  bad.max_clip_seconds = 12;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_stage("semantic") == Stage::Semantic);
  CHECK_THROWS_AS(parse_stage("pretrain"), ConfigError);
}

TEST_CASE("JSON stage configs name offending keys") {
  auto message = [](const char* text) {
    try {
      stage_config_from_json(Json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"stage":"acoustic","learning_rate":0.1})").find("learning_rate") != std::string::npos);
  CHECK(message(R"({"stage":"acoustic","lr":"fast"})").find("lr") != std::string::npos);
  CHECK(message(R"({"stage":"acoustic","mask":{"ratio":0.2}})").find("mask.ratio") != std::string::npos);
  CHECK(message(R"({"stage":"acoustic","model":{"encoder":{"layer":3}}})").find("model.encoder.layer") !=
        std::string::npos);
  CHECK(message(R"({"stage":"finetune","lr":1e-4})").find("lr") != std::string::npos);
  CHECK(message(R"({"stage":"acoustic","betas":[0.9]})").find("betas") != std::string::npos);
  CHECK(message(R"({"stage":"acoustic","model":{"codebook_init_std":0}})").find("codebook_init_std") !=
        std::string::npos);

  const StageConfig c = stage_config_from_json(Json::parse(
      R"({"stage":"semantic","lr":3e-4,"betas":[0.8,0.99],"contrastive":{"distractors":8},"steps":20,
          "model":{"codebook_size":256,"codebook_init_std":0.5}})"));
  CHECK(c.stage == Stage::Semantic);
  CHECK(c.lr == 3e-4);
  CHECK(c.adam.beta1 == 0.8);
  CHECK(c.contrastive.distractors == 8);
  CHECK(c.steps == 20);
  CHECK(c.model.codebook_size == 256);
  CHECK(c.model.codebook_init_std == 0.5);
  CHECK(c.enable_mask);

  const StageConfig round = stage_config_from_json(to_json(c));
  CHECK(to_json(round) == to_json(c));

  const fs::path dir = scratch_dir("config");
  std::ofstream(dir / "stage.json") << R"({"manifest":"data/manifest.csv","out_dir":"run","init_checkpoint":"/abs/a.uckp"})";
  const StageConfig loaded = load_stage_config((dir / "stage.json").string());
  CHECK(loaded.manifest == (dir / "data/manifest.csv").string());
  CHECK(loaded.out_dir == (dir / "run").string());
  CHECK(loaded.init_checkpoint == "/abs/a.uckp");
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(load_stage_config((dir / "broken.json").string()), ConfigError);
}

TEST_CASE("stage ordering is enforced") {
  const fs::path dir = scratch_dir("order");
  CHECK_THROWS_AS(prepare_state<double>(tiny_stage(Stage::Semantic, dir)), StageOrderError);
  CHECK_THROWS_AS(prepare_state<double>(tiny_stage(Stage::Finetune, dir)), StageOrderError);

  TrainState<double> acoustic = prepare_state<double>(tiny_stage(Stage::Acoustic, dir));
  const auto data = gen_toy_dataset(7, 2, 0.2);
  CHECK_THROWS_AS(train_stage(data, tiny_stage(Stage::Semantic, dir), acoustic), StageOrderError);
  acoustic.save((dir / "acoustic.uckp").string());

  StageConfig sem = tiny_stage(Stage::Semantic, dir);
  sem.init_checkpoint = (dir / "acoustic.uckp").string();
  TrainState<double> semantic = prepare_state<double>(sem);
  CHECK(semantic.stage == Stage::Semantic);
  CHECK(semantic.step == 0);
  CHECK(parameter_bytes(semantic.model) == parameter_bytes(acoustic.model));

  StageConfig fine = tiny_stage(Stage::Finetune, dir);
  fine.init_checkpoint = sem.init_checkpoint;
  TrainState<double> ft = prepare_state<double>(fine);
  ft.save((dir / "finetune.uckp").string());
  sem.init_checkpoint = (dir / "finetune.uckp").string();
  CHECK_THROWS_AS(prepare_state<double>(sem), StageOrderError);
  sem.resume = true;
  CHECK_THROWS_AS(prepare_state<double>(sem), StageOrderError);
}

TEST_CASE("training lowers the loss and resumes bit-exactly") {
  const auto data = gen_toy_dataset(7, 2, 0.2);
  const fs::path dir = scratch_dir("resume");
  StageConfig cfg = tiny_stage(Stage::Acoustic, dir / "a");
  cfg.steps = 6;
  cfg.checkpoint_every = 3;
  TrainState<double> full = prepare_state<double>(cfg);
  const double before = dataset_reconstruction_loss(full.model, data, cfg.lambda_mel);
  std::vector<std::string> written;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const std::string& p) { written.push_back(p); };
  std::ostringstream log;
  hooks.log = &log;
  const auto uninterrupted = train_stage(data, cfg, full, hooks);
  REQUIRE(uninterrupted.size() == 6);
  CHECK(written == std::vector<std::string>{checkpoint_path(cfg.out_dir, 3), checkpoint_path(cfg.out_dir, 6)});
  CHECK(dataset_reconstruction_loss(full.model, data, cfg.lambda_mel) < before);
  std::size_t lines = 0;
  for (char ch : log.str()) lines += ch == '\n';
  CHECK(lines == 6);
  CHECK(Json::parse(log.str().substr(0, log.str().find('\n')))["step"] == 1);

  StageConfig again = cfg;
  again.out_dir = (dir / "b").string();
  again.init_checkpoint = checkpoint_path(cfg.out_dir, 3);
  again.resume = true;
  TrainState<double> resumed = prepare_state<double>(again);
  CHECK(resumed.step == 3);
  const auto tail = train_stage(data, again, resumed);
  REQUIRE(tail.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(tail[i].step == uninterrupted[i + 3].step);
    CHECK(tail[i].loss == uninterrupted[i + 3].loss);
    CHECK(tail[i].lr == uninterrupted[i + 3].lr);
  }
  CHECK(parameter_bytes(resumed.model) == parameter_bytes(full.model));
  CHECK(read_file(checkpoint_path(again.out_dir, 6)) == read_file(checkpoint_path(cfg.out_dir, 6)));
}

TEST_CASE("two runs with one seed give identical checkpoints") {
  const auto data = gen_toy_dataset(3, 1, 0.2);
  const fs::path dir = scratch_dir("determinism");
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    StageConfig cfg = tiny_stage(Stage::Acoustic, dir / std::to_string(run));
    cfg.steps = 2;
    TrainState<double> st = prepare_state<double>(cfg);
    train_stage(data, cfg, st);
    Checkpoint ck;
    st.save_to(ck);
    bytes[run] = ck.serialize();
  }
  CHECK(bytes[0] == bytes[1]);
}

TEST_CASE("semantic steps report the contrastive term") {
  const auto data = gen_toy_dataset(7, 2, 0.4);
  const fs::path dir = scratch_dir("semantic");
  TrainState<double> acoustic = prepare_state<double>(tiny_stage(Stage::Acoustic, dir));
  acoustic.save((dir / "a.uckp").string());
  StageConfig sem = tiny_stage(Stage::Semantic, dir);
  sem.init_checkpoint = (dir / "a.uckp").string();
  sem.steps = 2;
  TrainState<double> st = prepare_state<double>(sem);
  const auto metrics = train_stage(data, sem, st);
  REQUIRE(metrics.size() == 2);
  for (const StepMetrics& m : metrics) {
    CHECK(m.contrastive_clips == 2);
    CHECK(m.contrastive > 0.0);
    CHECK(m.loss > m.reconstruction);
    CHECK(to_json_line(m).find("\"contrastive\"") != std::string::npos);
  }
  const double l = dataset_contrastive_loss(st.model, data, sem.mask, sem.contrastive, 1);
  CHECK(std::isfinite(l));
  CHECK(l > 0.0);
}

TEST_CASE("divergence reports the last good checkpoint") {
  const auto data = gen_toy_dataset(7, 1, 0.2);
  const fs::path dir = scratch_dir("diverge");
  StageConfig cfg = tiny_stage(Stage::Acoustic, dir);
  cfg.steps = 3;
  cfg.checkpoint_every = 1;
  TrainState<double> st = prepare_state<double>(cfg);
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    if (m.step == 1) st.model.decoder().output_bias().value(0, 0) = std::numeric_limits<double>::infinity();
  };
  try {
    train_stage(data, cfg, st, hooks);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find(checkpoint_path(cfg.out_dir, 1)) != std::string::npos);
  }
}

TEST_CASE("finetune data is the lower-flatness half of the speech clips") {
  const auto data = gen_toy_dataset(7, 6, 0.3);
  const auto subset = cleanest_speech(data);
  CHECK(subset.size() == 3);
  std::vector<double> speech;
  for (const auto& c : data)
    if (c.domain == Domain::Speech) speech.push_back(spectral_flatness(c));
  std::sort(speech.begin(), speech.end());
  const double median = 0.5 * (speech[2] + speech[3]);
  for (const auto& c : subset) {
    CHECK(c.domain == Domain::Speech);
    CHECK(spectral_flatness(c) <= median);
  }
}
