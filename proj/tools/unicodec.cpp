// unicodec command-line tool: gen-data, train, encode, decode, eval.
//
// Log verbosity comes from UNICODEC_LOG (quiet, info, debug; default info).
// Failures print "error: <category>: <message>" on stderr and exit nonzero.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "unicodec/codec.hpp"
#include "unicodec/eval.hpp"
#include "unicodec/resample.hpp"
#include "unicodec/toy_data.hpp"
#include "unicodec/training.hpp"
#include "unicodec/wav.hpp"

namespace fs = std::filesystem;
using namespace unicodec;

namespace {

enum class LogLevel { Quiet, Info, Debug };

LogLevel log_level() {
  const char* env = std::getenv("UNICODEC_LOG");
  if (!env) return LogLevel::Info;
  const std::string v = env;
  if (v == "quiet") return LogLevel::Quiet;
  if (v == "debug") return LogLevel::Debug;
  if (v == "info" || v.empty()) return LogLevel::Info;
  throw ConfigError("UNICODEC_LOG must be quiet, info or debug, got '" + v + "'");
}

void info(const std::string& msg) {
  if (log_level() != LogLevel::Quiet) std::cerr << msg << '\n';
}

std::optional<Domain> optional_domain(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_domain(s);
}

Codec<float> load_model(const std::string& ckpt) {
  if (ckpt.empty()) throw InputError("--ckpt is required");
  return Codec<float>::load_from(Checkpoint::load(ckpt));
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

int cmd_gen_data(std::uint64_t seed, const std::string& out, int per_domain, double duration) {
  if (out.empty()) throw InputError("--out is required");
  if (per_domain < 1) throw InputError("--per-domain must be >= 1");
  if (!(duration > 0.0)) throw InputError("--duration must be positive");
  fs::create_directories(out);
  const auto clips = gen_toy_dataset(seed, per_domain, duration);
  std::vector<ManifestEntry> entries;
  std::map<Domain, int> counters;
  for (const AudioClip& c : clips) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03d.wav", std::string(to_string(*c.domain)).c_str(), counters[*c.domain]++);
    save_wav((fs::path(out) / name).string(), c, WavEncoding::Float32);
    entries.push_back({name, *c.domain});
  }
  const std::string manifest = (fs::path(out) / "manifest.csv").string();
  write_manifest(manifest, entries);
  info("wrote " + std::to_string(clips.size()) + " clips and " + manifest);
  return 0;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  if (config.empty()) throw InputError("--config is required");
  StageConfig cfg = load_stage_config(config);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  if (cfg.manifest.empty()) throw ConfigError("manifest must name the training manifest");
  const auto dataset = load_manifest_clips(cfg.manifest);
  TrainState<float> state = prepare_state<float>(cfg);
  fs::create_directories(cfg.out_dir);

  std::ofstream log((fs::path(cfg.out_dir) / "train_log.jsonl").string(), state.step > 0 ? std::ios::app : std::ios::trunc);
  const LogLevel level = log_level();
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_step = [&](const StepMetrics& m) {
    if (level == LogLevel::Debug || (level == LogLevel::Info && (m.step % 10 == 0 || m.step == cfg.steps))) {
      std::cerr << to_json_line(m) << '\n';
    }
  };
  hooks.on_checkpoint = [&](const std::string& p) {
    if (level == LogLevel::Debug) std::cerr << "checkpoint " << p << '\n';
  };
  train_stage(dataset, cfg, state, hooks);
  const std::string final_path = final_checkpoint_path(cfg.out_dir);
  state.save(final_path);
  info("wrote " + final_path);
  return 0;
}

int cmd_encode(const std::string& ckpt, const std::string& in, const std::string& out, const std::string& domain) {
  if (in.empty() || out.empty()) throw InputError("--in and --out are required");
  Codec<float> model = load_model(ckpt);
  const TokenStream s = model.encode(load_wav(in), optional_domain(domain));
  ensure_parent(out);
  save_token_stream(out, s);
  info("wrote " + std::to_string(s.ids.size()) + " tokens to " + out);
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& in, const std::string& out) {
  if (in.empty() || out.empty()) throw InputError("--in and --out are required");
  Codec<float> model = load_model(ckpt);
  const AudioClip clip = model.decode(load_token_stream(in));
  ensure_parent(out);
  save_wav(out, clip, WavEncoding::Float32);
  info("wrote " + std::to_string(clip.size()) + " samples to " + out);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& domain, const std::string& out) {
  if (manifest.empty()) throw InputError("--manifest is required");
  Codec<float> model = load_model(ckpt);
  std::vector<AudioClip> clips;
  for (const ManifestEntry& e : read_manifest(manifest)) {
    AudioClip c = load_wav(e.path);
    c.domain = e.domain;
    clips.push_back(std::move(c));
  }
  if (clips.empty()) throw InputError("manifest " + manifest + " lists no clips");
  EvalOptions opt;
  if (domain == "label") {
    opt.mode = EvalDomainMode::Labels;
  } else if (!domain.empty()) {
    opt.mode = EvalDomainMode::Forced;
    opt.forced = parse_domain(domain);
  }
  const std::string text = evaluate(model, clips, opt).to_text();
  if (out.empty()) {
    std::cout << text;
  } else {
    ensure_parent(out);
    write_file_atomic(out, text);
    info("wrote " + out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniCodec toy codec: data generation, training, tokenization and evaluation"};
  app.require_subcommand(1);

  std::uint64_t seed = 7;
  std::string out, config, ckpt, in, domain, manifest;
  int per_domain = 4;
  double duration = 1.0;

  auto* gen = app.add_subcommand("gen-data", "Synthesize the three-domain toy dataset");
  gen->add_option("--seed", seed, "Dataset seed")->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--per-domain", per_domain, "Clips per domain")->capture_default_str();
  gen->add_option("--duration", duration, "Clip length in seconds")->capture_default_str();

  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Run one training stage from a JSON config");
  train->add_option("--config", config, "Stage config (JSON)")->required();
  train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--out", out, "Override the output directory");

  auto* enc = app.add_subcommand("encode", "WAV to token file");
  enc->add_option("--ckpt", ckpt, "Model checkpoint")->required();
  enc->add_option("--in", in, "Input WAV")->required();
  enc->add_option("--out", out, "Output token file")->required();
  enc->add_option("--domain", domain, "Restrict codes to a domain region (speech, music, sound)");

  auto* dec = app.add_subcommand("decode", "Token file to 24 kHz WAV");
  dec->add_option("--ckpt", ckpt, "Model checkpoint")->required();
  dec->add_option("--in", in, "Input token file")->required();
  dec->add_option("--out", out, "Output WAV")->required();

  auto* ev = app.add_subcommand("eval", "Round-trip a manifest and report distances");
  ev->add_option("--ckpt", ckpt, "Model checkpoint")->required();
  ev->add_option("--manifest", manifest, "Evaluation manifest")->required();
  ev->add_option("--domain", domain, "Domain ids: speech, music, sound, or label for per-clip labels");
  ev->add_option("--out", out, "Report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    log_level();
    if (*gen) return cmd_gen_data(seed, out, per_domain, duration);
    if (*train) return cmd_train(config, train_seed, out);
    if (*enc) return cmd_encode(ckpt, in, out, domain);
    if (*dec) return cmd_decode(ckpt, in, out);
    if (*ev) return cmd_eval(ckpt, manifest, domain, out);
  } catch (const unicodec::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
