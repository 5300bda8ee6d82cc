// olvit command-line tool: gen-data, train, eval, generate, gradcheck, ablate.
//
// Exit codes: 0 success, 1 I/O or data failure, 2 usage or configuration error,
// 3 non-finite loss during training, 4 gradient check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "olvit/olvit.hpp"

namespace fs = std::filesystem;
using namespace olvit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitGradcheck = 4;

struct UsageError : Error {
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// --out falls back to $OLVIT_OUT_DIR.
std::string resolve_out(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("OLVIT_OUT_DIR"); env && *env) return env;
  throw UsageError("--out is required (or set OLVIT_OUT_DIR)");
}

// Flat flag overrides shared by the commands that build a model.
struct Overrides {
  std::string config;
  std::optional<std::string> mode, combiner;
  bool no_ost = false, no_lst = false;
  std::optional<std::size_t> steps, batch, total_steps, warmup;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;

  void attach(CLI::App* app, bool model_flags = true) {
    app->add_option("--config", config, "JSON run configuration");
    if (model_flags) {
      app->add_option("--mode", mode, "disc or gen")->check(CLI::IsMember({"disc", "gen", "discriminative", "generative"}));
      app->add_option("--combiner", combiner, "A, B or C")->check(CLI::IsMember({"A", "B", "C"}));
      app->add_flag("--no-ost", no_ost, "disable the object state tracker");
      app->add_flag("--no-lst", no_lst, "disable the language state tracker");
    }
    app->add_option("--steps", steps, "optimizer steps to run (0: schedule total)");
    app->add_option("--batch", batch, "episodes per step");
    app->add_option("--total-steps", total_steps, "schedule length");
    app->add_option("--warmup", warmup, "warmup steps");
    app->add_option("--lr", lr, "peak learning rate");
    app->add_option("--seed", seed, "training seed");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (mode) c.model.mode = (*mode == "disc" || *mode == "discriminative") ? Mode::kDiscriminative : Mode::kGenerative;
    if (combiner) c.model.combiner = parse_combiner(*combiner);
    if (no_ost) c.model.tracker.use_ost = false;
    if (no_lst) c.model.tracker.use_lst = false;
    if (steps) c.train.steps = *steps;
    if (batch) c.train.batch_size = *batch;
    if (total_steps) c.schedule.total_steps = *total_steps;
    if (warmup) c.schedule.warmup_steps = *warmup;
    if (lr) c.schedule.base_lr = *lr;
    if (seed) c.train.seed = *seed;
    // Round-trip through the validating reader.
    return run_config_from_json(to_json(c), RunConfig{});
  }
};

std::vector<DialogEpisode> read_split(const std::string& data_dir, const std::string& split) {
  const auto path = fs::path(data_dir) / (split + ".jsonl");
  if (!fs::exists(path)) throw IoError("dataset split not found: " + path.string());
  return read_dataset(path.string());
}

RunConfig config_from_checkpoint(const std::string& dir) {
  const auto manifest = read_checkpoint_manifest(dir);
  const auto& meta = manifest.at("metadata");
  if (!meta.contains("config")) throw IoError("checkpoint in " + dir + " carries no run configuration");
  return run_config_from_json(meta.at("config"), RunConfig{});
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(long long episodes, std::size_t turns, std::uint64_t seed, double coref_rate,
                 const std::string& config, const std::string& out_flag) {
  if (episodes <= 0) throw UsageError("--episodes must be >= 1");
  if (turns == 0) throw UsageError("--turns must be >= 1");
  if (coref_rate < 0.0 || coref_rate > 1.0) throw UsageError("--coref-rate must lie in [0, 1]");
  RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
  auto& g = c.data.generator;
  g.seed = seed;
  g.episode.n_turns = turns;
  g.episode.coref_rate = coref_rate;
  c.data.train_episodes = static_cast<std::size_t>(episodes);
  c.data.val_episodes = c.data.test_episodes = std::max<std::size_t>(1, c.data.train_episodes / 5);

  const fs::path out = resolve_out(out_flag);
  make_dir(out);
  write_json(out / "config.json", to_json(c));

  const std::size_t n_train = c.data.train_episodes, n_val = c.data.val_episodes, n_test = c.data.test_episodes;
  // Disjoint id ranges; every episode seed derives from (seed, id).
  const auto train = make_episodes(g, 0, n_train);
  const auto val = make_episodes(g, n_train, n_val);
  const auto test = make_episodes(g, n_train + n_val, n_test);
  write_dataset(train, (out / "train.jsonl").string());
  write_dataset(val, (out / "val.jsonl").string());
  write_dataset(test, (out / "test.jsonl").string());
  write_candidates(CandidateSet::standard(), (out / "candidates.txt").string());

  std::uint64_t h = dataset_hash(train);
  h = fnv1a(hex64(dataset_hash(val)), h);
  h = fnv1a(hex64(dataset_hash(test)), h);
  write_json(out / "manifest.json", {{"train", {{"episodes", n_train}, {"hash", hex64(dataset_hash(train))}}},
                                     {"val", {{"episodes", n_val}, {"hash", hex64(dataset_hash(val))}}},
                                     {"test", {{"episodes", n_test}, {"hash", hex64(dataset_hash(test))}}},
                                     {"dataset_hash", hex64(h)},
                                     {"candidate_set", CandidateSet::kVersion}});
  std::cout << "wrote " << n_train << "/" << n_val << "/" << n_test << " episodes to " << out.string() << "\n"
            << "dataset hash " << hex64(h) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(const Overrides& ov, const std::string& data_dir, const std::string& out_flag, const std::string& resume) {
  auto cfg = ov.resolve();
  const fs::path out = resolve_out(out_flag);
  make_dir(out);
  write_json(out / "config.json", to_json(cfg));

  const auto train = read_split(data_dir, "train");
  std::vector<DialogEpisode> val;
  if (cfg.train.eval_every) val = read_split(data_dir, "val");

  OlvitModel<float> model(cfg.model, cfg.train.seed);
  Trainer<float> trainer(model, cfg, train);
  if (!resume.empty()) {
    trainer.resume(resume);
    std::cout << "resumed from " << resume << " at step " << trainer.step() << "\n";
  }
  const nlohmann::json meta = {{"dataset_hash", hex64(dataset_hash(train))}, {"config_hash", hex64(config_hash(cfg))}};
  const auto total = cfg.train.steps ? cfg.train.steps : cfg.schedule.total_steps;
  std::cout << "training " << model.params().scalar_count() << " parameters for " << total << " steps (config "
            << hex64(config_hash(cfg)) << ")\n";

  MetricsLog metrics((out / "metrics.csv").string());
  StepLog last;
  while (trainer.step() < total) {
    try {
      last = trainer.run_step();
    } catch (const NumericError& e) {
      std::cerr << "error: " << e.what() << "\n"
                << "  step " << trainer.step() << ", lr " << lr_at(trainer.step() + 1, cfg.schedule)
                << ", last finite loss " << last.loss << "\n"
                << "  config " << (out / "config.json").string() << "\n";
      return kExitNumeric;
    }
    metrics.write(last);
    if (cfg.train.log_every && last.step % cfg.train.log_every == 0)
      std::cout << "step " << last.step << " lr " << last.lr << " loss " << last.loss << "\n";
    if (cfg.train.checkpoint_every && last.step % cfg.train.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step-" << std::setw(7) << std::setfill('0') << last.step;
      trainer.save((out / "checkpoints" / name.str()).string(), meta);
    }
    if (cfg.train.eval_every && last.step % cfg.train.eval_every == 0) {
      const auto report = evaluate_model(model, val, cfg.data.latent);
      std::cout << "step " << last.step << " val accuracy " << report.all.accuracy() << "\n";
    }
  }
  trainer.save((out / "final").string(), meta);
  std::cout << "final checkpoint " << (out / "final").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& out_flag, bool oracle) {
  const fs::path out = resolve_out(out_flag);
  const auto episodes = read_split(data_dir, split);
  EvalReport report;
  std::string tag;
  if (oracle) {
    report = accuracy_by_category(oracle_predictions(episodes), episodes);
    report.manifest["mode"] = "oracle";
    report.manifest["dataset_hash"] = hex64(dataset_hash(episodes));
    tag = "oracle";
  } else {
    if (checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --oracle)");
    if (!fs::exists(fs::path(checkpoint) / "manifest.json")) throw IoError("checkpoint not found: " + checkpoint);
    const auto cfg = config_from_checkpoint(checkpoint);
    OlvitModel<float> model(cfg.model, cfg.train.seed);
    load_checkpoint(checkpoint, model.params());
    report = evaluate_model(model, episodes, cfg.data.latent);
    report.manifest["config_hash"] = hex64(config_hash(cfg));
    report.manifest["seed"] = cfg.train.seed;
    report.manifest["checkpoint"] = checkpoint;
    tag = hex64(config_hash(cfg));
  }
  report.manifest["split"] = split;
  make_dir(out);
  const auto stem = "eval-" + split + "-" + tag;
  write_json(out / (stem + ".json"), report.to_json());
  write_text(out / (stem + ".md"), report.to_markdown());
  std::cout << "accuracy " << report.all.accuracy() << " (" << report.all.correct << "/" << report.all.total << ")";
  if (report.bleu4) std::cout << ", BLEU-4 " << *report.bleu4;
  std::cout << "\nreport " << (out / (stem + ".json")).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- generate

int cmd_generate(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
                 const std::string& out_file, std::size_t max_len) {
  if (!fs::exists(fs::path(checkpoint) / "manifest.json")) throw IoError("checkpoint not found: " + checkpoint);
  auto cfg = config_from_checkpoint(checkpoint);
  if (max_len) cfg.model.max_gen_len = max_len;
  OlvitModel<float> model(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, model.params());
  const auto episodes = read_split(data_dir, split);
  const auto& vocab = Vocabulary::standard();
  const auto& candidates = CandidateSet::standard();

  std::ofstream out(out_file, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_file);
  std::size_t lines = 0;
  for (const auto& ep : episodes) {
    const auto inputs = episode_inputs<float>(ep, model.config(), cfg.data.latent);
    std::vector<std::string> answers;
    if (model.discriminative()) {
      for (const auto& o : model.run_dialog(inputs)) answers.push_back(candidates.answers()[predict_answer(o.logits)]);
    } else {
      std::vector<std::vector<std::size_t>> tokens;
      model.run_dialog(inputs, false, &tokens);
      for (auto t : tokens) {
        if (!t.empty() && t.back() == Vocabulary::kEos) t.pop_back();
        answers.push_back(join_words(vocab.decode(t)));
      }
    }
    for (std::size_t t = 0; t < ep.turns.size(); ++t) {
      nlohmann::json line = {{"episode_id", ep.episode_id},
                             {"turn", t},
                             {"question", join_words(ep.turns[t].question)},
                             {"generated", answers[t]},
                             {"reference", ep.turns[t].answer}};
      out << line.dump() << '\n';
      ++lines;
    }
  }
  if (!out) throw IoError("write failed: " + out_file);
  std::cout << "wrote " << lines << " turns to " << out_file << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const std::string& mode, const std::string& combiner, double tolerance, std::uint64_t seed) {
  const auto m = (mode == "gen" || mode == "generative") ? Mode::kGenerative : Mode::kDiscriminative;
  const auto cfg = tiny_gradcheck_config(m, parse_combiner(combiner));
  const auto report = model_gradcheck(cfg, seed, 1e-5, tolerance);
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& p : report.params)
    std::cout << (p.passed ? "PASS " : "FAIL ") << std::left << std::setw(28) << p.name << " entries " << std::setw(5)
              << p.entries << " max rel err " << p.max_rel_error << "\n";
  std::size_t passed = 0;
  for (const auto& p : report.params) passed += p.passed;
  std::cout << passed << "/" << report.params.size() << " parameters passed, max rel err " << report.max_rel_error
            << " (tolerance " << tolerance << ")\n";
  return report.passed ? kExitOk : kExitGradcheck;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const Overrides& ov, const std::string& data_dir, const std::string& out_flag, const std::string& grid,
               const std::vector<std::size_t>& layers, const std::vector<std::size_t>& heads) {
  const auto cfg = ov.resolve();
  const fs::path out = resolve_out(out_flag);
  make_dir(out);
  write_json(out / "config.json", to_json(cfg));
  const auto train = read_split(data_dir, "train");
  const auto val = read_split(data_dir, "val");

  std::vector<AblationCell> cells;
  if (grid == "tracker") {
    cells = tracker_grid(cfg.model);
  } else if (grid == "combiner") {
    cells = combiner_grid(cfg.model);
  } else {
    cells = sweep_grid(cfg.model, layers, heads, {cfg.model.tracker.L_ost});
  }
  const auto rows = run_ablation(cells, cfg, train, val, 400, [](const AblationRow& r) {
    std::cout << r.name << ": " << (r.error.empty() ? "val accuracy " + std::to_string(r.val ? r.val->all.accuracy() : 0.0)
                                                    : "failed: " + r.error)
              << " (" << r.seconds << " s)\n";
  });
  const auto stem = "ablation-" + grid + "-" + hex64(config_hash(cfg));
  write_text(out / (stem + ".md"), ablation_markdown(rows));
  write_json(out / (stem + ".json"), ablation_json(rows));
  std::cout << ablation_markdown(rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"olvit: object and language state tracking for video dialog"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate synthetic train/val/test episodes");
  long long episodes = 2000;
  std::size_t turns = 5;
  std::uint64_t data_seed = 1;
  double coref_rate = 0.5;
  std::string gen_config, gen_out;
  gen->add_option("--episodes", episodes, "training episodes (val and test get one fifth each)");
  gen->add_option("--turns", turns, "turns per episode");
  gen->add_option("--seed", data_seed, "generator seed");
  gen->add_option("--coref-rate", coref_rate, "share of turns that refer back");
  gen->add_option("--config", gen_config, "JSON run configuration (scene settings)");
  gen->add_option("--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "train a model");
  Overrides train_ov;
  std::string train_data, train_out, resume;
  train_ov.attach(train);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_option("--resume", resume, "checkpoint directory to continue from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "val", eval_out;
  bool eval_oracle = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", eval_out, "report directory");
  eval->add_flag("--oracle", eval_oracle, "score the symbolic oracle instead of a model");

  auto* gen_cmd = app.add_subcommand("generate", "decode answers for every turn");
  std::string g_ckpt, g_data, g_split = "val", g_out;
  std::size_t g_max = 0;
  gen_cmd->add_option("--checkpoint", g_ckpt, "checkpoint directory")->required();
  gen_cmd->add_option("--data", g_data, "dataset directory")->required();
  gen_cmd->add_option("--split", g_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  gen_cmd->add_option("--out", g_out, "output JSONL file")->required();
  gen_cmd->add_option("--max-len", g_max, "token cap (default: model max_gen_len)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  std::string gc_mode = "disc", gc_combiner = "A";
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 1;
  grad->add_option("--mode", gc_mode, "disc or gen")->check(CLI::IsMember({"disc", "gen", "discriminative", "generative"}));
  grad->add_option("--combiner", gc_combiner, "A, B or C")->check(CLI::IsMember({"A", "B", "C"}));
  grad->add_option("--tolerance", gc_tol, "maximum relative error");
  grad->add_option("--seed", gc_seed, "parameter seed");

  auto* ablate = app.add_subcommand("ablate", "train and compare a grid of configurations");
  Overrides ab_ov;
  std::string ab_data, ab_out, ab_grid = "tracker";
  std::vector<std::size_t> ab_layers{1, 2, 3, 4}, ab_heads{2, 4, 6};
  ab_ov.attach(ablate);
  ablate->add_option("--data", ab_data, "dataset directory")->required();
  ablate->add_option("--out", ab_out, "output directory");
  ablate->add_option("--grid", ab_grid, "tracker, combiner or sweep")->check(CLI::IsMember({"tracker", "combiner", "sweep"}));
  ablate->add_option("--layers", ab_layers, "sweep: encoder depths");
  ablate->add_option("--heads", ab_heads, "sweep: head counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(episodes, turns, data_seed, coref_rate, gen_config, gen_out);
    if (*train) return cmd_train(train_ov, train_data, train_out, resume);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out, eval_oracle);
    if (*gen_cmd) return cmd_generate(g_ckpt, g_data, g_split, g_out, g_max);
    if (*grad) return cmd_gradcheck(gc_mode, gc_combiner, gc_tol, gc_seed);
    if (*ablate) return cmd_ablate(ab_ov, ab_data, ab_out, ab_grid, ab_layers, ab_heads);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
