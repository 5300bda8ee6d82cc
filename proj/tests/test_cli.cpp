#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(OLVIT_CLI_PATH) + " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "olvit_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small model and matching scene settings, shared by gen-data and train.
fs::path tiny_config(const fs::path& dir, const std::string& mode = "discriminative") {
  const nlohmann::json j = {
      {"model",
       {{"d", 12}, {"heads", 2}, {"L", 1}, {"L_ost", 1}, {"L_lst", 1}, {"H", 3}, {"T", 3}, {"N_o", 4}, {"d_w", 8},
        {"max_seq_len", 32}, {"mode", mode}}},
      {"schedule", {{"base_lr", 1e-3}, {"warmup_steps", 2}, {"total_steps", 50}}},
      {"train", {{"batch_size", 2}, {"log_every", 1}, {"checkpoint_every", 5}}},
      {"data", {{"num_frames", 6}, {"sampled_frames", 3}, {"slots", 4}, {"max_objects", 4}}}};
  const auto path = dir / ("config-" + mode + ".json");
  std::ofstream(path) << j.dump(2);
  return path;
}

fs::path tiny_data(const fs::path& dir, const fs::path& config) {
  const auto data = dir / "data";
  const auto r = run("gen-data --episodes 10 --turns 2 --seed 3 --config " + config.string() + " --out " + data.string());
  EXPECT_EQ(r.code, 0) << r.out;
  return data;
}

std::vector<std::string> losses(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<std::string> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST(CliGenData, SameSeedByteIdentical) {
  const auto dir = scratch("gen_det");
  ASSERT_EQ(run("gen-data --episodes 10 --seed 1 --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(run("gen-data --episodes 10 --seed 1 --out " + (dir / "b").string()).code, 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "candidates.txt", "manifest.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  ASSERT_EQ(run("gen-data --episodes 10 --seed 2 --out " + (dir / "c").string()).code, 0);
  EXPECT_NE(slurp(dir / "a" / "train.jsonl"), slurp(dir / "c" / "train.jsonl"));
}

TEST(CliGenData, ZeroEpisodesIsUsageError) {
  const auto dir = scratch("gen_zero");
  EXPECT_EQ(run("gen-data --episodes 0 --out " + dir.string()).code, 2);
  EXPECT_EQ(run("gen-data --coref-rate 1.5 --out " + dir.string()).code, 2);
  EXPECT_EQ(run("gen-data --bogus").code, 2);
}

TEST(CliGenData, DefaultSplitSizes) {
  const auto dir = scratch("gen_default");
  const auto r = run("gen-data --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(line_count(dir / "train.jsonl"), 2000u);
  EXPECT_EQ(line_count(dir / "val.jsonl"), 400u);
  EXPECT_EQ(line_count(dir / "test.jsonl"), 400u);
  EXPECT_EQ(line_count(dir / "candidates.txt"), 40u);
  EXPECT_NE(r.out.find("dataset hash"), std::string::npos);
}

TEST(CliGenData, OutFromEnvironment) {
  const auto dir = scratch("gen_env");
  EXPECT_EQ(run("gen-data --episodes 5", "OLVIT_OUT_DIR=").code, 2);
  const auto r = run("gen-data --episodes 5 --seed 1", "OLVIT_OUT_DIR=" + dir.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "train.jsonl"));
}

TEST(CliTrain, EchoesDefaultConfig) {
  const auto dir = scratch("train_echo");
  ASSERT_EQ(run("gen-data --episodes 1 --turns 1 --out " + (dir / "data").string()).code, 0);
  const auto r = run("train --data " + (dir / "data").string() + " --out " + (dir / "run").string() +
                     " --steps 1 --batch 1");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto cfg = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
  EXPECT_EQ(cfg["model"]["L"], 4);
  EXPECT_EQ(cfg["model"]["heads"], 6);
  EXPECT_EQ(cfg["model"]["d"], 216);
  EXPECT_EQ(cfg["model"]["k"], 2);
  EXPECT_EQ(cfg["model"]["H"], 7);
  EXPECT_EQ(run("train --data " + (dir / "data").string() + " --out " + (dir / "x").string() + " --bogus-flag").code, 2);
}

TEST(CliTrain, AblationFlagsAndCheckpoints) {
  const auto dir = scratch("train_flags");
  const auto config = tiny_config(dir);
  const auto data = tiny_data(dir, config);
  const auto r = run("train --config " + config.string() + " --data " + data.string() + " --out " +
                     (dir / "run").string() + " --no-ost --no-lst --steps 10");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto cfg = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
  EXPECT_EQ(cfg["model"]["use_ost"], false);
  EXPECT_EQ(cfg["model"]["use_lst"], false);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / "step-0000005" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "run" / "final" / "manifest.json"));
  const auto rows = losses(dir / "run" / "metrics.csv");
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[0].substr(0, 2), "1,");
}

TEST(CliTrain, ResumeReproducesLosses) {
  const auto dir = scratch("train_resume");
  const auto config = tiny_config(dir);
  const auto data = tiny_data(dir, config);
  const auto base = "train --config " + config.string() + " --data " + data.string();
  ASSERT_EQ(run(base + " --out " + (dir / "full").string() + " --steps 15").code, 0);
  const auto r = run(base + " --out " + (dir / "resumed").string() + " --steps 15 --resume " +
                     (dir / "full" / "checkpoints" / "step-0000005").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto full = losses(dir / "full" / "metrics.csv"), resumed = losses(dir / "resumed" / "metrics.csv");
  ASSERT_EQ(full.size(), 15u);
  ASSERT_EQ(resumed.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(resumed[i], full[5 + i]);
}

TEST(CliTrain, NonFiniteLossExitsThree) {
  const auto dir = scratch("train_nan");
  const auto config = tiny_config(dir);
  const auto data = tiny_data(dir, config);
  const auto r = run("train --config " + config.string() + " --data " + data.string() + " --out " +
                     (dir / "run").string() + " --steps 40 --lr 1e30 --warmup 1");
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("step"), std::string::npos);
}

TEST(CliTrain, MissingDatasetIsIoError) {
  const auto dir = scratch("train_missing");
  EXPECT_EQ(run("train --data /nonexistent/olvit --out " + dir.string()).code, 1);
}

TEST(CliEval, OracleScoresPerfect) {
  const auto dir = scratch("eval_oracle");
  ASSERT_EQ(run("gen-data --episodes 20 --seed 4 --out " + (dir / "data").string()).code, 0);
  const auto r = run("eval --oracle --data " + (dir / "data").string() + " --split val --out " + (dir / "rep").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("accuracy 1 "), std::string::npos) << r.out;
  const auto report = nlohmann::json::parse(slurp(dir / "rep" / "eval-val-oracle.json"));
  EXPECT_EQ(report["all"]["correct"], report["all"]["total"]);
}

TEST(CliEval, MissingCheckpointExitsOne) {
  const auto dir = scratch("eval_missing");
  ASSERT_EQ(run("gen-data --episodes 5 --out " + (dir / "data").string()).code, 0);
  EXPECT_EQ(run("eval --checkpoint /nonexistent/ckpt --data " + (dir / "data").string() + " --out " + dir.string()).code, 1);
  EXPECT_EQ(run("generate --checkpoint /nonexistent/ckpt --data " + (dir / "data").string() + " --out " +
                (dir / "g.jsonl").string()).code,
            1);
}

TEST(CliEval, TrainedCheckpointReport) {
  const auto dir = scratch("eval_trained");
  const auto config = tiny_config(dir);
  const auto data = tiny_data(dir, config);
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --out " + (dir / "run").string() +
                " --steps 3").code,
            0);
  const auto r = run("eval --checkpoint " + (dir / "run" / "final").string() + " --data " + data.string() + " --out " +
                     (dir / "rep").string());
  ASSERT_EQ(r.code, 0) << r.out;
  bool found = false;
  for (const auto& e : fs::directory_iterator(dir / "rep")) {
    if (e.path().extension() != ".json") continue;
    const auto report = nlohmann::json::parse(slurp(e.path()));
    EXPECT_EQ(report["manifest"]["seed"], 1);
    EXPECT_TRUE(report["manifest"].contains("config_hash"));
    found = true;
  }
  EXPECT_TRUE(found);
}

TEST(CliGenerate, GenerativeCheckpointRespectsCap) {
  const auto dir = scratch("generate");
  const auto config = tiny_config(dir, "generative");
  const auto data = tiny_data(dir, config);
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --out " + (dir / "run").string() +
                " --steps 2").code,
            0);
  const auto out = dir / "gen.jsonl";
  const auto r = run("generate --checkpoint " + (dir / "run" / "final").string() + " --data " + data.string() +
                     " --split val --max-len 3 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(out);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    std::istringstream words(j["generated"].get<std::string>());
    std::size_t n = 0;
    for (std::string w; words >> w;) ++n;
    EXPECT_LE(n, 3u) << line;
    EXPECT_TRUE(j.contains("reference"));
  }
  EXPECT_EQ(lines, 2u * 2u);
}

TEST(CliGradcheck, TinyModelPasses) {
  const auto r = run("gradcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("parameters passed"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL "), std::string::npos);
  EXPECT_EQ(run("gradcheck --tolerance 1e-300").code, 4);
}

TEST(CliAblate, TrackerGridTable) {
  const auto dir = scratch("ablate");
  const auto config = tiny_config(dir);
  const auto data = tiny_data(dir, config);
  const auto r = run("ablate --grid tracker --config " + config.string() + " --data " + data.string() + " --out " +
                     (dir / "out").string() + " --steps 2");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* name : {"no-tracker", "OST-only", "LST-only", "full"}) EXPECT_NE(r.out.find(name), std::string::npos) << name;
}
