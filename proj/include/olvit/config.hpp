#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "olvit/dialog.hpp"
#include "olvit/encoders.hpp"
#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

enum class CombinerVariant { kA, kB, kC };
enum class Mode { kDiscriminative, kGenerative };
enum class LmMode { kFixture, kExtraLayers };

inline std::string to_string(CombinerVariant v) {
  switch (v) {
    case CombinerVariant::kA: return "A";
    case CombinerVariant::kB: return "B";
    case CombinerVariant::kC: return "C";
  }
  return "?";
}
inline std::string to_string(Mode m) { return m == Mode::kDiscriminative ? "discriminative" : "generative"; }
inline std::string to_string(LmMode m) { return m == LmMode::kFixture ? "fixture" : "extra_layers"; }

inline CombinerVariant parse_combiner(const std::string& s) {
  if (s == "A" || s == "a") return CombinerVariant::kA;
  if (s == "B" || s == "b") return CombinerVariant::kB;
  if (s == "C" || s == "c") return CombinerVariant::kC;
  throw ConfigError("unknown combiner variant: " + s);
}
inline Mode parse_mode(const std::string& s) {
  if (s == "discriminative" || s == "disc") return Mode::kDiscriminative;
  if (s == "generative" || s == "gen") return Mode::kGenerative;
  throw ConfigError("unknown mode: " + s);
}
inline LmMode parse_lm_mode(const std::string& s) {
  if (s == "fixture") return LmMode::kFixture;
  if (s == "extra_layers") return LmMode::kExtraLayers;
  throw ConfigError("unknown lm_mode: " + s);
}

struct TrackerConfig {
  std::size_t L_ost = 2;
  std::size_t L_lst = 2;
  std::size_t k = 2;
  std::size_t H = 7;
  bool use_ost = true;
  bool use_lst = true;
  bool separators = false;      // [SEP] after every history turn
  bool turn_embedding = false;  // learnable embedding of each history turn's age
};

struct ModelConfig {
  std::size_t L = 4;
  std::size_t heads = 6;
  std::size_t d = 216;
  TrackerConfig tracker;
  CombinerVariant combiner = CombinerVariant::kA;
  std::size_t combiner_c_layers = 1;
  Mode mode = Mode::kDiscriminative;
  std::size_t N = 40;
  std::size_t vocab_size = Vocabulary::standard().size();
  std::size_t max_gen_len = 40;
  std::size_t max_seq_len = 64;
  std::size_t T = 20;
  std::size_t N_o = 12;
  std::size_t d_w = 768;
  std::size_t d_obj = 16;
  bool ffn = false;
  double dropout = 0.0;
  LmMode lm_mode = LmMode::kFixture;
  std::size_t lm_extra_layers = 2;
  std::uint64_t embed_seed = 7;
  bool bptt = false;  // backpropagate through earlier turns' tracker updates
  bool single_stream_decoder = false;  // decoder self-attends over [encoder rows ; tokens] instead of cross-attending

  void validate() const {
    if (d == 0 || heads == 0 || d % heads) throw ConfigError("d must be a positive multiple of heads");
    if (L == 0) throw ConfigError("L must be >= 1");
    if (tracker.k == 0) throw ConfigError("k must be >= 1");
    if (tracker.H == 0) throw ConfigError("H must be >= 1");
    if (tracker.use_ost && tracker.L_ost == 0) throw ConfigError("L_ost must be >= 1 when the OST is enabled");
    if (tracker.use_lst && tracker.L_lst == 0) throw ConfigError("L_lst must be >= 1 when the LST is enabled");
    if (T == 0 || N_o == 0) throw ConfigError("T and N_o must be >= 1");
    if (N == 0) throw ConfigError("N must be >= 1");
    if (vocab_size < Vocabulary::standard().size()) throw ConfigError("vocab_size smaller than the vocabulary");
    if (d_obj < kLatentMinWidth) throw ConfigError("d_obj must be >= 16");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (max_gen_len == 0) throw ConfigError("max_gen_len must be >= 1");
    if (combiner == CombinerVariant::kC && combiner_c_layers == 0) throw ConfigError("combiner_c_layers must be >= 1");
  }
};

struct ScheduleConfig {
  double base_lr = 1e-4;
  std::size_t warmup_steps = 4000;
  std::size_t total_steps = 200000;

  void validate() const {
    if (warmup_steps >= total_steps) throw ConfigError("warmup_steps must be < total_steps");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  }
};

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // global-norm clip, 0 disables
};

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t steps = 0;  // 0 trains until schedule.total_steps
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 1000;
  std::size_t eval_every = 0;
  bool slot_shuffle = false;  // permute object slots per training sample
};

struct DataConfig {
  std::size_t train_episodes = 2000;
  std::size_t val_episodes = 400;
  std::size_t test_episodes = 400;
  DatasetConfig generator;
  LatentConfig latent;
};

struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  OptimConfig optim;
  TrainConfig train;
  DataConfig data;
};

namespace detail {

// Reads fields of one JSON object, rejecting keys nobody asked for.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key: " + where_ + "." + k);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"L", m.L},
          {"heads", m.heads},
          {"d", m.d},
          {"L_ost", m.tracker.L_ost},
          {"L_lst", m.tracker.L_lst},
          {"k", m.tracker.k},
          {"H", m.tracker.H},
          {"use_ost", m.tracker.use_ost},
          {"use_lst", m.tracker.use_lst},
          {"lst_separators", m.tracker.separators},
          {"lst_turn_embedding", m.tracker.turn_embedding},
          {"combiner", to_string(m.combiner)},
          {"combiner_c_layers", m.combiner_c_layers},
          {"mode", to_string(m.mode)},
          {"N", m.N},
          {"vocab_size", m.vocab_size},
          {"max_gen_len", m.max_gen_len},
          {"max_seq_len", m.max_seq_len},
          {"T", m.T},
          {"N_o", m.N_o},
          {"d_w", m.d_w},
          {"d_obj", m.d_obj},
          {"ffn", m.ffn},
          {"dropout", m.dropout},
          {"lm_mode", to_string(m.lm_mode)},
          {"lm_extra_layers", m.lm_extra_layers},
          {"embed_seed", m.embed_seed},
          {"bptt", m.bptt},
          {"single_stream_decoder", m.single_stream_decoder}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig m = {}) {
  detail::FieldReader r(j, "model");
  r.get("L", m.L);
  r.get("heads", m.heads);
  r.get("d", m.d);
  r.get("L_ost", m.tracker.L_ost);
  r.get("L_lst", m.tracker.L_lst);
  r.get("k", m.tracker.k);
  r.get("H", m.tracker.H);
  r.get("use_ost", m.tracker.use_ost);
  r.get("use_lst", m.tracker.use_lst);
  r.get("lst_separators", m.tracker.separators);
  r.get("lst_turn_embedding", m.tracker.turn_embedding);
  std::string s = to_string(m.combiner);
  r.get("combiner", s);
  m.combiner = parse_combiner(s);
  r.get("combiner_c_layers", m.combiner_c_layers);
  s = to_string(m.mode);
  r.get("mode", s);
  m.mode = parse_mode(s);
  r.get("N", m.N);
  r.get("vocab_size", m.vocab_size);
  r.get("max_gen_len", m.max_gen_len);
  r.get("max_seq_len", m.max_seq_len);
  r.get("T", m.T);
  r.get("N_o", m.N_o);
  r.get("d_w", m.d_w);
  r.get("d_obj", m.d_obj);
  r.get("ffn", m.ffn);
  r.get("dropout", m.dropout);
  s = to_string(m.lm_mode);
  r.get("lm_mode", s);
  m.lm_mode = parse_lm_mode(s);
  r.get("lm_extra_layers", m.lm_extra_layers);
  r.get("embed_seed", m.embed_seed);
  r.get("bptt", m.bptt);
  r.get("single_stream_decoder", m.single_stream_decoder);
  r.finish();
  m.validate();
  return m;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& g = c.data.generator;
  nlohmann::json weights = nlohmann::json::object();
  for (std::size_t i = 0; i < kAllCategories.size(); ++i)
    weights[std::string(category_name(kAllCategories[i]))] = g.episode.category_weights[i];
  return {
      {"model", to_json(c.model)},
      {"schedule",
       {{"base_lr", c.schedule.base_lr},
        {"warmup_steps", c.schedule.warmup_steps},
        {"total_steps", c.schedule.total_steps}}},
      {"optim",
       {{"beta1", c.optim.beta1},
        {"beta2", c.optim.beta2},
        {"eps", c.optim.eps},
        {"weight_decay", c.optim.weight_decay},
        {"clip_norm", c.optim.clip_norm}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"seed", c.train.seed},
        {"log_every", c.train.log_every},
        {"checkpoint_every", c.train.checkpoint_every},
        {"eval_every", c.train.eval_every},
        {"slot_shuffle", c.train.slot_shuffle}}},
      {"data",
       {{"train_episodes", c.data.train_episodes},
        {"val_episodes", c.data.val_episodes},
        {"test_episodes", c.data.test_episodes},
        {"seed", g.seed},
        {"turns", g.episode.n_turns},
        {"coref_rate", g.episode.coref_rate},
        {"min_objects", g.episode.min_objects},
        {"max_objects", g.episode.max_objects},
        {"category_weights", weights},
        {"num_frames", g.scene.num_frames},
        {"sampled_frames", g.scene.sampled_frames},
        {"slots", g.scene.max_objects},
        {"event_rate", g.scene.event_rate},
        {"step", g.scene.step},
        {"d_obj", c.data.latent.d_obj},
        {"noise_sigma", c.data.latent.noise_sigma},
        {"latent_seed", c.data.latent.seed}}},
  };
}

// Overlays `j` on `base`; every key must be known.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  detail::FieldReader top(j, "config");
  if (const auto* m = top.child("model")) c.model = model_config_from_json(*m, c.model);
  if (const auto* s = top.child("schedule")) {
    detail::FieldReader r(*s, "schedule");
    r.get("base_lr", c.schedule.base_lr);
    r.get("warmup_steps", c.schedule.warmup_steps);
    r.get("total_steps", c.schedule.total_steps);
    r.finish();
  }
  if (const auto* o = top.child("optim")) {
    detail::FieldReader r(*o, "optim");
    r.get("beta1", c.optim.beta1);
    r.get("beta2", c.optim.beta2);
    r.get("eps", c.optim.eps);
    r.get("weight_decay", c.optim.weight_decay);
    r.get("clip_norm", c.optim.clip_norm);
    r.finish();
  }
  if (const auto* t = top.child("train")) {
    detail::FieldReader r(*t, "train");
    r.get("batch_size", c.train.batch_size);
    r.get("steps", c.train.steps);
    r.get("seed", c.train.seed);
    r.get("log_every", c.train.log_every);
    r.get("checkpoint_every", c.train.checkpoint_every);
    r.get("eval_every", c.train.eval_every);
    r.get("slot_shuffle", c.train.slot_shuffle);
    r.finish();
  }
  if (const auto* d = top.child("data")) {
    detail::FieldReader r(*d, "data");
    auto& g = c.data.generator;
    r.get("train_episodes", c.data.train_episodes);
    r.get("val_episodes", c.data.val_episodes);
    r.get("test_episodes", c.data.test_episodes);
    r.get("seed", g.seed);
    r.get("turns", g.episode.n_turns);
    r.get("coref_rate", g.episode.coref_rate);
    r.get("min_objects", g.episode.min_objects);
    r.get("max_objects", g.episode.max_objects);
    if (const auto* w = r.child("category_weights")) {
      detail::FieldReader wr(*w, "data.category_weights");
      for (std::size_t i = 0; i < kAllCategories.size(); ++i)
        wr.get(std::string(category_name(kAllCategories[i])).c_str(), g.episode.category_weights[i]);
      wr.finish();
    }
    r.get("num_frames", g.scene.num_frames);
    r.get("sampled_frames", g.scene.sampled_frames);
    r.get("slots", g.scene.max_objects);
    r.get("event_rate", g.scene.event_rate);
    r.get("step", g.scene.step);
    r.get("d_obj", c.data.latent.d_obj);
    r.get("noise_sigma", c.data.latent.noise_sigma);
    r.get("latent_seed", c.data.latent.seed);
    r.finish();
  }
  top.finish();
  c.model.validate();
  c.schedule.validate();
  if (c.model.N != CandidateSet::standard().size()) {
    throw ConfigError("model.N=" + std::to_string(c.model.N) + " does not match the candidate set size " +
                      std::to_string(CandidateSet::standard().size()));
  }
  if (c.train.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (c.data.latent.d_obj != c.model.d_obj) throw ConfigError("data.d_obj must equal model.d_obj");
  if (static_cast<std::size_t>(c.data.generator.scene.sampled_frames) != c.model.T) throw ConfigError("data.sampled_frames must equal model.T");
  if (static_cast<std::size_t>(c.data.generator.scene.max_objects) != c.model.N_o) {
    throw ConfigError("data.slots must equal model.N_o");
  }
  c.data.latent.step = c.data.generator.scene.step;
  return c;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, base);
}

// FNV-1a over the canonical JSON dump.
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a(to_json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace olvit
