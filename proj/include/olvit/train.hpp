#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "olvit/checkpoint.hpp"
#include "olvit/config.hpp"
#include "olvit/dialog.hpp"
#include "olvit/error.hpp"
#include "olvit/model.hpp"
#include "olvit/optim.hpp"
#include "olvit/rng.hpp"

namespace olvit {

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// Deterministic minibatch training. The sample at global position p belongs
// to epoch p / |data| and is drawn from that epoch's seeded permutation, so a
// run resumed at any step sees the same batches and dropout masks.
template <class T>
class Trainer {
 public:
  Trainer(OlvitModel<T>& model, const RunConfig& cfg, const std::vector<DialogEpisode>& train_data)
      : model_(model), cfg_(cfg), optim_(model.params(), cfg.optim) {
    if (train_data.empty()) throw DataError("training set is empty");
    if (model.discriminative() && model.config().N != CandidateSet::standard().size()) {
      throw ConfigError("model.N does not match the candidate set size");
    }
    inputs_.reserve(train_data.size());
    for (const auto& ep : train_data) inputs_.push_back(episode_inputs<T>(ep, model.config(), cfg.data.latent));
  }

  AdamW<T>& optimizer() { return optim_; }
  std::size_t step() const { return optim_.state().step; }
  std::size_t dataset_size() const { return inputs_.size(); }

  std::vector<std::size_t> batch_indices(std::size_t step) const {
    const auto n = inputs_.size();
    const auto b = cfg_.train.batch_size;
    std::vector<std::size_t> out;
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto p = step * b + i;
      const auto& perm = permutation(p / n);
      out.push_back(perm[p % n]);
    }
    return out;
  }

  // One optimizer step on the batch for the current step; returns the mean episode loss.
  double train_step() {
    const auto s = step();
    const auto batch = batch_indices(s);
    model_.params().zero_grad();
    double total = 0.0;
    const T inv = T(1) / static_cast<T>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tape<T> tape;
      TapeScope<T> scope(tape);
      ForwardOptions opt{cfg_.model.dropout > 0.0, hash_seed({cfg_.train.seed, s, i})};
      auto loss = cfg_.train.slot_shuffle ? model_.episode_loss(shuffled(inputs_[batch[i]], opt.dropout_seed), opt)
                                          : model_.episode_loss(inputs_[batch[i]], opt);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at step " + std::to_string(s) + " (episode " + std::to_string(batch[i]) + ")");
      }
      total += static_cast<double>(loss.item());
      tape.backward(ops::scale(loss, inv));
    }
    optim_.step(lr_at(s + 1, cfg_.schedule));
    return total / static_cast<double>(batch.size());
  }

  StepLog run_step() {
    StepLog log;
    log.lr = lr_at(step() + 1, cfg_.schedule);
    log.loss = train_step();
    log.step = step();
    return log;
  }

  void save(const std::string& dir, const nlohmann::json& metadata = nlohmann::json::object()) const {
    auto meta = metadata;
    meta["step"] = step();
    meta["config"] = to_json(cfg_);
    save_checkpoint(dir, model_.params(), &optim_, meta);
  }

  void resume(const std::string& dir) { load_checkpoint(dir, model_.params(), &optim_); }

 private:
  // Same slot permutation in every frame and turn of the episode.
  std::vector<TurnInput<T>> shuffled(const std::vector<TurnInput<T>>& turns, std::uint64_t seed) const {
    const auto& mc = model_.config();
    std::vector<std::size_t> slot(mc.N_o);
    std::iota(slot.begin(), slot.end(), 0);
    Rng rng(hash_seed({seed, 0x736c6f74u}));
    rng.shuffle(slot.begin(), slot.end());
    std::vector<std::size_t> rows(mc.T * mc.N_o);
    for (std::size_t t = 0; t < mc.T; ++t)
      for (std::size_t n = 0; n < mc.N_o; ++n) rows[t * mc.N_o + slot[n]] = t * mc.N_o + n;
    auto latents = ops::select_rows(turns.front().latents, rows);
    auto out = turns;
    for (auto& in : out) in.latents = latents;
    return out;
  }

  const std::vector<std::size_t>& permutation(std::size_t epoch) const {
    if (cached_epoch_ != epoch || perm_.empty()) {
      perm_.resize(inputs_.size());
      std::iota(perm_.begin(), perm_.end(), 0);
      Rng rng(hash_seed({cfg_.train.seed, 0x70657270u, epoch}));
      rng.shuffle(perm_.begin(), perm_.end());
      cached_epoch_ = epoch;
    }
    return perm_;
  }

  OlvitModel<T>& model_;
  RunConfig cfg_;
  AdamW<T> optim_;
  std::vector<std::vector<TurnInput<T>>> inputs_;
  mutable std::vector<std::size_t> perm_;
  mutable std::size_t cached_epoch_ = 0;
};

// Appends step,lr,loss rows; writes the header when the file is new.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open metrics log: " + path);
    if (fresh) out_ << "step,lr,loss\n";
  }
  void write(const StepLog& log) {
    out_.precision(10);
    out_ << log.step << ',' << log.lr << ',' << log.loss << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace olvit
