#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olvit/config.hpp"
#include "olvit/dataset.hpp"
#include "olvit/dialog.hpp"
#include "olvit/error.hpp"
#include "olvit/model.hpp"
#include "olvit/oracle.hpp"
#include "olvit/train.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

struct Score {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  void add(bool ok) {
    correct += ok ? 1 : 0;
    ++total;
  }
};

struct EvalReport {
  Score all;
  std::map<std::string, Score> by_category;
  Score coref, non_coref;
  std::optional<double> bleu4;
  nlohmann::json manifest = nlohmann::json::object();

  nlohmann::json to_json() const {
    auto score = [](const Score& s) {
      return nlohmann::json{{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}};
    };
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [k, v] : by_category) cats[k] = score(v);
    nlohmann::json j = {{"all", score(all)},
                        {"categories", cats},
                        {"coreference", score(coref)},
                        {"non_coreference", score(non_coref)},
                        {"manifest", manifest}};
    j["bleu4"] = bleu4 ? nlohmann::json(*bleu4) : nlohmann::json(nullptr);
    return j;
  }

  std::string to_markdown() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "| subset | correct | total | accuracy (%) |\n|---|---|---|---|\n";
    for (const auto& [k, v] : by_category)
      os << "| " << k << " | " << v.correct << " | " << v.total << " | " << 100.0 * v.accuracy() << " |\n";
    os << "| coreference | " << coref.correct << " | " << coref.total << " | " << 100.0 * coref.accuracy() << " |\n";
    os << "| non_coreference | " << non_coref.correct << " | " << non_coref.total << " | "
       << 100.0 * non_coref.accuracy() << " |\n";
    os << "| All | " << all.correct << " | " << all.total << " | " << 100.0 * all.accuracy() << " |\n";
    if (bleu4) {
      os.precision(4);
      os << "\nBLEU-4: " << *bleu4 << '\n';
    }
    return os.str();
  }
};

// Exact-match accuracy; `predictions` is flattened episode-major, turn-minor.
// Out-of-range predictions count as wrong.
inline EvalReport accuracy_by_category(const std::vector<std::size_t>& predictions,
                                       const std::vector<DialogEpisode>& episodes) {
  std::size_t turns = 0;
  for (const auto& ep : episodes) turns += ep.turns.size();
  if (predictions.size() != turns) {
    throw DimensionError("accuracy_by_category: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(turns) + " turns");
  }
  EvalReport r;
  std::size_t i = 0;
  for (const auto& ep : episodes) {
    for (const auto& t : ep.turns) {
      const bool ok = predictions[i++] == t.answer_index;
      r.all.add(ok);
      r.by_category[std::string(category_name(t.category))].add(ok);
      (t.uses_coreference ? r.coref : r.non_coref).add(ok);
    }
  }
  return r;
}

// Corpus BLEU-4 with one reference per candidate, uniform weights, no smoothing.
inline double bleu4(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
  if (candidates.empty()) throw DimensionError("bleu4: empty corpus");
  if (candidates.size() != references.size()) {
    throw DimensionError("bleu4: " + std::to_string(candidates.size()) + " candidates but " +
                         std::to_string(references.size()) + " references");
  }
  std::array<std::size_t, 4> matched{}, possible{};
  std::size_t c_len = 0, r_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& r = references[s];
    if (r.empty()) throw DimensionError("bleu4: empty reference at index " + std::to_string(s));
    c_len += c.size();
    r_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + static_cast<std::ptrdiff_t>(i), r.begin() + static_cast<std::ptrdiff_t>(i + n)}];
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + static_cast<std::ptrdiff_t>(i), c.begin() + static_cast<std::ptrdiff_t>(i + n)}];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(count, it->second);
        possible[n - 1] += count;
      }
    }
  }
  if (possible[3] == 0 || c_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(possible[n]));
  }
  const double bp = c_len < r_len ? std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len)) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

// Answers every turn with the symbolic oracle; `use_history` false strips the dialog
// context, which makes pronoun questions unanswerable (scored as wrong).
inline std::vector<std::size_t> oracle_predictions(const std::vector<DialogEpisode>& episodes, bool use_history = true) {
  std::vector<std::size_t> out;
  for (const auto& ep : episodes) {
    for (std::size_t t = 0; t < ep.turns.size(); ++t) {
      const auto history = use_history ? ep.history_before(t) : std::vector<std::vector<std::string>>{};
      try {
        out.push_back(oracle::oracle_answer(ep.scene, history, ep.turns[t].question));
      } catch (const DataError&) {
        out.push_back(CandidateSet::standard().size());
      }
    }
  }
  return out;
}

struct ModelPredictions {
  std::vector<std::size_t> answers;                 // candidate indices, N when the output is not a candidate
  std::vector<std::vector<std::string>> generated;  // generative mode only, without [EOS]
};

template <class T>
ModelPredictions predict_dataset(const OlvitModel<T>& model, const std::vector<DialogEpisode>& episodes,
                                 const LatentConfig& latent) {
  ModelPredictions p;
  const auto& vocab = Vocabulary::standard();
  const auto& candidates = CandidateSet::standard();
  for (const auto& ep : episodes) {
    const auto inputs = episode_inputs<T>(ep, model.config(), latent);
    if (model.discriminative()) {
      for (const auto& out : model.run_dialog(inputs)) p.answers.push_back(predict_answer(out.logits));
      continue;
    }
    std::vector<std::vector<std::size_t>> tokens;
    model.run_dialog(inputs, false, &tokens);
    for (auto t : tokens) {
      if (!t.empty() && t.back() == Vocabulary::kEos) t.pop_back();
      auto words = vocab.decode(t);
      const auto text = join_words(words);
      p.answers.push_back(candidates.contains(text) ? candidates.index(text) : candidates.size());
      p.generated.push_back(std::move(words));
    }
  }
  return p;
}

template <class T>
EvalReport evaluate_model(const OlvitModel<T>& model, const std::vector<DialogEpisode>& episodes,
                          const LatentConfig& latent, ModelPredictions* keep = nullptr) {
  auto p = predict_dataset(model, episodes, latent);
  auto report = accuracy_by_category(p.answers, episodes);
  report.manifest["mode"] = to_string(model.config().mode);
  report.manifest["history"] = model.discriminative() ? "ground_truth_answers" : "generated_answers";
  report.manifest["candidate_set"] = CandidateSet::kVersion;
  report.manifest["dataset_hash"] = hex64(dataset_hash(episodes));
  if (!model.discriminative()) {
    std::vector<std::vector<std::string>> refs;
    for (const auto& ep : episodes)
      for (const auto& t : ep.turns) refs.push_back(split_words(t.answer));
    report.bleu4 = bleu4(p.generated, refs);
    report.manifest["bleu"] = "corpus BLEU-4, single reference, uniform weights, no smoothing";
  }
  if (keep) *keep = std::move(p);
  return report;
}

struct AblationCell {
  std::string name;
  ModelConfig model;
};

struct AblationRow {
  std::string name;
  ModelConfig model;
  std::size_t param_count = 0;
  double seconds = 0.0;
  double final_loss = 0.0;
  std::optional<EvalReport> train, val;
  std::string error;
};

// The four tracker on/off rows: no-tracker, OST-only, LST-only, full.
inline std::vector<AblationCell> tracker_grid(const ModelConfig& base) {
  std::vector<AblationCell> cells;
  for (auto [name, ost, lst] : {std::tuple{"no-tracker", false, false}, std::tuple{"OST-only", true, false},
                                std::tuple{"LST-only", false, true}, std::tuple{"full", true, true}}) {
    auto m = base;
    m.tracker.use_ost = ost;
    m.tracker.use_lst = lst;
    cells.push_back({name, m});
  }
  return cells;
}

inline std::vector<AblationCell> combiner_grid(const ModelConfig& base) {
  std::vector<AblationCell> cells;
  for (auto v : {CombinerVariant::kA, CombinerVariant::kB, CombinerVariant::kC}) {
    auto m = base;
    m.combiner = v;
    cells.push_back({"combiner-" + to_string(v), m});
  }
  return cells;
}

// Layer/head sweep; tracker depths follow L_ost = L_lst.
inline std::vector<AblationCell> sweep_grid(const ModelConfig& base, const std::vector<std::size_t>& layers,
                                            const std::vector<std::size_t>& heads,
                                            const std::vector<std::size_t>& tracker_layers) {
  std::vector<AblationCell> cells;
  for (auto L : layers)
    for (auto h : heads)
      for (auto lt : tracker_layers) {
        auto m = base;
        m.L = L;
        m.heads = h;
        m.tracker.L_ost = m.tracker.L_lst = lt;
        if (m.d % h) continue;
        cells.push_back({"L" + std::to_string(L) + "-h" + std::to_string(h) + "-t" + std::to_string(lt), m});
      }
  return cells;
}

// Trains every cell from the same seed and evaluates it. A failing cell records
// its error and the grid continues.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& grid, const RunConfig& base,
                                             const std::vector<DialogEpisode>& train_data,
                                             const std::vector<DialogEpisode>& val_data,
                                             std::size_t train_eval_episodes = 400,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  const std::vector<DialogEpisode> train_probe(
      train_data.begin(), train_data.begin() + static_cast<std::ptrdiff_t>(std::min(train_eval_episodes, train_data.size())));
  for (const auto& cell : grid) {
    AblationRow row;
    row.name = cell.name;
    row.model = cell.model;
    const auto start = std::chrono::steady_clock::now();
    try {
      auto cfg = base;
      cfg.model = cell.model;
      cfg.model.validate();
      OlvitModel<float> model(cfg.model, cfg.train.seed);
      row.param_count = model.params().scalar_count();
      Trainer<float> trainer(model, cfg, train_data);
      const auto steps = cfg.train.steps ? cfg.train.steps : cfg.schedule.total_steps;
      double running = 0.0;
      for (std::size_t s = 0; s < steps; ++s) {
        const double loss = trainer.train_step();
        running = s == 0 ? loss : 0.95 * running + 0.05 * loss;
      }
      row.final_loss = running;
      if (!train_probe.empty()) row.train = evaluate_model(model, train_probe, cfg.data.latent);
      if (!val_data.empty()) row.val = evaluate_model(model, val_data, cfg.data.latent);
    } catch (const Error& e) {
      row.error = e.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "| config | OST | LST | combiner | L | heads | d | params | train acc | val acc | val coref acc | status |\n"
     << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.name << " | " << (r.model.tracker.use_ost ? "yes" : "no") << " | "
       << (r.model.tracker.use_lst ? "yes" : "no") << " | " << to_string(r.model.combiner) << " | " << r.model.L
       << " | " << r.model.heads << " | " << r.model.d << " | " << r.param_count << " | ";
    auto pct = [&](const std::optional<EvalReport>& e, bool coref) {
      if (!e) return std::string("-");
      std::ostringstream s;
      s.setf(std::ios::fixed);
      s.precision(2);
      s << 100.0 * (coref ? e->coref.accuracy() : e->all.accuracy());
      return s.str();
    };
    os << pct(r.train, false) << " | " << pct(r.val, false) << " | " << pct(r.val, true) << " | "
       << (r.error.empty() ? "ok" : "failed: " + r.error) << " |\n";
  }
  return os.str();
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"name", r.name},
                        {"model", to_json(r.model)},
                        {"param_count", r.param_count},
                        {"seconds", r.seconds},
                        {"final_loss", r.final_loss}};
    j["train"] = r.train ? r.train->to_json() : nlohmann::json(nullptr);
    j["val"] = r.val ? r.val->to_json() : nlohmann::json(nullptr);
    j["error"] = r.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.error);
    out.push_back(j);
  }
  return out;
}

}  // namespace olvit
