#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/oracle.hpp"
#include "olvit/rng.hpp"
#include "olvit/scene.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

struct DialogTurn {
  std::vector<std::string> question;
  Category category = Category::kObjectExist;
  bool uses_coreference = false;
  std::size_t answer_index = 0;
  std::string answer;

  bool operator==(const DialogTurn&) const = default;
};

struct DialogEpisode {
  std::uint64_t episode_id = 0;
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<DialogTurn> turns;

  bool operator==(const DialogEpisode&) const = default;

  // Questions of turns [0, turn) in order, the context the oracle resolves against.
  std::vector<std::vector<std::string>> history_before(std::size_t turn) const {
    std::vector<std::vector<std::string>> h;
    for (std::size_t i = 0; i < turn && i < turns.size(); ++i) h.push_back(turns[i].question);
    return h;
  }
};

struct EpisodeConfig {
  int n_turns = 5;
  double coref_rate = 0.5;
  int min_objects = 3;
  int max_objects = 6;
  // Sampling weights in kAllCategories order.
  std::array<double, 6> category_weights = {0.15, 0.15, 0.25, 0.15, 0.2, 0.1};
  int max_retries = 200;
};

namespace detail {

using oracle::AttributeType;
using oracle::ObjectFilter;
using Words = std::vector<std::string>;

inline void append_adjectives(Words& w, const ObjectFilter& f) {
  if (f.size >= 0) w.emplace_back(kSizeNames[static_cast<std::size_t>(f.size)]);
  if (f.color >= 0) w.emplace_back(kColorNames[static_cast<std::size_t>(f.color)]);
  if (f.material >= 0) w.emplace_back(kMaterialNames[static_cast<std::size_t>(f.material)]);
}

// Shortest definite description of `target` that matches it alone. The shape
// is part of the noun unless `omit_shape`; `omit` names an adjective to leave out.
inline std::optional<Words> unique_reference(const Scene& scene, int target, bool omit_shape, int omit, Rng& rng) {
  const auto& o = scene.objects[static_cast<std::size_t>(target)];
  // Adjective slots: 0 size, 1 color, 2 material.
  std::vector<std::vector<int>> subsets = {{}, {0}, {1}, {2}, {0, 1}, {1, 2}, {0, 2}, {0, 1, 2}};
  // Shuffle within equal sizes for variety.
  rng.shuffle(subsets.begin() + 1, subsets.begin() + 4);
  rng.shuffle(subsets.begin() + 4, subsets.begin() + 7);
  for (const auto& s : subsets) {
    if (omit >= 0 && std::find(s.begin(), s.end(), omit) != s.end()) continue;
    ObjectFilter f;
    if (!omit_shape) f.shape = o.shape;
    for (int slot : s) {
      if (slot == 0) f.size = o.size;
      if (slot == 1) f.color = o.color;
      if (slot == 2) f.material = o.material;
    }
    if (oracle::matching_objects(scene, f).size() != 1) continue;
    Words w = {"the"};
    append_adjectives(w, f);
    w.emplace_back(omit_shape ? "thing" : std::string(kShapeNames[static_cast<std::size_t>(o.shape)]));
    return w;
  }
  return std::nullopt;
}

inline ObjectFilter random_adjectives(Rng& rng, int max_count, int min_count = 0) {
  ObjectFilter f;
  const int count = rng.uniform_int(min_count, max_count);
  std::array<int, 3> slots = {0, 1, 2};
  rng.shuffle(slots.begin(), slots.end());
  for (int i = 0; i < count; ++i) {
    if (slots[static_cast<std::size_t>(i)] == 0) f.size = rng.uniform_int(0, 1);
    if (slots[static_cast<std::size_t>(i)] == 1) f.color = rng.uniform_int(0, 7);
    if (slots[static_cast<std::size_t>(i)] == 2) f.material = rng.uniform_int(0, 1);
  }
  return f;
}

// Copies `count` random adjectives of an object into a filter.
inline ObjectFilter adjectives_of(const SceneObject& o, Rng& rng, int min_count, int max_count) {
  ObjectFilter f;
  const int count = rng.uniform_int(min_count, max_count);
  std::array<int, 3> slots = {0, 1, 2};
  rng.shuffle(slots.begin(), slots.end());
  for (int i = 0; i < count; ++i) {
    if (slots[static_cast<std::size_t>(i)] == 0) f.size = o.size;
    if (slots[static_cast<std::size_t>(i)] == 1) f.color = o.color;
    if (slots[static_cast<std::size_t>(i)] == 2) f.material = o.material;
  }
  return f;
}

struct Draft {
  Words question;
  Category category;
  std::string intended;  // answer computed while drafting, cross-checked against the oracle
};

inline std::string yes_no(bool v) { return v ? "yes" : "no"; }

// Draws one question of `cat`. `coref` selects the pronoun form ("it" or
// "one"/"ones") bound to `prev`; `need_shape_noun` forces exist/count questions
// to name a shape so the next turn has something to refer back to.
inline std::optional<Draft> draft_question(const Scene& scene, Category cat, bool coref,
                                           const std::optional<oracle::Referent>& prev, bool need_shape_noun,
                                           Rng& rng) {
  const int n_obj = static_cast<int>(scene.objects.size());
  auto pick_object = [&] { return rng.uniform_int(0, n_obj - 1); };
  switch (cat) {
    case Category::kObjectExist: {
      ObjectFilter f;
      Words noun;
      const bool positive = rng.bernoulli(0.5);
      if (coref) {
        f.shape = prev->shape;
        std::vector<int> same_shape;
        for (int i = 0; i < n_obj; ++i)
          if (scene.objects[static_cast<std::size_t>(i)].shape == f.shape) same_shape.push_back(i);
        if (positive && !same_shape.empty()) {
          const auto& o = scene.objects[static_cast<std::size_t>(same_shape[static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<int>(same_shape.size()) - 1))])];
          const auto adj = adjectives_of(o, rng, 1, 2);
          f.size = adj.size, f.color = adj.color, f.material = adj.material;
        } else {
          const auto adj = random_adjectives(rng, 2, 1);
          f.size = adj.size, f.color = adj.color, f.material = adj.material;
        }
        noun = {"one"};
      } else {
        if (positive) {
          const auto& o = scene.objects[static_cast<std::size_t>(pick_object())];
          f = adjectives_of(o, rng, 0, 2);
          f.shape = o.shape;
        } else {
          f = random_adjectives(rng, 2);
          f.shape = rng.uniform_int(0, 3);
        }
        const bool thing = !need_shape_noun && (f.size >= 0 || f.color >= 0 || f.material >= 0) && rng.bernoulli(0.2);
        if (thing) f.shape = -1;
        noun = {thing ? "thing" : std::string(kShapeNames[static_cast<std::size_t>(f.shape)])};
      }
      const bool exists = !oracle::matching_objects(scene, f).empty();
      if (exists != positive) return std::nullopt;  // yes/no balanced by construction
      Words q = {"is", "there", "a"};
      append_adjectives(q, f);
      q.insert(q.end(), noun.begin(), noun.end());
      q.emplace_back("?");
      return Draft{q, cat, yes_no(exists)};
    }
    case Category::kObjectCount: {
      ObjectFilter f;
      std::string noun;
      if (coref) {
        f = rng.bernoulli(0.7) ? adjectives_of(scene.objects[static_cast<std::size_t>(pick_object())], rng, 1, 1)
                               : random_adjectives(rng, 1, 1);
        f.shape = prev->shape;
        noun = "ones";
      } else {
        const bool from_object = rng.bernoulli(0.7);
        const auto& o = scene.objects[static_cast<std::size_t>(pick_object())];
        const bool named = need_shape_noun || rng.bernoulli(0.6);
        f = from_object ? adjectives_of(o, rng, named ? 0 : 1, named ? 1 : 2) : random_adjectives(rng, named ? 1 : 2, named ? 0 : 1);
        if (named) f.shape = from_object ? o.shape : rng.uniform_int(0, 3);
        noun = named ? std::string(kShapePlurals[static_cast<std::size_t>(f.shape)]) : "things";
      }
      Words q = {"how", "many"};
      append_adjectives(q, f);
      q.insert(q.end(), {noun, "are", "there", "?"});
      return Draft{q, cat, std::to_string(oracle::matching_objects(scene, f).size())};
    }
    case Category::kAttributeQuery: {
      const int attr = rng.uniform_int(0, 3);  // shape, color, material, size
      const int target = coref ? prev->object : pick_object();
      Words ref;
      if (coref) {
        ref = {"it"};
      } else {
        const int omit = attr == 1 ? 1 : attr == 2 ? 2 : attr == 3 ? 0 : -1;
        auto r = unique_reference(scene, target, attr == 0, omit, rng);
        if (!r) return std::nullopt;
        ref = *r;
      }
      static constexpr std::array<const char*, 4> kAttrWord = {"shape", "color", "material", "size"};
      Words q = {"what", kAttrWord[static_cast<std::size_t>(attr)], "is"};
      q.insert(q.end(), ref.begin(), ref.end());
      q.emplace_back("?");
      const auto& o = scene.objects[static_cast<std::size_t>(target)];
      std::string ans;
      switch (attr) {
        case 0: ans = kShapeNames[static_cast<std::size_t>(o.shape)]; break;
        case 1: ans = kColorNames[static_cast<std::size_t>(o.color)]; break;
        case 2: ans = kMaterialNames[static_cast<std::size_t>(o.material)]; break;
        default: ans = kSizeNames[static_cast<std::size_t>(o.size)]; break;
      }
      return Draft{q, cat, ans};
    }
    case Category::kActionQuery:
    case Category::kActionCount: {
      const int target = coref ? prev->object : pick_object();
      Words ref = {"it"};
      if (!coref) {
        auto r = unique_reference(scene, target, false, -1, rng);
        if (!r) return std::nullopt;
        ref = *r;
      }
      if (cat == Category::kActionQuery) {
        Words q = {"what", "does"};
        q.insert(q.end(), ref.begin(), ref.end());
        q.insert(q.end(), {"do", "first", "?"});
        const auto* e = oracle::first_event(scene, target);
        return Draft{q, cat, e ? std::string(kActionNames[static_cast<std::size_t>(e->action)]) : "none"};
      }
      std::vector<int> performed;
      for (const auto& e : scene.events)
        if (e.object == target) performed.push_back(e.action);
      const int action = !performed.empty() && rng.bernoulli(0.6)
                             ? performed[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(performed.size()) - 1))]
                             : rng.uniform_int(0, 3);
      Words q = {"how", "many", "times", "does"};
      q.insert(q.end(), ref.begin(), ref.end());
      q.emplace_back(kActionNames[static_cast<std::size_t>(action)]);
      q.emplace_back("?");
      return Draft{q, cat, std::to_string(oracle::event_count(scene, target, action))};
    }
    case Category::kCompareAction: {
      const int a = pick_object();
      int b = pick_object();
      if (a == b) return std::nullopt;
      auto ra = unique_reference(scene, a, false, -1, rng);
      auto rb = unique_reference(scene, b, false, -1, rng);
      if (!ra || !rb) return std::nullopt;
      Words q;
      std::string ans;
      if (rng.bernoulli(0.5)) {
        q = {"how", "often", "does"};
        q.insert(q.end(), ra->begin(), ra->end());
        q.insert(q.end(), {"move", "compared", "to"});
        const auto ca = oracle::event_count(scene, a), cb = oracle::event_count(scene, b);
        ans = ca > cb ? "more" : ca < cb ? "fewer" : "same";
      } else {
        q = {"when", "does"};
        q.insert(q.end(), ra->begin(), ra->end());
        q.insert(q.end(), {"start", "moving", "compared", "to"});
        const auto* ea = oracle::first_event(scene, a);
        const auto* eb = oracle::first_event(scene, b);
        ans = !ea || !eb ? "none" : ea->begin < eb->begin ? "before" : ea->begin > eb->begin ? "after" : "simultaneously";
      }
      q.insert(q.end(), rb->begin(), rb->end());
      q.emplace_back("?");
      return Draft{q, cat, ans};
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Templated multi-turn dialog over `scene`. With probability `coref_rate` a turn
// after the first refers back to the previous turn's referent through "it"
// (an object) or "one"/"ones" (a shape); such turns are only answerable with history.
inline DialogEpisode generate_episode(const Scene& scene, std::uint64_t seed, const EpisodeConfig& cfg,
                                      std::uint64_t episode_id = 0) {
  if (cfg.n_turns < 1) throw ConfigError("generate_episode: n_turns must be >= 1");
  Rng rng(seed);
  DialogEpisode ep;
  ep.episode_id = episode_id;
  ep.seed = seed;
  ep.scene = scene;
  std::vector<bool> coref(static_cast<std::size_t>(cfg.n_turns), false);
  for (int i = 1; i < cfg.n_turns; ++i) coref[static_cast<std::size_t>(i)] = rng.bernoulli(cfg.coref_rate);
  std::optional<oracle::Referent> prev;
  const auto& candidates = CandidateSet::standard();
  for (int i = 0; i < cfg.n_turns; ++i) {
    const bool is_coref = coref[static_cast<std::size_t>(i)];
    const bool next_coref = i + 1 < cfg.n_turns && coref[static_cast<std::size_t>(i + 1)];
    std::vector<double> weights(cfg.category_weights.begin(), cfg.category_weights.end());
    for (std::size_t c = 0; c < kAllCategories.size(); ++c) {
      const auto cat = kAllCategories[c];
      const bool object_turn = cat == Category::kAttributeQuery || cat == Category::kActionQuery ||
                               cat == Category::kActionCount;
      if (is_coref && object_turn && (!prev || prev->object < 0)) weights[c] = 0;
      if (is_coref && !object_turn && cat != Category::kObjectExist && cat != Category::kObjectCount) weights[c] = 0;
      if (is_coref && !object_turn && (!prev || prev->shape < 0)) weights[c] = 0;
      if (next_coref && cat == Category::kCompareAction) weights[c] = 0;
    }
    double total = 0;
    for (auto w : weights) total += w;
    if (total <= 0) throw DataError("generate_episode: no category can realise the requested coreference");
    std::optional<detail::Draft> draft;
    for (int attempt = 0; attempt < cfg.max_retries && !draft; ++attempt) {
      double r = rng.uniform() * total;
      std::size_t c = 0;
      while (c + 1 < weights.size() && (r >= weights[c] || weights[c] == 0)) {
        r -= weights[c];
        ++c;
      }
      draft = detail::draft_question(ep.scene, kAllCategories[c], is_coref, prev, next_coref, rng);
      if (draft && !candidates.contains(draft->intended)) draft.reset();
    }
    if (!draft) throw DataError("generate_episode: no answerable question after retries");
    DialogTurn turn;
    turn.question = draft->question;
    turn.category = draft->category;
    turn.uses_coreference = is_coref;
    turn.answer = oracle::answer_text(ep.scene, ep.history_before(static_cast<std::size_t>(i)), turn.question);
    if (turn.answer != draft->intended) {
      throw DataError("generator/oracle disagreement on '" + join_words(turn.question) + "': " + draft->intended +
                      " vs " + turn.answer);
    }
    turn.answer_index = candidates.index(turn.answer);
    prev = oracle::referent_of(ep.scene, oracle::parse_question(turn.question), prev);
    ep.turns.push_back(std::move(turn));
  }
  return ep;
}

struct DatasetConfig {
  SceneConfig scene;
  EpisodeConfig episode;
  std::uint64_t seed = 1;
};

// Episode `id` of a dataset; reproducible from (global seed, id) alone.
inline DialogEpisode make_episode(const DatasetConfig& cfg, std::uint64_t id) {
  const auto seed = hash_seed({cfg.seed, id});
  Rng rng(seed);
  const int hi = std::min(cfg.episode.max_objects, cfg.scene.max_objects);
  const int n_objects = rng.uniform_int(cfg.episode.min_objects, hi);
  const auto scene = generate_scene(hash_seed({seed, 1}), n_objects, cfg.scene);
  return generate_episode(scene, hash_seed({seed, 2}), cfg.episode, id);
}

inline std::vector<DialogEpisode> make_episodes(const DatasetConfig& cfg, std::uint64_t first_id, std::size_t count) {
  std::vector<DialogEpisode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_episode(cfg, first_id + i));
  return out;
}

}  // namespace olvit
