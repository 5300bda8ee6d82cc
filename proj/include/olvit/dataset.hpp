#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olvit/dialog.hpp"
#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/scene.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

inline constexpr int kDatasetSchema = 1;

namespace detail {

template <std::size_t N>
int name_index(const std::array<std::string_view, N>& names, const std::string& word, const char* what) {
  const int i = index_of(names, word);
  if (i < 0) throw DataError(std::string("unknown ") + what + ": " + word);
  return i;
}

}  // namespace detail

inline nlohmann::json episode_to_json(const DialogEpisode& ep) {
  using nlohmann::json;
  json objects = json::array();
  for (const auto& o : ep.scene.objects) {
    json traj = json::array();
    for (const auto& p : o.trajectory) traj.push_back({p[0], p[1]});
    objects.push_back({{"shape", kShapeNames[static_cast<std::size_t>(o.shape)]},
                       {"color", kColorNames[static_cast<std::size_t>(o.color)]},
                       {"material", kMaterialNames[static_cast<std::size_t>(o.material)]},
                       {"size", kSizeNames[static_cast<std::size_t>(o.size)]},
                       {"trajectory", traj}});
  }
  json events = json::array();
  for (const auto& e : ep.scene.events) {
    events.push_back({{"object", e.object},
                      {"action", kActionNames[static_cast<std::size_t>(e.action)]},
                      {"begin", e.begin},
                      {"end", e.end}});
  }
  json turns = json::array();
  for (const auto& t : ep.turns) {
    turns.push_back({{"question", join_words(t.question)},
                     {"category", category_name(t.category)},
                     {"uses_coreference", t.uses_coreference},
                     {"answer", t.answer},
                     {"answer_index", t.answer_index}});
  }
  return {{"schema", kDatasetSchema},
          {"episode_id", ep.episode_id},
          {"seed", ep.seed},
          {"scene", {{"num_frames", ep.scene.num_frames}, {"objects", objects}, {"events", events}}},
          {"turns", turns}};
}

inline DialogEpisode episode_from_json(const nlohmann::json& j) {
  const int schema = j.at("schema").get<int>();
  if (schema != kDatasetSchema) {
    throw DataError("dataset schema " + std::to_string(schema) + " is not supported (expected " +
                    std::to_string(kDatasetSchema) + ")");
  }
  DialogEpisode ep;
  ep.episode_id = j.at("episode_id").get<std::uint64_t>();
  ep.seed = j.at("seed").get<std::uint64_t>();
  const auto& s = j.at("scene");
  ep.scene.num_frames = s.at("num_frames").get<int>();
  for (const auto& o : s.at("objects")) {
    SceneObject obj;
    obj.shape = detail::name_index(kShapeNames, o.at("shape").get<std::string>(), "shape");
    obj.color = detail::name_index(kColorNames, o.at("color").get<std::string>(), "color");
    obj.material = detail::name_index(kMaterialNames, o.at("material").get<std::string>(), "material");
    obj.size = detail::name_index(kSizeNames, o.at("size").get<std::string>(), "size");
    for (const auto& p : o.at("trajectory")) obj.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    ep.scene.objects.push_back(std::move(obj));
  }
  for (const auto& e : s.at("events")) {
    ep.scene.events.push_back({e.at("object").get<int>(),
                               detail::name_index(kActionNames, e.at("action").get<std::string>(), "action"),
                               e.at("begin").get<int>(), e.at("end").get<int>()});
  }
  const auto& candidates = CandidateSet::standard();
  for (const auto& t : j.at("turns")) {
    DialogTurn turn;
    turn.question = split_words(t.at("question").get<std::string>());
    turn.category = parse_category(t.at("category").get<std::string>());
    turn.uses_coreference = t.at("uses_coreference").get<bool>();
    turn.answer = t.at("answer").get<std::string>();
    turn.answer_index = t.at("answer_index").get<std::size_t>();
    if (candidates.index(turn.answer) != turn.answer_index) {
      throw DataError("answer index " + std::to_string(turn.answer_index) + " does not match answer '" + turn.answer + "'");
    }
    ep.turns.push_back(std::move(turn));
  }
  return ep;
}

inline void write_dataset(const std::vector<DialogEpisode>& episodes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset: " + path);
  for (const auto& ep : episodes) out << episode_to_json(ep).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// One JSON object per line; blank lines are skipped. Errors name the line.
inline std::vector<DialogEpisode> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);
  std::vector<DialogEpisode> episodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      episodes.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed episode: " + e.what());
    } catch (const Error& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return episodes;
}

// FNV-1a over the canonical serialisation.
inline std::uint64_t dataset_hash(const std::vector<DialogEpisode>& episodes) {
  std::uint64_t h = fnv1a("");
  for (const auto& ep : episodes) {
    h = fnv1a(episode_to_json(ep).dump(), h);
    h = fnv1a("\n", h);
  }
  return h;
}

inline void write_candidates(const CandidateSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write candidate file: " + path);
  for (const auto& a : set.answers()) out << a << '\n';
}

inline CandidateSet read_candidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open candidate file: " + path);
  std::vector<std::string> answers;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) answers.push_back(line);
  }
  return CandidateSet(std::move(answers));
}

}  // namespace olvit
