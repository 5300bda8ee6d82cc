#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "olvit/error.hpp"

namespace olvit {

inline constexpr std::array<std::string_view, 4> kShapeNames = {"cube", "sphere", "cone", "cylinder"};
inline constexpr std::array<std::string_view, 4> kShapePlurals = {"cubes", "spheres", "cones", "cylinders"};
inline constexpr std::array<std::string_view, 8> kColorNames = {"gray",   "red",  "blue", "green",
                                                                "brown", "purple", "cyan", "yellow"};
inline constexpr std::array<std::string_view, 2> kMaterialNames = {"metal", "rubber"};
inline constexpr std::array<std::string_view, 2> kSizeNames = {"small", "large"};
inline constexpr std::array<std::string_view, 4> kActionNames = {"slide", "rotate", "fly", "contain"};

template <std::size_t N>
int index_of(const std::array<std::string_view, N>& names, std::string_view word) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == word) return static_cast<int>(i);
  return -1;
}

enum class Category { kActionCount, kActionQuery, kAttributeQuery, kObjectCount, kObjectExist, kCompareAction };

inline constexpr std::array<Category, 6> kAllCategories = {Category::kActionCount,    Category::kActionQuery,
                                                           Category::kAttributeQuery, Category::kObjectCount,
                                                           Category::kObjectExist,    Category::kCompareAction};

inline std::string_view category_name(Category c) {
  switch (c) {
    case Category::kActionCount: return "action_count";
    case Category::kActionQuery: return "action_query";
    case Category::kAttributeQuery: return "attribute_query";
    case Category::kObjectCount: return "object_count";
    case Category::kObjectExist: return "object_exist";
    case Category::kCompareAction: return "compare_action";
  }
  return "unknown";
}

inline Category parse_category(std::string_view name) {
  for (auto c : kAllCategories)
    if (category_name(c) == name) return c;
  throw DataError("unknown question category: " + std::string(name));
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

// Closed answer set, sorted and index-stable.
class CandidateSet {
 public:
  static constexpr std::string_view kVersion = "olvit-candidates-v1";
  static constexpr std::size_t kSize = 40;

  static const CandidateSet& standard() {
    static const CandidateSet set = [] {
      std::vector<std::string> a;
      for (int i = 0; i <= 10; ++i) a.push_back(std::to_string(i));
      a.insert(a.end(), {"yes", "no"});
      for (auto v : kColorNames) a.emplace_back(v);
      for (auto v : kShapeNames) a.emplace_back(v);
      for (auto v : kMaterialNames) a.emplace_back(v);
      for (auto v : kSizeNames) a.emplace_back(v);
      for (auto v : kActionNames) a.emplace_back(v);
      a.insert(a.end(), {"more", "fewer", "same", "before", "after", "simultaneously", "none"});
      return CandidateSet(std::move(a));
    }();
    return set;
  }

  explicit CandidateSet(std::vector<std::string> answers) : answers_(std::move(answers)) {
    std::sort(answers_.begin(), answers_.end());
    if (std::adjacent_find(answers_.begin(), answers_.end()) != answers_.end()) {
      throw DataError("candidate set contains duplicates");
    }
    for (std::size_t i = 0; i < answers_.size(); ++i) index_[answers_[i]] = i;
  }

  std::size_t size() const { return answers_.size(); }
  const std::string& answer(std::size_t i) const { return answers_.at(i); }
  const std::vector<std::string>& answers() const { return answers_; }

  std::size_t index(const std::string& answer) const {
    auto it = index_.find(answer);
    if (it == index_.end()) throw DataError("answer not in candidate set: " + answer);
    return it->second;
  }
  bool contains(const std::string& answer) const { return index_.count(answer) > 0; }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Word-level vocabulary shared by questions, answers and the fixture embedder.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kSep = 2;

  static const Vocabulary& standard() {
    static const Vocabulary vocab = [] {
      std::vector<std::string> w = {"[PAD]", "[EOS]", "[SEP]"};
      for (auto s : {"is", "there", "a", "the", "what", "does", "do", "first", "how", "many", "times", "are",
                     "things", "thing", "one", "ones", "it", "?", "color", "shape", "material", "size", "often",
                     "move", "compared", "to", "when", "start", "moving"})
        w.emplace_back(s);
      for (auto v : kShapePlurals) w.emplace_back(v);
      for (const auto& a : CandidateSet::standard().answers())
        if (std::find(w.begin(), w.end(), a) == w.end()) w.push_back(a);
      return Vocabulary(std::move(w));
    }();
    return vocab;
  }

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw DataError("word not in vocabulary: " + word);
    return it->second;
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::size_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> out;
    for (auto i : ids) out.push_back(word(i));
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace olvit
