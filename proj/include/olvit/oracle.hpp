#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/scene.hpp"
#include "olvit/vocab.hpp"

// Ground-truth executor: parses templated question tokens and evaluates them
// symbolically against the scene, resolving pronouns from earlier turns.
namespace olvit::oracle {

struct ObjectFilter {
  int shape = -1, color = -1, material = -1, size = -1;

  bool matches(const SceneObject& o) const {
    return (shape < 0 || o.shape == shape) && (color < 0 || o.color == color) &&
           (material < 0 || o.material == material) && (size < 0 || o.size == size);
  }
};

enum class Noun { kShape, kThing, kOne };

struct Description {
  ObjectFilter filter;
  Noun noun = Noun::kShape;
};

struct Reference {
  bool pronoun = false;  // "it"
  Description desc;
};

enum class Kind { kExist, kCount, kAttribute, kActionFirst, kActionCount, kCompareOften, kCompareWhen };

enum class AttributeType { kShape, kColor, kMaterial, kSize };

struct Question {
  Kind kind = Kind::kExist;
  Description desc;  // exist / count
  Reference ref1, ref2;
  AttributeType attribute = AttributeType::kColor;
  int action = -1;
};

inline Category category_of(Kind k) {
  switch (k) {
    case Kind::kExist: return Category::kObjectExist;
    case Kind::kCount: return Category::kObjectCount;
    case Kind::kAttribute: return Category::kAttributeQuery;
    case Kind::kActionFirst: return Category::kActionQuery;
    case Kind::kActionCount: return Category::kActionCount;
    case Kind::kCompareOften:
    case Kind::kCompareWhen: return Category::kCompareAction;
  }
  return Category::kObjectExist;
}

// What a turn leaves behind for "it" (an object) and "one"/"ones" (a shape).
struct Referent {
  int object = -1;
  int shape = -1;
};

namespace detail {

using Words = std::vector<std::string>;

[[noreturn]] inline void malformed(const Words& q, const std::string& why) {
  throw DataError("malformed question '" + join_words(q) + "': " + why);
}

// Adjectives followed by a noun; `plural` selects the count-question nouns.
inline Description parse_description(const Words& q, std::size_t begin, std::size_t end, bool plural) {
  if (begin >= end) malformed(q, "missing noun phrase");
  Description d;
  for (std::size_t i = begin; i + 1 < end; ++i) {
    const auto& w = q[i];
    int v;
    if ((v = index_of(kColorNames, w)) >= 0 && d.filter.color < 0) {
      d.filter.color = v;
    } else if ((v = index_of(kMaterialNames, w)) >= 0 && d.filter.material < 0) {
      d.filter.material = v;
    } else if ((v = index_of(kSizeNames, w)) >= 0 && d.filter.size < 0) {
      d.filter.size = v;
    } else {
      malformed(q, "unexpected word '" + w + "' in noun phrase");
    }
  }
  const auto& noun = q[end - 1];
  int v;
  if (!plural && (v = index_of(kShapeNames, noun)) >= 0) {
    d.filter.shape = v;
  } else if (plural && (v = index_of(kShapePlurals, noun)) >= 0) {
    d.filter.shape = v;
  } else if (noun == (plural ? "things" : "thing")) {
    d.noun = Noun::kThing;
  } else if (noun == (plural ? "ones" : "one")) {
    d.noun = Noun::kOne;
  } else {
    malformed(q, "unknown noun '" + noun + "'");
  }
  return d;
}

inline Reference parse_reference(const Words& q, std::size_t begin, std::size_t end) {
  Reference r;
  if (end == begin + 1 && q[begin] == "it") {
    r.pronoun = true;
    return r;
  }
  if (begin >= end || q[begin] != "the") malformed(q, "expected 'the' or 'it'");
  r.desc = parse_description(q, begin + 1, end, false);
  if (r.desc.noun == Noun::kOne) malformed(q, "'one' cannot head a definite reference");
  return r;
}

inline std::size_t find_word(const Words& q, const std::string& w, std::size_t from) {
  for (std::size_t i = from; i < q.size(); ++i)
    if (q[i] == w) return i;
  malformed(q, "missing '" + w + "'");
}

inline bool starts_with(const Words& q, std::initializer_list<const char*> prefix) {
  if (q.size() < prefix.size()) return false;
  std::size_t i = 0;
  for (auto p : prefix)
    if (q[i++] != p) return false;
  return true;
}

}  // namespace detail

inline Question parse_question(const std::vector<std::string>& q) {
  using namespace detail;
  if (q.empty() || q.back() != "?") malformed(q, "must end with '?'");
  const auto last = q.size() - 1;
  Question out;
  if (starts_with(q, {"is", "there", "a"})) {
    out.kind = Kind::kExist;
    out.desc = parse_description(q, 3, last, false);
  } else if (starts_with(q, {"how", "many", "times", "does"})) {
    out.kind = Kind::kActionCount;
    if (last < 6) malformed(q, "too short");
    out.action = index_of(kActionNames, q[last - 1]);
    if (out.action < 0) malformed(q, "unknown action '" + q[last - 1] + "'");
    out.ref1 = parse_reference(q, 4, last - 1);
  } else if (starts_with(q, {"how", "many"})) {
    out.kind = Kind::kCount;
    if (last < 4 || q[last - 2] != "are" || q[last - 1] != "there") malformed(q, "expected '... are there ?'");
    out.desc = parse_description(q, 2, last - 2, true);
  } else if (starts_with(q, {"what", "does"})) {
    out.kind = Kind::kActionFirst;
    if (last < 4 || q[last - 2] != "do" || q[last - 1] != "first") malformed(q, "expected '... do first ?'");
    out.ref1 = parse_reference(q, 2, last - 2);
  } else if (starts_with(q, {"what"})) {
    out.kind = Kind::kAttribute;
    if (last < 4 || q[2] != "is") malformed(q, "expected 'what <attribute> is'");
    const auto& a = q[1];
    if (a == "shape") out.attribute = AttributeType::kShape;
    else if (a == "color") out.attribute = AttributeType::kColor;
    else if (a == "material") out.attribute = AttributeType::kMaterial;
    else if (a == "size") out.attribute = AttributeType::kSize;
    else malformed(q, "unknown attribute '" + a + "'");
    out.ref1 = parse_reference(q, 3, last);
  } else if (starts_with(q, {"how", "often", "does"})) {
    out.kind = Kind::kCompareOften;
    const auto mv = find_word(q, "move", 3);
    if (mv + 2 >= last || q[mv + 1] != "compared" || q[mv + 2] != "to") malformed(q, "expected 'move compared to'");
    out.ref1 = parse_reference(q, 3, mv);
    out.ref2 = parse_reference(q, mv + 3, last);
  } else if (starts_with(q, {"when", "does"})) {
    out.kind = Kind::kCompareWhen;
    const auto st = find_word(q, "start", 2);
    if (st + 3 >= last || q[st + 1] != "moving" || q[st + 2] != "compared" || q[st + 3] != "to") {
      malformed(q, "expected 'start moving compared to'");
    }
    out.ref1 = parse_reference(q, 2, st);
    out.ref2 = parse_reference(q, st + 4, last);
  } else {
    malformed(q, "no matching template");
  }
  return out;
}

inline std::vector<int> matching_objects(const Scene& scene, const ObjectFilter& f) {
  std::vector<int> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (f.matches(scene.objects[i])) out.push_back(static_cast<int>(i));
  return out;
}

// Applies "one"/"ones" substitution from the previous referent.
inline ObjectFilter resolve_filter(const Description& d, const std::optional<Referent>& prev) {
  ObjectFilter f = d.filter;
  if (d.noun == Noun::kOne) {
    if (!prev || prev->shape < 0) throw DataError("unresolvable referent: 'one' without an earlier shape");
    f.shape = prev->shape;
  }
  return f;
}

inline int resolve_object(const Scene& scene, const Reference& r, const std::optional<Referent>& prev) {
  if (r.pronoun) {
    if (!prev || prev->object < 0) throw DataError("unresolvable referent: 'it' without an earlier object");
    return prev->object;
  }
  const auto hits = matching_objects(scene, resolve_filter(r.desc, prev));
  if (hits.size() != 1) {
    throw DataError("reference matches " + std::to_string(hits.size()) + " objects, expected exactly one");
  }
  return hits.front();
}

inline Referent referent_of(const Scene& scene, const Question& q, const std::optional<Referent>& prev) {
  Referent r;
  switch (q.kind) {
    case Kind::kExist:
    case Kind::kCount:
      if (q.desc.noun != Noun::kThing) r.shape = resolve_filter(q.desc, prev).shape;
      break;
    case Kind::kAttribute:
    case Kind::kActionFirst:
    case Kind::kActionCount:
      r.object = resolve_object(scene, q.ref1, prev);
      r.shape = scene.objects[static_cast<std::size_t>(r.object)].shape;
      break;
    case Kind::kCompareOften:
    case Kind::kCompareWhen:
      break;
  }
  return r;
}

inline int event_count(const Scene& scene, int object, int action = -1) {
  int n = 0;
  for (const auto& e : scene.events)
    if (e.object == object && (action < 0 || e.action == action)) ++n;
  return n;
}

inline const SceneEvent* first_event(const Scene& scene, int object) {
  const SceneEvent* best = nullptr;
  for (const auto& e : scene.events)
    if (e.object == object && (!best || e.begin < best->begin)) best = &e;
  return best;
}

inline std::string evaluate(const Scene& scene, const Question& q, const std::optional<Referent>& prev) {
  switch (q.kind) {
    case Kind::kExist:
      return matching_objects(scene, resolve_filter(q.desc, prev)).empty() ? "no" : "yes";
    case Kind::kCount:
      return std::to_string(matching_objects(scene, resolve_filter(q.desc, prev)).size());
    case Kind::kAttribute: {
      const auto& o = scene.objects[static_cast<std::size_t>(resolve_object(scene, q.ref1, prev))];
      switch (q.attribute) {
        case AttributeType::kShape: return std::string(kShapeNames[static_cast<std::size_t>(o.shape)]);
        case AttributeType::kColor: return std::string(kColorNames[static_cast<std::size_t>(o.color)]);
        case AttributeType::kMaterial: return std::string(kMaterialNames[static_cast<std::size_t>(o.material)]);
        case AttributeType::kSize: return std::string(kSizeNames[static_cast<std::size_t>(o.size)]);
      }
      break;
    }
    case Kind::kActionFirst: {
      const auto* e = first_event(scene, resolve_object(scene, q.ref1, prev));
      return e ? std::string(kActionNames[static_cast<std::size_t>(e->action)]) : "none";
    }
    case Kind::kActionCount:
      return std::to_string(event_count(scene, resolve_object(scene, q.ref1, prev), q.action));
    case Kind::kCompareOften: {
      const auto a = event_count(scene, resolve_object(scene, q.ref1, prev));
      const auto b = event_count(scene, resolve_object(scene, q.ref2, prev));
      return a > b ? "more" : a < b ? "fewer" : "same";
    }
    case Kind::kCompareWhen: {
      const auto* a = first_event(scene, resolve_object(scene, q.ref1, prev));
      const auto* b = first_event(scene, resolve_object(scene, q.ref2, prev));
      if (!a || !b) return "none";
      return a->begin < b->begin ? "before" : a->begin > b->begin ? "after" : "simultaneously";
    }
  }
  throw DataError("unhandled question kind");
}

// Referent carried into the next turn after the given history of questions.
inline std::optional<Referent> resolve_history(const Scene& scene,
                                               const std::vector<std::vector<std::string>>& history) {
  std::optional<Referent> prev;
  for (const auto& q : history) prev = referent_of(scene, parse_question(q), prev);
  return prev;
}

inline std::string answer_text(const Scene& scene, const std::vector<std::vector<std::string>>& history,
                               const std::vector<std::string>& question) {
  return evaluate(scene, parse_question(question), resolve_history(scene, history));
}

// Candidate index of the exact answer. Throws DataError when a pronoun cannot
// be resolved from `history`; never guesses.
inline std::size_t oracle_answer(const Scene& scene, const std::vector<std::vector<std::string>>& history,
                                 const std::vector<std::string>& question) {
  return CandidateSet::standard().index(answer_text(scene, history, question));
}

}  // namespace olvit::oracle
