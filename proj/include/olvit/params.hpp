#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/tensor.hpp"

namespace olvit {

// How a parameter is initialised and whether weight decay applies to it.
enum class ParamKind {
  kWeight,     // uniform(±1/sqrt(fan_in)), decayed
  kEmbedding,  // uniform(±1/sqrt(width)), not decayed (positions, [CLS])
  kBias,       // zeros, not decayed (biases and LN shifts)
  kGain,       // ones, not decayed (LN gains)
};

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  ParamKind kind;

  bool decays() const { return kind == ParamKind::kWeight; }
};

// Ordered registry of learnable tensors. Registration order is the canonical
// order for checkpoints and optimizer state.
template <class T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, ParamKind kind, Rng& rng) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    const auto n = shape_numel(shape);
    std::vector<T> init(n);
    switch (kind) {
      case ParamKind::kWeight:
      case ParamKind::kEmbedding: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape.back()));
        for (auto& v : init) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::kBias:
        std::fill(init.begin(), init.end(), T(0));
        break;
      case ParamKind::kGain:
        std::fill(init.begin(), init.end(), T(1));
        break;
    }
    Tensor<T> t(std::move(shape), std::move(init), true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, kind});
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].value;
  }

  std::vector<Param<T>>& entries() { return entries_; }
  const std::vector<Param<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p.value.zero_grad();
  }

 private:
  std::vector<Param<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace olvit
