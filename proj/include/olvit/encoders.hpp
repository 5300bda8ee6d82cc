#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/ops.hpp"
#include "olvit/rng.hpp"
#include "olvit/scene.hpp"
#include "olvit/tensor.hpp"

namespace olvit {

// Frozen word table standing in for a pre-trained language model: i.i.d.
// Gaussian entries with standard deviation 1/sqrt(d_w). Never registered as a
// parameter, so no optimizer step can touch it.
template <class T>
class FixtureEmbedder {
 public:
  FixtureEmbedder() = default;
  FixtureEmbedder(std::uint64_t seed, std::size_t vocab_size, std::size_t d_w)
      : seed_(seed), vocab_size_(vocab_size), d_w_(d_w) {
    if (vocab_size == 0 || d_w == 0) throw ConfigError("FixtureEmbedder: empty table");
    Rng rng(hash_seed({seed, 0x66697874u}));
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d_w));
    std::vector<T> values(vocab_size * d_w);
    for (auto& v : values) v = static_cast<T>(rng.normal(0.0, sigma));
    table_ = Tensor<T>({vocab_size, d_w}, std::move(values), false);
  }

  std::uint64_t seed() const { return seed_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t width() const { return d_w_; }
  const Tensor<T>& table() const { return table_; }

  // N×d_w rows of the table; constant with respect to every tape.
  Tensor<T> lookup(const std::vector<std::size_t>& ids) const {
    for (auto id : ids) {
      if (id >= vocab_size_) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_size_));
      }
    }
    NoGradScope<T> no_grad;
    return ops::select_rows(table_, ids);
  }

 private:
  std::uint64_t seed_ = 0;
  std::size_t vocab_size_ = 0, d_w_ = 0;
  Tensor<T> table_;
};

// Latent block layout (d_obj >= 16):
//   [0, 4)   shape one-hot
//   [4, 12)  color one-hot
//   12       material, +1 metal / -1 rubber
//   13       size, +1 large / -1 small
//   [14, 16) displacement since the previous sampled frame, divided by the action step
//   [16, d_obj) zero
// An absent slot is the all-zero vector.
inline constexpr std::size_t kLatentShape = 0;
inline constexpr std::size_t kLatentColor = 4;
inline constexpr std::size_t kLatentMaterial = 12;
inline constexpr std::size_t kLatentSize = 13;
inline constexpr std::size_t kLatentMotion = 14;
inline constexpr std::size_t kLatentMinWidth = 16;

struct ObjectLatent {
  std::vector<double> mu;
  std::size_t frame_index = 0;   // t in [0, T)
  std::size_t object_index = 0;  // n in [0, N_o)
};

struct LatentConfig {
  std::size_t d_obj = 16;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  double step = 0.1;
};

// Latent of slot n at sampled frame j. `frames` are the sampled video frame indices.
inline ObjectLatent fixture_scene_latent(const Scene& scene, const std::vector<int>& frames, std::size_t j,
                                         std::size_t n, const LatentConfig& cfg, std::uint64_t episode = 0) {
  if (cfg.d_obj < kLatentMinWidth) {
    throw ConfigError("latent width d_obj=" + std::to_string(cfg.d_obj) + " is below the block layout's 16");
  }
  if (j >= frames.size()) throw IndexError("sampled frame " + std::to_string(j) + " out of range");
  ObjectLatent lat;
  lat.frame_index = j;
  lat.object_index = n;
  lat.mu.assign(cfg.d_obj, 0.0);
  if (n >= scene.objects.size()) return lat;
  const auto& o = scene.objects[n];
  lat.mu[kLatentShape + static_cast<std::size_t>(o.shape)] = 1.0;
  lat.mu[kLatentColor + static_cast<std::size_t>(o.color)] = 1.0;
  lat.mu[kLatentMaterial] = o.material == 0 ? 1.0 : -1.0;
  lat.mu[kLatentSize] = o.size == 1 ? 1.0 : -1.0;
  if (j > 0) {
    const auto& now = o.trajectory.at(static_cast<std::size_t>(frames[j]));
    const auto& before = o.trajectory.at(static_cast<std::size_t>(frames[j - 1]));
    lat.mu[kLatentMotion] = (now[0] - before[0]) / cfg.step;
    lat.mu[kLatentMotion + 1] = (now[1] - before[1]) / cfg.step;
  }
  if (cfg.noise_sigma > 0.0) {
    Rng rng(hash_seed({cfg.seed, episode, j, n}));
    for (auto& v : lat.mu) v += rng.normal(0.0, cfg.noise_sigma);
  }
  return lat;
}

// (T·N_o)×d_obj matrix, frame-major then slot.
template <class T>
Tensor<T> scene_latents(const Scene& scene, std::size_t sampled_frames, std::size_t slots, const LatentConfig& cfg,
                        std::uint64_t episode = 0) {
  if (scene.objects.size() > slots) {
    throw ConfigError("scene has " + std::to_string(scene.objects.size()) + " objects but only " +
                      std::to_string(slots) + " slots");
  }
  const auto frames = sample_frame_indices(scene.num_frames, static_cast<int>(sampled_frames));
  std::vector<T> values;
  values.reserve(sampled_frames * slots * cfg.d_obj);
  for (std::size_t j = 0; j < sampled_frames; ++j)
    for (std::size_t n = 0; n < slots; ++n)
      for (double v : fixture_scene_latent(scene, frames, j, n, cfg, episode).mu) values.push_back(static_cast<T>(v));
  return Tensor<T>({sampled_frames * slots, cfg.d_obj}, std::move(values));
}

// Row t·N_o+n = W_obj·μ + O_pos[row].
template <class T>
Tensor<T> encode_objects(const Tensor<T>& latents, const Tensor<T>& w_obj, const Tensor<T>& o_pos) {
  ops::detail::require_rank2(latents, "encode_objects");
  if (latents.dim(0) != o_pos.dim(0)) {
    throw DimensionError("encode_objects: got " + std::to_string(latents.dim(0)) + " latents, expected T·N_o = " +
                         std::to_string(o_pos.dim(0)));
  }
  return ops::add(ops::linear(latents, w_obj), o_pos);
}

// Row j = W_w·table[token_j] + W_pos[j].
template <class T>
Tensor<T> encode_text(const std::vector<std::size_t>& tokens, const FixtureEmbedder<T>& embedder, const Tensor<T>& w_w,
                      const Tensor<T>& w_pos) {
  if (tokens.empty()) throw DimensionError("encode_text: empty token sequence");
  if (tokens.size() > w_pos.dim(0)) {
    throw DimensionError("encode_text: " + std::to_string(tokens.size()) + " tokens exceed maximum sequence length " +
                         std::to_string(w_pos.dim(0)));
  }
  return ops::add(ops::linear(embedder.lookup(tokens), w_w), ops::slice_rows(w_pos, 0, tokens.size()));
}

}  // namespace olvit
