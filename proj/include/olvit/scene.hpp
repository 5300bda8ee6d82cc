#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "olvit/error.hpp"
#include "olvit/rng.hpp"
#include "olvit/vocab.hpp"

namespace olvit {

// T equidistant frame indices over a video of F frames: round(j·(F−1)/(T−1)).
inline std::vector<int> sample_frame_indices(int num_frames, int count) {
  if (num_frames < 1 || count < 1) throw ConfigError("sample_frame_indices: F and T must be >= 1");
  std::vector<int> idx(static_cast<std::size_t>(count), 0);
  if (count == 1 || num_frames == 1) return idx;
  for (int j = 0; j < count; ++j) {
    idx[static_cast<std::size_t>(j)] =
        static_cast<int>(std::lround(static_cast<double>(j) * (num_frames - 1) / static_cast<double>(count - 1)));
  }
  return idx;
}

struct SceneObject {
  int shape = 0, color = 0, material = 0, size = 0;
  std::vector<std::array<double, 2>> trajectory;  // (x, y) per frame

  auto attributes() const { return std::tuple(shape, color, material, size); }
  bool operator==(const SceneObject&) const = default;
};

// An action performed by one object over frames [begin, end).
struct SceneEvent {
  int object = 0;
  int action = 0;
  int begin = 0;
  int end = 0;
  bool operator==(const SceneEvent&) const = default;
};

struct Scene {
  int num_frames = 0;
  std::vector<SceneObject> objects;
  std::vector<SceneEvent> events;
  bool operator==(const Scene&) const = default;
};

struct SceneConfig {
  int num_frames = 40;        // F
  int sampled_frames = 20;    // T, the grid events are aligned to
  int max_objects = 12;       // N_o
  double event_rate = 0.35;   // chance an object acts within one sampling gap
  double step = 0.1;          // displacement per completed action
};

// Unit displacement direction of each action in the synthetic kinematics. The
// four directions sit at 30, 70, 110 and 150 degrees: every action moves the
// object upward, and the horizontal component tells the actions apart.
inline std::array<double, 2> action_direction(int action) {
  switch (action) {
    case 0: return {0.8660254037844387, 0.5};    // slide
    case 1: return {0.3420201433256687, 0.9396926207859084};   // rotate
    case 2: return {-0.3420201433256687, 0.9396926207859084};  // fly
    default: return {-0.8660254037844387, 0.5};  // contain
  }
}

// Objects with unique attribute tuples; every sampling gap holds at most one
// event per object, spanning exactly the frames of that gap, so every event is
// visible as a displacement between two consecutive sampled frames.
inline Scene generate_scene(std::uint64_t seed, int n_objects, const SceneConfig& cfg) {
  if (n_objects > cfg.max_objects) {
    throw ConfigError("generate_scene: " + std::to_string(n_objects) + " objects exceed capacity N_o=" +
                      std::to_string(cfg.max_objects));
  }
  if (n_objects < 2) throw ConfigError("generate_scene: need at least 2 objects");
  if (cfg.num_frames < cfg.sampled_frames) throw ConfigError("generate_scene: F must be >= T");
  Rng rng(seed);
  Scene scene;
  scene.num_frames = cfg.num_frames;
  std::set<std::tuple<int, int, int, int>> seen;
  while (static_cast<int>(scene.objects.size()) < n_objects) {
    SceneObject o;
    o.shape = rng.uniform_int(0, 3);
    o.color = rng.uniform_int(0, 7);
    o.material = rng.uniform_int(0, 1);
    o.size = rng.uniform_int(0, 1);
    if (!seen.insert(o.attributes()).second) continue;
    scene.objects.push_back(o);
  }
  const auto grid = sample_frame_indices(cfg.num_frames, cfg.sampled_frames);
  for (std::size_t g = 1; g < grid.size(); ++g) {
    for (int n = 0; n < n_objects; ++n) {
      if (!rng.bernoulli(cfg.event_rate)) continue;
      scene.events.push_back({n, rng.uniform_int(0, 3), grid[g - 1] + 1, grid[g] + 1});
    }
  }
  for (int n = 0; n < n_objects; ++n) {
    auto& o = scene.objects[static_cast<std::size_t>(n)];
    std::array<double, 2> pos = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    o.trajectory.resize(static_cast<std::size_t>(cfg.num_frames));
    for (int f = 0; f < cfg.num_frames; ++f) {
      for (const auto& e : scene.events) {
        if (e.object != n || f < e.begin || f >= e.end) continue;
        const auto dir = action_direction(e.action);
        const double per_frame = cfg.step / static_cast<double>(e.end - e.begin);
        pos[0] += dir[0] * per_frame;
        pos[1] += dir[1] * per_frame;
      }
      o.trajectory[static_cast<std::size_t>(f)] = pos;
    }
  }
  return scene;
}

}  // namespace olvit
