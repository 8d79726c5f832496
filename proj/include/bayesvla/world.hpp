#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayesvla/errors.hpp"
#include "bayesvla/geometry.hpp"
#include "bayesvla/hash.hpp"
#include "bayesvla/rng.hpp"

namespace bayesvla::sim {

using geo::Camera;
using geo::Mat3;
using geo::Pose;
using geo::Vec3;

constexpr int kNumColors = 5;   // red green blue yellow purple
constexpr int kNumShapes = 3;   // cube sphere bar
constexpr int kNumKinds = 3;    // plate bowl box
constexpr int kPatchFeatures = 15;

inline double container_radius(int kind) {
  switch (kind) {
    case 0: return 0.06;  // plate
    case 1: return 0.04;  // bowl
    default: return 0.05;  // box
  }
}

struct ObjectSpec {
  int id = 0;
  int color = 0;
  int shape = 0;
  int size = 0;  // 0 small, 1 large
  double yaw = 0.0;
  Vec3 position;  // centroid, world frame

  double rest_height() const { return size == 0 ? 0.02 : 0.03; }
  Vec3 grasp_point() const { return {position.x, position.y, position.z + 0.05}; }
};

struct ContainerSpec {
  int id = 0;
  int kind = 0;
  int color = 0;
  Vec3 position;
  double radius = 0.05;
};

struct Scene {
  std::vector<ObjectSpec> objects;
  std::vector<ContainerSpec> containers;
  Camera camera;
  std::uint64_t scene_seed = 0;
};

struct CameraRange {
  double azimuth_min = -0.8, azimuth_max = 0.8;
  double elev_min = 0.95, elev_max = 1.31;  // radians above horizon
  double dist_min = 0.9, dist_max = 1.2;
};

struct WorldConfig {
  std::uint64_t seed = 1;
  int grid = 8;
  int horizon = 16;  // actions per chunk
  int objects_min = 3, objects_max = 5;
  int containers_min = 1, containers_max = 2;
  std::string mode = "diverse";  // or "biased"
  int train_synonyms = 2;
  int scene_repeat = 4;
  CameraRange camera;
  std::vector<std::pair<int, int>> excluded_combos;  // (color, shape) held out
  double feature_noise = 0.0;  // additive patch-feature noise at encode time

  // fixed simulator constants, recorded so the config hash covers them
  double grasp_tolerance = 0.015;
  double lift_height = 0.25;
  double place_height = 0.10;
  double approach_height = 0.05;
  double depth_max = 2.0;
  int max_chunks = 4;

  void validate() const {
    if (horizon < 8) throw ConfigError("world: horizon must be >= 8");
    if (grid != 4 && grid != 8 && grid != 16)
      throw ConfigError("world: grid must be one of 4, 8, 16");
    if (objects_min < 3 || objects_max > 5 || objects_min > objects_max)
      throw ConfigError("world: object count range must fit [3, 5]");
    if (containers_min < 1 || containers_max > 2 || containers_min > containers_max)
      throw ConfigError("world: container count range must fit [1, 2]");
    if (mode != "diverse" && mode != "biased" && mode != "caption")
      throw ConfigError("world: unknown language diversity mode: " + mode);
  }
};

inline void to_json(nlohmann::json& j, const CameraRange& c) {
  j = {{"azimuth_min", c.azimuth_min}, {"azimuth_max", c.azimuth_max},
       {"elev_min", c.elev_min},       {"elev_max", c.elev_max},
       {"dist_min", c.dist_min},       {"dist_max", c.dist_max}};
}

inline void from_json(const nlohmann::json& j, CameraRange& c) {
  j.at("azimuth_min").get_to(c.azimuth_min);
  j.at("azimuth_max").get_to(c.azimuth_max);
  j.at("elev_min").get_to(c.elev_min);
  j.at("elev_max").get_to(c.elev_max);
  j.at("dist_min").get_to(c.dist_min);
  j.at("dist_max").get_to(c.dist_max);
}

inline void to_json(nlohmann::json& j, const WorldConfig& w) {
  j = {{"seed", w.seed},
       {"grid", w.grid},
       {"horizon", w.horizon},
       {"objects_min", w.objects_min},
       {"objects_max", w.objects_max},
       {"containers_min", w.containers_min},
       {"containers_max", w.containers_max},
       {"mode", w.mode},
       {"train_synonyms", w.train_synonyms},
       {"scene_repeat", w.scene_repeat},
       {"camera", w.camera},
       {"excluded_combos", w.excluded_combos},
       {"feature_noise", w.feature_noise},
       {"grasp_tolerance", w.grasp_tolerance},
       {"lift_height", w.lift_height},
       {"place_height", w.place_height},
       {"approach_height", w.approach_height},
       {"depth_max", w.depth_max},
       {"max_chunks", w.max_chunks}};
}

inline void from_json(const nlohmann::json& j, WorldConfig& w) {
  j.at("seed").get_to(w.seed);
  j.at("grid").get_to(w.grid);
  j.at("horizon").get_to(w.horizon);
  j.at("objects_min").get_to(w.objects_min);
  j.at("objects_max").get_to(w.objects_max);
  j.at("containers_min").get_to(w.containers_min);
  j.at("containers_max").get_to(w.containers_max);
  j.at("mode").get_to(w.mode);
  j.at("train_synonyms").get_to(w.train_synonyms);
  j.at("scene_repeat").get_to(w.scene_repeat);
  j.at("camera").get_to(w.camera);
  j.at("excluded_combos").get_to(w.excluded_combos);
  j.at("feature_noise").get_to(w.feature_noise);
  j.at("grasp_tolerance").get_to(w.grasp_tolerance);
  j.at("lift_height").get_to(w.lift_height);
  j.at("place_height").get_to(w.place_height);
  j.at("approach_height").get_to(w.approach_height);
  j.at("depth_max").get_to(w.depth_max);
  j.at("max_chunks").get_to(w.max_chunks);
}

inline std::uint64_t config_hash(const WorldConfig& w) {
  nlohmann::json j = w;
  return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------
// Observation: per-patch feature grid plus per-patch rays. Occupied patches
// additionally carry the exact grasp point of the visible entity, standing in
// for the dense depth stream a grasp-proposal model would consume.

struct Observation {
  int grid = 0;
  std::vector<float> features;          // grid*grid x kPatchFeatures, row-major
  std::vector<geo::PluckerRay> rays;    // grid*grid
  std::vector<Vec3> grasp_points;       // valid where entity_id >= 0
  std::vector<int> entity_id;           // object id, 1000+id for containers, -1 empty
  Camera camera;

  const float* patch(int row, int col) const {
    return features.data() + (static_cast<std::size_t>(row) * grid + col) * kPatchFeatures;
  }

  std::uint64_t signature() const {
    Hasher h;
    h.update_vec(features);
    return h.digest();
  }
};

enum class RenderMode { Strict, Tolerant };

// Each entity contributes to exactly the patch containing its projected
// centroid; when two entities land in the same patch the nearer one wins.
inline Observation render_patches(const Scene& scene, const WorldConfig& cfg,
                                  RenderMode mode = RenderMode::Strict) {
  Observation obs;
  obs.grid = cfg.grid;
  obs.camera = scene.camera;
  const int n = cfg.grid * cfg.grid;
  obs.features.assign(static_cast<std::size_t>(n) * kPatchFeatures, 0.0f);
  obs.rays = geo::patch_rays(scene.camera);
  obs.grasp_points.assign(n, Vec3{});
  obs.entity_id.assign(n, -1);
  std::vector<double> depth(n, 0.0);

  auto place = [&](const Vec3& centroid, const Vec3& grasp, int ent_id,
                   auto&& fill_features) {
    int row = 0, col = 0;
    if (!scene.camera.patch_of(centroid, row, col)) {
      if (mode == RenderMode::Strict)
        throw GenerationError("render: entity projects outside the image");
      return;
    }
    const int idx = row * cfg.grid + col;
    const double range = (centroid - scene.camera.pose.t).norm();
    if (obs.entity_id[idx] >= 0 && depth[idx] <= range) return;  // occluded
    float* f = obs.features.data() + static_cast<std::size_t>(idx) * kPatchFeatures;
    for (int k = 0; k < kPatchFeatures; ++k) f[k] = 0.0f;
    fill_features(f);
    f[0] = 1.0f;
    f[14] = static_cast<float>(std::min(range / cfg.depth_max, 1.0));
    obs.entity_id[idx] = ent_id;
    obs.grasp_points[idx] = grasp;
    depth[idx] = range;
  };

  for (const auto& o : scene.objects) {
    place(o.position, o.grasp_point(), o.id, [&](float* f) {
      f[1 + o.color] = 1.0f;
      f[6 + o.shape] = 1.0f;
      f[9] = static_cast<float>(o.size);
    });
  }
  for (const auto& c : scene.containers) {
    place(c.position, {c.position.x, c.position.y, c.position.z + 0.05}, 1000 + c.id,
          [&](float* f) {
            f[10] = 1.0f;
            f[11 + c.kind] = 1.0f;
          });
  }
  return obs;
}

// true when every entity is visible and no two share a patch
inline bool entities_distinctly_visible(const Scene& scene, const WorldConfig& cfg) {
  std::vector<int> used;
  auto check = [&](const Vec3& p) {
    int row = 0, col = 0;
    if (!scene.camera.patch_of(p, row, col)) return false;
    const int idx = row * cfg.grid + col;
    for (int u : used)
      if (u == idx) return false;
    used.push_back(idx);
    return true;
  };
  for (const auto& o : scene.objects)
    if (!check(o.position)) return false;
  for (const auto& c : scene.containers)
    if (!check(c.position)) return false;
  return true;
}

inline Camera sample_camera(const CameraRange& range, int grid, Rng& rng) {
  Camera cam;
  cam.grid = grid;
  cam.focal = 56.0;
  cam.image_size = 64.0;
  cam.cx = 32.0;
  cam.cy = 32.0;
  const double az = rng.uniform(range.azimuth_min, range.azimuth_max);
  const double el = rng.uniform(range.elev_min, range.elev_max);
  const double dist = rng.uniform(range.dist_min, range.dist_max);
  const Vec3 target{0.5, 0.5, 0.0};
  const Vec3 eye{target.x - dist * std::cos(el) * std::cos(az),
                 target.y - dist * std::cos(el) * std::sin(az),
                 target.z + dist * std::sin(el)};
  cam.pose = geo::look_at(eye, target);
  return cam;
}

// Entity centres live on a 0.1 m lattice over [0.2, 0.8]^2; lattice spacing
// already enforces the 6 cm minimum separation and keeps objects outside
// every container radius.
inline const std::vector<Vec3>& lattice_sites() {
  static const std::vector<Vec3> sites = [] {
    std::vector<Vec3> s;
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        s.push_back({0.2 + 0.1 * i, 0.2 + 0.1 * j, 0.0});
    return s;
  }();
  return sites;
}

inline Scene sample_scene(const WorldConfig& cfg, std::uint64_t episode_seed) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "scene", episode_seed));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Scene scene;
    scene.scene_seed = episode_seed;
    const int n_obj = rng.randint(cfg.objects_min, cfg.objects_max);
    const int n_con = rng.randint(cfg.containers_min, cfg.containers_max);

    // distinct colors across objects; (color, shape) pairs avoid the held-out set
    std::vector<int> colors{0, 1, 2, 3, 4};
    rng.shuffle(colors);
    std::vector<int> kinds{0, 1, 2};
    rng.shuffle(kinds);

    std::vector<int> site_idx(lattice_sites().size());
    for (std::size_t i = 0; i < site_idx.size(); ++i) site_idx[i] = static_cast<int>(i);
    rng.shuffle(site_idx);

    bool ok = true;
    int site_cursor = 0;
    for (int i = 0; i < n_obj && ok; ++i) {
      ObjectSpec o;
      o.id = i;
      o.color = colors[i];
      o.shape = rng.randint(0, kNumShapes - 1);
      for (int tries = 0; tries < 10; ++tries) {
        bool excluded = false;
        for (auto [c, s] : cfg.excluded_combos)
          if (c == o.color && s == o.shape) excluded = true;
        if (!excluded) break;
        o.shape = rng.randint(0, kNumShapes - 1);
      }
      for (auto [c, s] : cfg.excluded_combos)
        if (c == o.color && s == o.shape) ok = false;  // color fully excluded
      o.size = rng.randint(0, 1);
      o.yaw = o.shape == 2 ? rng.randint(0, 3) * (M_PI / 4.0) : 0.0;
      Vec3 p = lattice_sites()[site_idx[site_cursor++]];
      p.z = o.size == 0 ? 0.02 : 0.03;
      o.position = p;
      scene.objects.push_back(o);
    }
    for (int i = 0; i < n_con; ++i) {
      ContainerSpec c;
      c.id = i;
      c.kind = kinds[i];
      c.color = rng.randint(0, kNumColors - 1);
      c.radius = container_radius(c.kind);
      Vec3 p = lattice_sites()[site_idx[site_cursor++]];
      p.z = 0.005;
      c.position = p;
      scene.containers.push_back(c);
    }
    if (!ok) continue;
    scene.camera = sample_camera(cfg.camera, cfg.grid, rng);
    if (!entities_distinctly_visible(scene, cfg)) continue;
    return scene;
  }
  throw GenerationError("sample_scene: no valid placement after 1000 attempts");
}

// deterministic "intended" entities used by the biased language mode
inline const ObjectSpec& intended_object(const Scene& scene) {
  const ObjectSpec* best = &scene.objects.front();
  for (const auto& o : scene.objects)
    if (o.color < best->color) best = &o;
  return *best;
}

inline const ContainerSpec& intended_container(const Scene& scene) {
  const ContainerSpec* best = &scene.containers.front();
  for (const auto& c : scene.containers)
    if (c.kind < best->kind) best = &c;
  return *best;
}

inline const ObjectSpec* find_object(const Scene& scene, int id) {
  for (const auto& o : scene.objects)
    if (o.id == id) return &o;
  return nullptr;
}

inline const ContainerSpec* find_container(const Scene& scene, int id) {
  for (const auto& c : scene.containers)
    if (c.id == id) return &c;
  return nullptr;
}

}  // namespace bayesvla::sim
