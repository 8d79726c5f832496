#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayesvla/expert.hpp"

namespace bayesvla::data {

using nlohmann::json;
using sim::Episode;
using sim::Scene;
using sim::WorldConfig;

enum class Split { Prior, Likelihood, Eval };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Prior: return "prior";
    case Split::Likelihood: return "likelihood";
    default: return "eval";
  }
}

inline Split split_from(const std::string& s) {
  if (s == "prior") return Split::Prior;
  if (s == "likelihood") return Split::Likelihood;
  if (s == "eval") return Split::Eval;
  throw IoError("unknown split label: " + s);
}

// per-channel normalization of the 10-D action vector; the gripper channel
// is carried through untouched
struct NormStats {
  std::array<double, 10> mean{};
  std::array<double, 10> std{};
  bool fitted = false;

  geo::ActionVector apply(const geo::ActionVector& a) const {
    geo::ActionVector out = a;
    for (int i = 0; i < 9; ++i) out.v[i] = (a.v[i] - mean[i]) / std[i];
    return out;
  }

  geo::ActionVector invert(const geo::ActionVector& a) const {
    geo::ActionVector out = a;
    for (int i = 0; i < 9; ++i) out.v[i] = a.v[i] * std[i] + mean[i];
    return out;
  }
};

struct Corpus {
  std::vector<Episode> episodes;
  std::vector<Split> splits;  // one label per episode
  std::string config_hash;
  NormStats stats;

  std::vector<int> indices_of(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(static_cast<int>(i));
    return out;
  }
};

// --- json codecs -----------------------------------------------------------

inline json pose_to_json(const geo::Pose& p) {
  return json{{"R", p.R.m}, {"t", {p.t.x, p.t.y, p.t.z}}};
}

inline geo::Pose pose_from_json(const json& j) {
  geo::Pose p;
  j.at("R").get_to(p.R.m);
  p.t = {j.at("t")[0].get<double>(), j.at("t")[1].get<double>(),
         j.at("t")[2].get<double>()};
  return p;
}

inline json episode_to_json(const Episode& ep) {
  json objs = json::array();
  for (const auto& o : ep.scene.objects)
    objs.push_back({{"id", o.id},
                    {"color", o.color},
                    {"shape", o.shape},
                    {"size", o.size},
                    {"yaw", o.yaw},
                    {"p", {o.position.x, o.position.y, o.position.z}}});
  json cons = json::array();
  for (const auto& c : ep.scene.containers)
    cons.push_back({{"id", c.id},
                    {"kind", c.kind},
                    {"color", c.color},
                    {"radius", c.radius},
                    {"p", {c.position.x, c.position.y, c.position.z}}});
  json chunk = json::array();
  for (const auto& a : ep.chunk) chunk.push_back(a.v);
  json poses = json::array();
  for (const auto& p : ep.poses) poses.push_back(pose_to_json(p));
  const auto& cam = ep.scene.camera;
  return json{{"seed", ep.episode_seed},
              {"objects", objs},
              {"containers", cons},
              {"camera",
               {{"focal", cam.focal},
                {"cx", cam.cx},
                {"cy", cam.cy},
                {"size", cam.image_size},
                {"grid", cam.grid},
                {"pose", pose_to_json(cam.pose)}}},
              {"instruction",
               {{"tokens", ep.instruction.tokens},
                {"target", ep.instruction.target_object_id},
                {"container", ep.instruction.target_container_id},
                {"template", ep.instruction.template_id},
                {"synonym", ep.instruction.synonym_choice}}},
              {"contact", pose_to_json(ep.contact_pose)},
              {"chunk", chunk},
              {"poses", poses},
              {"widths", ep.widths},
              {"outcome", ep.outcome}};
}

inline Episode episode_from_json(const json& j) {
  Episode ep;
  ep.episode_seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jo : j.at("objects")) {
    sim::ObjectSpec o;
    jo.at("id").get_to(o.id);
    jo.at("color").get_to(o.color);
    jo.at("shape").get_to(o.shape);
    jo.at("size").get_to(o.size);
    jo.at("yaw").get_to(o.yaw);
    o.position = {jo.at("p")[0].get<double>(), jo.at("p")[1].get<double>(),
                  jo.at("p")[2].get<double>()};
    ep.scene.objects.push_back(o);
  }
  for (const auto& jc : j.at("containers")) {
    sim::ContainerSpec c;
    jc.at("id").get_to(c.id);
    jc.at("kind").get_to(c.kind);
    jc.at("color").get_to(c.color);
    jc.at("radius").get_to(c.radius);
    c.position = {jc.at("p")[0].get<double>(), jc.at("p")[1].get<double>(),
                  jc.at("p")[2].get<double>()};
    ep.scene.containers.push_back(c);
  }
  const auto& jc = j.at("camera");
  jc.at("focal").get_to(ep.scene.camera.focal);
  jc.at("cx").get_to(ep.scene.camera.cx);
  jc.at("cy").get_to(ep.scene.camera.cy);
  jc.at("size").get_to(ep.scene.camera.image_size);
  jc.at("grid").get_to(ep.scene.camera.grid);
  ep.scene.camera.pose = pose_from_json(jc.at("pose"));
  const auto& ji = j.at("instruction");
  ji.at("tokens").get_to(ep.instruction.tokens);
  ji.at("target").get_to(ep.instruction.target_object_id);
  ji.at("container").get_to(ep.instruction.target_container_id);
  ji.at("template").get_to(ep.instruction.template_id);
  ji.at("synonym").get_to(ep.instruction.synonym_choice);
  ep.contact_pose = pose_from_json(j.at("contact"));
  for (const auto& ja : j.at("chunk")) {
    geo::ActionVector a;
    ja.get_to(a.v);
    ep.chunk.push_back(a);
  }
  for (const auto& jp : j.at("poses")) ep.poses.push_back(pose_from_json(jp));
  j.at("widths").get_to(ep.widths);
  j.at("outcome").get_to(ep.outcome);
  return ep;
}

// --- corpus file I/O: one episode per line, schema-versioned header --------

constexpr int kCorpusSchemaVersion = 1;

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open corpus for writing: " + path);
  json header{{"schema_version", kCorpusSchemaVersion},
              {"config_hash", corpus.config_hash},
              {"episodes", corpus.episodes.size()}};
  f << header.dump() << '\n';
  for (std::size_t i = 0; i < corpus.episodes.size(); ++i) {
    json line{{"split", split_name(corpus.splits[i])},
              {"episode", episode_to_json(corpus.episodes[i])}};
    f << line.dump() << '\n';
  }
  if (corpus.stats.fitted) {
    json stats{{"stats", {{"mean", corpus.stats.mean}, {"std", corpus.stats.std}}}};
    f << stats.dump() << '\n';
  }
  if (!f) throw IoError("corpus write failed: " + path);
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open corpus: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("corpus is empty: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception&) {
    throw IoError("corpus header on line 1 is not valid: " + path);
  }
  const int version = header.at("schema_version").get<int>();
  if (version != kCorpusSchemaVersion)
    throw IoError("corpus schema_version " + std::to_string(version) +
                  " is incompatible with supported version " +
                  std::to_string(kCorpusSchemaVersion));
  Corpus corpus;
  corpus.config_hash = header.at("config_hash").get<std::string>();
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corpus parse error on line " + std::to_string(line_no) + ": " +
                    e.what());
    }
    try {
      if (j.contains("stats")) {
        j.at("stats").at("mean").get_to(corpus.stats.mean);
        j.at("stats").at("std").get_to(corpus.stats.std);
        corpus.stats.fitted = true;
      } else {
        corpus.splits.push_back(split_from(j.at("split").get<std::string>()));
        corpus.episodes.push_back(episode_from_json(j.at("episode")));
      }
    } catch (const json::exception& e) {
      throw IoError("corpus parse error on line " + std::to_string(line_no) + ": " +
                    e.what());
    }
  }
  return corpus;
}

// --- split and normalization ------------------------------------------------

// disjoint split by episode; the likelihood stage sees tuples the prior never saw
inline void split_prior_likelihood(Corpus& corpus, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw ConfigError("split fraction must lie in (0, 1)");
  if (corpus.episodes.size() < 2)
    throw ConfigError("split requires at least 2 episodes");
  std::vector<int> idx(corpus.episodes.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(idx);
  const std::size_t n_prior =
      static_cast<std::size_t>(fraction * static_cast<double>(idx.size()));
  corpus.splits.assign(corpus.episodes.size(), Split::Likelihood);
  for (std::size_t i = 0; i < n_prior; ++i) corpus.splits[idx[i]] = Split::Prior;
}

inline NormStats normalize_actions(Corpus& corpus) {
  std::vector<const geo::ActionVector*> actions;
  for (std::size_t i = 0; i < corpus.episodes.size(); ++i) {
    if (corpus.splits[i] == Split::Eval) continue;
    for (const auto& a : corpus.episodes[i].chunk) actions.push_back(&a);
  }
  if (actions.empty()) throw ConfigError("normalize: corpus has no training actions");
  NormStats stats;
  for (int c = 0; c < 10; ++c) {
    double m = 0.0;
    for (const auto* a : actions) m += a->v[c];
    m /= static_cast<double>(actions.size());
    double var = 0.0;
    for (const auto* a : actions) var += (a->v[c] - m) * (a->v[c] - m);
    var /= static_cast<double>(actions.size());
    stats.mean[c] = m;
    stats.std[c] = std::sqrt(var);
  }
  stats.mean[9] = 0.0;
  stats.std[9] = 1.0;  // gripper exempt
  for (int c = 0; c < 9; ++c)
    if (stats.std[c] < 1e-9)
      throw ConfigError("normalize: zero-variance action channel " + std::to_string(c));
  stats.fitted = true;
  corpus.stats = stats;
  return stats;
}

// --- corpus generation --------------------------------------------------------

// Expert corpus over a contiguous scene-seed range starting at `seed_base`.
// Consecutive groups of `scene_repeat` episodes share a scene (fresh
// instruction draw each time), mirroring many-demos-per-scenario collection.
inline Corpus generate_corpus(const WorldConfig& cfg, int n_episodes,
                              std::uint64_t seed_base) {
  cfg.validate();
  Corpus corpus;
  corpus.config_hash = hash_hex(config_hash(cfg));
  const int repeat = std::max(1, cfg.scene_repeat);
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t scene_seed = seed_base + static_cast<std::uint64_t>(i / repeat);
    const std::uint64_t episode_seed = seed_base + static_cast<std::uint64_t>(i);
    sim::Scene scene = sim::sample_scene(cfg, scene_seed);
    Rng irng(derive_seed(cfg.seed, "instr", episode_seed));
    const sim::Instruction ins =
        sim::make_instruction(scene, cfg.mode, irng, cfg.train_synonyms);
    Episode ep = sim::expert_demo(scene, ins, cfg);
    ep.episode_seed = episode_seed;
    corpus.episodes.push_back(std::move(ep));
  }
  corpus.splits.assign(corpus.episodes.size(), Split::Prior);
  return corpus;
}

// --- diversity-bias profiling ------------------------------------------------

struct BiasProfile {
  int instruction_count = 0;                     // distinct instruction texts
  std::map<int, int> instructions_per_scene;     // histogram over unique signatures
  std::map<std::uint64_t, std::map<std::string, int>> conditional_counts;
};

inline BiasProfile bias_profile(const Corpus& corpus, const WorldConfig& cfg) {
  if (corpus.episodes.empty()) throw ConfigError("bias_profile: empty corpus");
  BiasProfile profile;
  std::set<std::string> texts;
  std::map<std::uint64_t, std::set<std::string>> per_scene;
  for (const auto& ep : corpus.episodes) {
    const auto sig = sim::render_patches(ep.scene, cfg).signature();
    const std::string text = ep.instruction.text();
    texts.insert(text);
    per_scene[sig].insert(text);
    profile.conditional_counts[sig][text]++;
  }
  profile.instruction_count = static_cast<int>(texts.size());
  for (const auto& [sig, set] : per_scene)
    profile.instructions_per_scene[static_cast<int>(set.size())]++;
  return profile;
}

}  // namespace bayesvla::data
