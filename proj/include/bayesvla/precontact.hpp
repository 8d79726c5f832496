#pragma once

#include <string>
#include <vector>

#include "bayesvla/modelcfg.hpp"

namespace bayesvla::pre {

using geo::Pose;
using geo::Vec3;
using nn::Tensor;

// Pre-contact phase: a language-agnostic contact-pose proposer (the strong
// pre-trained prior stand-in) plus a text-aware cross-attention scorer that
// selects the proposal matching the instruction.

struct Proposal {
  Pose pose_world;
  Pose pose_cam;
  double yaw = 0.0;
  int patch_index = -1;
  double row = 0.0, col = 0.0;  // continuous patch coordinates
  double occupancy_score = 0.0;
};

struct ProposalSet {
  std::vector<Proposal> proposals;
  std::string source = "analytic";
  std::vector<double> scores;  // softmax probabilities once scored
};

// Analytic proposer: for every visible object patch emit K yaw-varied
// top-down poses at the observed grasp point. Proposal k=0 is exact; k>=1
// carry Gaussian positional jitter (sigma 5 mm, clamped to 1 cm). Truncation
// to n_max is round-robin per object so every object keeps a proposal.
inline ProposalSet propose_contacts(const sim::Observation& obs,
                                    const ModelConfig& cfg, Rng& rng) {
  struct Site {
    int patch = 0;
    Vec3 grasp;
    double score = 0.0;
  };
  std::vector<Site> sites;
  for (int idx = 0; idx < obs.grid * obs.grid; ++idx) {
    const int ent = obs.entity_id[idx];
    if (ent < 0 || ent >= 1000) continue;  // objects only
    const float depth = obs.features[static_cast<std::size_t>(idx) * sim::kPatchFeatures + 14];
    sites.push_back({idx, obs.grasp_points[idx], 1.0 - 0.5 * depth});
  }
  if (sites.empty()) throw Error("propose_contacts: no object patches in view");
  std::sort(sites.begin(), sites.end(),
            [](const Site& a, const Site& b) { return a.score > b.score; });

  ProposalSet set;
  const Pose cam_inv = obs.camera.pose.inverse();
  for (int k = 0; k < cfg.proposals_per_object; ++k) {
    for (const auto& site : sites) {
      if (static_cast<int>(set.proposals.size()) >= cfg.n_max) break;
      Proposal p;
      p.yaw = k * (M_PI / cfg.proposals_per_object);
      Vec3 pos = site.grasp;
      if (k > 0) {
        auto clamp = [](double v) { return std::max(-0.01, std::min(0.01, v)); };
        pos.x += clamp(rng.normal() * 0.005);
        pos.y += clamp(rng.normal() * 0.005);
      }
      p.pose_world = {sim::top_down_rotation(p.yaw), pos};
      p.pose_cam = cam_inv * p.pose_world;
      p.patch_index = site.patch;
      double r = 0.0, c = 0.0;
      obs.camera.patch_coords(pos, r, c);
      p.row = r;
      p.col = c;
      p.occupancy_score = site.score;
      set.proposals.push_back(p);
    }
  }
  return set;
}

// Flag-gated learned alternative to the analytic proposer: a small regression
// net mapping occupied patch features (plus ray) to a grasp-point offset.
template <class T>
struct LearnedProposer {
  nn::Linear<T> fc1, fc2;

  LearnedProposer() = default;
  explicit LearnedProposer(Rng& rng)
      : fc1(sim::kPatchFeatures + 6, 32, rng), fc2(32, 3, rng) {}

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    fc1.collect(out, "proposer.fc1");
    fc2.collect(out, "proposer.fc2");
    return out;
  }

  Vec3 predict(const sim::Observation& obs, int patch_index) const {
    std::vector<T> in(sim::kPatchFeatures + 6);
    for (int k = 0; k < sim::kPatchFeatures; ++k)
      in[k] = static_cast<T>(
          obs.features[static_cast<std::size_t>(patch_index) * sim::kPatchFeatures + k]);
    const auto& ray = obs.rays[patch_index];
    in[sim::kPatchFeatures + 0] = static_cast<T>(ray.d.x);
    in[sim::kPatchFeatures + 1] = static_cast<T>(ray.d.y);
    in[sim::kPatchFeatures + 2] = static_cast<T>(ray.d.z);
    in[sim::kPatchFeatures + 3] = static_cast<T>(ray.m.x);
    in[sim::kPatchFeatures + 4] = static_cast<T>(ray.m.y);
    in[sim::kPatchFeatures + 5] = static_cast<T>(ray.m.z);
    auto out = fc2.forward(nn::gelu(fc1.forward(
        Tensor<T>::from(1, sim::kPatchFeatures + 6, std::move(in)))));
    // offset from the patch ray's closest point to the table plane
    const Vec3 o = obs.camera.pose.t;
    const double tz = ray.d.z != 0.0 ? -o.z / ray.d.z : 0.0;
    const Vec3 base = o + ray.d * tz;
    return {base.x + static_cast<double>(out.at(0, 0)),
            base.y + static_cast<double>(out.at(0, 1)),
            0.07 + static_cast<double>(out.at(0, 2))};
  }
};

// --- text-aware scorer ------------------------------------------------------

template <class T>
struct ScorerNet {
  ModelConfig cfg;
  nn::Linear<T> enc1, enc2;      // proposal features -> action tokens
  nn::Linear<T> proj_vl;         // text-aware vision tokens -> d
  nn::Linear<T> proj_text;       // text tokens -> d
  std::vector<nn::CrossBlock<T>> blocks;
  nn::LayerNorm<T> final_ln;
  nn::Linear<T> head;

  ScorerNet() = default;
  ScorerNet(const ModelConfig& c, Rng& rng)
      : cfg(c),
        enc1(9, c.d_model, rng),
        enc2(c.d_model, c.d_model, rng),
        proj_vl(c.vl.dim, c.d_model, rng),
        proj_text(c.vl.dim, c.d_model, rng),
        final_ln(c.d_model),
        head(c.d_model, 1, rng) {
    for (int i = 0; i < c.precontact_blocks; ++i)
      blocks.emplace_back(c.d_model, c.mlp_hidden, rng);
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    enc1.collect(out, "scorer.enc1");
    enc2.collect(out, "scorer.enc2");
    proj_vl.collect(out, "scorer.proj_vl");
    proj_text.collect(out, "scorer.proj_text");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, "scorer.block." + std::to_string(i));
    final_ln.collect(out, "scorer.final_ln");
    head.collect(out, "scorer.head");
    return out;
  }

  // logits over N proposals
  Tensor<T> forward(const ProposalSet& set, const vl::VLTokens& tokens,
                    int grid) const {
    const int n = static_cast<int>(set.proposals.size());
    if (n == 0) throw Error("score_proposals: empty proposal set");
    std::vector<T> feats;
    std::vector<std::pair<double, double>> qpos;
    feats.reserve(static_cast<std::size_t>(n) * 9);
    for (const auto& p : set.proposals) {
      const auto r6 = geo::rot6d_encode(p.pose_cam.R);
      feats.push_back(static_cast<T>(p.pose_cam.t.x));
      feats.push_back(static_cast<T>(p.pose_cam.t.y));
      feats.push_back(static_cast<T>(p.pose_cam.t.z));
      for (double v : r6) feats.push_back(static_cast<T>(v));
      qpos.emplace_back(p.row, p.col);
    }
    Tensor<T> x = enc2.forward(nn::gelu(enc1.forward(
        Tensor<T>::from(n, 9, std::move(feats)))));
    Tensor<T> mem_vis = proj_vl.forward(tokens.text_aware);
    Tensor<T> mem_txt = proj_text.forward(tokens.text);
    std::vector<std::pair<double, double>> vis_pos;
    for (int r = 0; r < grid; ++r)
      for (int c = 0; c < grid; ++c) vis_pos.emplace_back(r, c);
    const auto qp = nn::Positions::twod(qpos);
    const auto vp = nn::Positions::twod(vis_pos);
    for (const auto& block : blocks)
      x = block.forward(x, qp, mem_vis, vp, mem_txt, cfg.attention_scale);
    return nn::reshape(head.forward(final_ln.forward(x)), 1, n);
  }
};

inline std::vector<double> score_proposals(ScorerNet<float>& net,
                                           const ProposalSet& set,
                                           const vl::VLTokens& tokens, int grid) {
  auto probs = nn::softmax_rows(net.forward(set, tokens, grid));
  std::vector<double> out(probs.data().begin(), probs.data().end());
  return out;
}

// argmax with deterministic lowest-index tie-break
inline int select_contact_index(const std::vector<double>& scores) {
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  return best;
}

inline Pose select_contact(const ProposalSet& set) {
  if (set.scores.size() != set.proposals.size())
    throw Error("select_contact: proposals are unscored");
  return set.proposals[select_contact_index(set.scores)].pose_world;
}

// --- training -----------------------------------------------------------------

struct PrecontactTrainReport {
  std::vector<float> losses;
  int skipped_episodes = 0;
};

inline ProposalSet episode_proposals(const sim::Episode& ep,
                                     const sim::Observation& obs,
                                     const ModelConfig& cfg,
                                     std::uint64_t world_seed) {
  Rng rng(derive_seed(world_seed, "proposals", ep.episode_seed));
  return propose_contacts(obs, cfg, rng);
}

// positive = proposal nearest the expert contact pose (position distance,
// ties broken by yaw distance mod pi)
inline int positive_proposal(const ProposalSet& set, const Pose& contact,
                             double grasp_tolerance) {
  int best = -1;
  double best_pos = 1e9, best_yaw = 1e9;
  const double contact_yaw = std::atan2(contact.R(1, 0), contact.R(0, 0));
  for (std::size_t i = 0; i < set.proposals.size(); ++i) {
    const double d = (set.proposals[i].pose_world.t - contact.t).norm();
    double dy = std::fmod(std::abs(set.proposals[i].yaw - contact_yaw), M_PI);
    dy = std::min(dy, M_PI - dy);
    if (d < best_pos - 1e-12 || (std::abs(d - best_pos) <= 1e-12 && dy < best_yaw)) {
      best_pos = d;
      best_yaw = dy;
      best = static_cast<int>(i);
    }
  }
  if (best < 0 || best_pos > grasp_tolerance) return -1;
  return best;
}

struct EpisodeCache {
  sim::Observation obs;
  ProposalSet proposals;
  vl::VLTokens tokens;
  int positive = -1;
};

inline EpisodeCache build_cache(const sim::Episode& ep, const sim::WorldConfig& wcfg,
                                const ModelConfig& mcfg, vl::VlEncoder<float>& enc) {
  EpisodeCache c;
  c.obs = sim::render_patches(ep.scene, wcfg);
  c.proposals = episode_proposals(ep, c.obs, mcfg, wcfg.seed);
  c.tokens = enc.encode(c.obs, ep.instruction.tokens);
  c.positive = positive_proposal(c.proposals, ep.contact_pose, wcfg.grasp_tolerance);
  return c;
}

inline PrecontactTrainReport train_precontact_likelihood(
    ScorerNet<float>& net, const data::Corpus& corpus, const sim::WorldConfig& wcfg,
    const TrainConfig& tcfg, vl::VlEncoder<float>& enc, std::uint64_t seed,
    std::vector<std::string>* metrics = nullptr) {
  PrecontactTrainReport report;
  const auto idx = corpus.indices_of(data::Split::Likelihood);
  if (idx.empty()) throw ConfigError("precontact training: empty likelihood split");
  std::vector<EpisodeCache> cache;
  for (int i : idx) {
    EpisodeCache c = build_cache(corpus.episodes[i], wcfg, net.cfg, enc);
    if (c.positive < 0) {
      ++report.skipped_episodes;
      continue;
    }
    cache.push_back(std::move(c));
  }
  if (cache.empty()) throw ConfigError("precontact training: no usable episodes");

  auto params = net.params();
  nn::AdamW<float> opt(tcfg.lr, tcfg.weight_decay);
  Rng rng(derive_seed(seed, "precontact_train"));
  for (int step = 0; step < tcfg.precontact_steps; ++step) {
    nn::zero_grads(params);
    Tensor<float> total = Tensor<float>::scalar(0.0f);
    const int batch = std::min<int>(tcfg.batch, static_cast<int>(cache.size()));
    for (int b = 0; b < batch; ++b) {
      const auto& c = cache[rng.next_u64() % cache.size()];
      Tensor<float> logits = net.forward(c.proposals, c.tokens, wcfg.grid);
      total = nn::add(total, nn::cross_entropy_mean(logits, {c.positive}));
    }
    Tensor<float> loss = nn::scale(total, 1.0f / batch);
    loss.backward();
    opt.step(params);
    report.losses.push_back(loss.item());
    if (metrics)
      metrics->push_back(std::to_string(step) + "," + std::to_string(loss.item()) +
                         "," + std::to_string(tcfg.lr) + ",likelihood_pre");
  }
  return report;
}

// checkpoint glue
inline Checkpoint scorer_checkpoint(ScorerNet<float>& net, const std::string& cfg_hash) {
  Checkpoint ck;
  ck.set_meta("kind", "precontact_scorer");
  ck.set_meta("attention_scale", net.cfg.attention_scale ? "1" : "0");
  ck.set_meta("config_hash", cfg_hash);
  nlohmann::json j = net.cfg;
  ck.set_meta("model_config", j.dump());
  ck.put_params(net.params());
  return ck;
}

inline ScorerNet<float> scorer_from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg = nlohmann::json::parse(ck.get_meta("model_config"));
  Rng rng(0);
  ScorerNet<float> net(cfg, rng);
  auto params = net.params();
  ck.load_params(params);
  return net;
}

}  // namespace bayesvla::pre
