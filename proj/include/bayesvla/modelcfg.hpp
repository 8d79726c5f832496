#pragma once

#include <json.hpp>

#include "bayesvla/vlencoder.hpp"

namespace bayesvla {

struct ModelConfig {
  int d_model = 24;
  int mlp_hidden = 48;
  int precontact_blocks = 4;
  int vision_blocks = 4;
  int prior_blocks = 4;
  int injected_blocks = 4;
  bool attention_scale = true;
  int n_max = 16;
  int proposals_per_object = 4;
  double jitter_sigma = 0.005;
  int history_chunks = 2;
  int ddpm_steps = 100;
  int ddim_steps = 20;
  double beta_min = 1e-3;
  double beta_max = 0.2;
  int time_embed_dim = 16;
  vl::VlConfig vl;
};

struct TrainConfig {
  int batch = 32;
  int prior_steps = 4000;
  int likelihood_steps = 2000;
  int precontact_steps = 1500;
  int pretrain_vl_steps = 1200;
  float lr = 1e-4f;
  float weight_decay = 1e-2f;
  int episodes = 1200;
  int pretrain_episodes = 600;
  double split_fraction = 0.5;
  std::uint64_t split_seed = 7;
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"d_model", m.d_model},
       {"mlp_hidden", m.mlp_hidden},
       {"precontact_blocks", m.precontact_blocks},
       {"vision_blocks", m.vision_blocks},
       {"prior_blocks", m.prior_blocks},
       {"injected_blocks", m.injected_blocks},
       {"attention_scale", m.attention_scale},
       {"n_max", m.n_max},
       {"proposals_per_object", m.proposals_per_object},
       {"jitter_sigma", m.jitter_sigma},
       {"history_chunks", m.history_chunks},
       {"ddpm_steps", m.ddpm_steps},
       {"ddim_steps", m.ddim_steps},
       {"beta_min", m.beta_min},
       {"beta_max", m.beta_max},
       {"time_embed_dim", m.time_embed_dim},
       {"vl_dim", m.vl.dim},
       {"vl_blocks", m.vl.blocks},
       {"vl_mlp_hidden", m.vl.mlp_hidden}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  j.at("d_model").get_to(m.d_model);
  j.at("mlp_hidden").get_to(m.mlp_hidden);
  j.at("precontact_blocks").get_to(m.precontact_blocks);
  j.at("vision_blocks").get_to(m.vision_blocks);
  j.at("prior_blocks").get_to(m.prior_blocks);
  j.at("injected_blocks").get_to(m.injected_blocks);
  j.at("attention_scale").get_to(m.attention_scale);
  j.at("n_max").get_to(m.n_max);
  j.at("proposals_per_object").get_to(m.proposals_per_object);
  j.at("jitter_sigma").get_to(m.jitter_sigma);
  j.at("history_chunks").get_to(m.history_chunks);
  j.at("ddpm_steps").get_to(m.ddpm_steps);
  j.at("ddim_steps").get_to(m.ddim_steps);
  j.at("beta_min").get_to(m.beta_min);
  j.at("beta_max").get_to(m.beta_max);
  j.at("time_embed_dim").get_to(m.time_embed_dim);
  j.at("vl_dim").get_to(m.vl.dim);
  j.at("vl_blocks").get_to(m.vl.blocks);
  j.at("vl_mlp_hidden").get_to(m.vl.mlp_hidden);
}

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = {{"batch", t.batch},
       {"prior_steps", t.prior_steps},
       {"likelihood_steps", t.likelihood_steps},
       {"precontact_steps", t.precontact_steps},
       {"pretrain_vl_steps", t.pretrain_vl_steps},
       {"lr", t.lr},
       {"weight_decay", t.weight_decay},
       {"episodes", t.episodes},
       {"pretrain_episodes", t.pretrain_episodes},
       {"split_fraction", t.split_fraction},
       {"split_seed", t.split_seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  j.at("batch").get_to(t.batch);
  j.at("prior_steps").get_to(t.prior_steps);
  j.at("likelihood_steps").get_to(t.likelihood_steps);
  j.at("precontact_steps").get_to(t.precontact_steps);
  j.at("pretrain_vl_steps").get_to(t.pretrain_vl_steps);
  j.at("lr").get_to(t.lr);
  j.at("weight_decay").get_to(t.weight_decay);
  j.at("episodes").get_to(t.episodes);
  j.at("pretrain_episodes").get_to(t.pretrain_episodes);
  j.at("split_fraction").get_to(t.split_fraction);
  j.at("split_seed").get_to(t.split_seed);
}

}  // namespace bayesvla
