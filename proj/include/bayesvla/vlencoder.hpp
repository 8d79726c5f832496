#pragma once

#include <string>
#include <vector>

#include "bayesvla/checkpoint.hpp"
#include "bayesvla/dataset.hpp"
#include "bayesvla/nn.hpp"
#include "bayesvla/optim.hpp"

namespace bayesvla::vl {

using nn::Tensor;

// Contrastively pre-trained dual encoder over patch grids and instruction
// tokens. It stands in for the frozen vision-language foundation model: once
// pre-trained it is frozen, and every policy consumes its tokens.

struct VlConfig {
  int dim = 64;
  int blocks = 2;
  int mlp_hidden = 128;
  bool attention_scale = true;
};

struct VLTokens {
  Tensor<float> vision;       // G^2 x d, final-layer patch tokens
  Tensor<float> text;         // L x d, final-layer text tokens
  Tensor<float> global_text;  // 1 x d, unit norm
  std::vector<float> scores;  // per-patch cosine similarity s_i
  Tensor<float> text_aware;   // G^2 x d, s_i * v_i
};

// v_i -> s_i * v_i with s_i = cos(v_i, global_text); both sides are
// normalized inside so rescaling either argument never changes s_i
template <class T>
std::pair<Tensor<T>, Tensor<T>> text_aware(const Tensor<T>& vision_tokens,
                                           const Tensor<T>& global_text) {
  if (vision_tokens.cols() != global_text.cols())
    throw ShapeError("text_aware: token width mismatch");
  Tensor<T> scores = nn::matmul_nt(nn::l2_normalize_rows(vision_tokens),
                                   nn::l2_normalize_rows(global_text));
  return {scores, nn::scale_rows(vision_tokens, scores)};
}

template <class T = float>
struct VlEncoder {
  VlConfig cfg;
  nn::Linear<T> patch_embed;
  // vision blocks are local (no cross-patch mixing) so each patch token keeps
  // its own semantics for the per-patch similarity readout
  std::vector<nn::LocalBlock<T>> vision_blocks;
  nn::LayerNorm<T> vision_ln;
  nn::Linear<T> vision_proj;
  Tensor<T> token_table;
  std::vector<nn::EncoderBlock<T>> text_blocks;
  nn::LayerNorm<T> text_ln;
  nn::Linear<T> text_proj;
  Tensor<T> logit_scale;  // log of the contrastive temperature inverse

  VlEncoder() = default;
  VlEncoder(const VlConfig& c, Rng& rng)
      : cfg(c),
        patch_embed(sim::kPatchFeatures, c.dim, rng),
        vision_ln(c.dim),
        vision_proj(c.dim, c.dim, rng),
        token_table(Tensor<T>::randn(sim::tokenizer().vocab_size(), c.dim, rng,
                                     T(0.05), true)),
        text_ln(c.dim),
        text_proj(c.dim, c.dim, rng),
        logit_scale(Tensor<T>::scalar(static_cast<T>(std::log(10.0)), true)) {
    for (int i = 0; i < c.blocks; ++i) {
      vision_blocks.emplace_back(c.dim, c.mlp_hidden, rng);
      text_blocks.emplace_back(c.dim, c.mlp_hidden, rng);
    }
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    patch_embed.collect(out, "vl.patch_embed");
    for (std::size_t i = 0; i < vision_blocks.size(); ++i)
      vision_blocks[i].collect(out, "vl.vision." + std::to_string(i));
    vision_ln.collect(out, "vl.vision_ln");
    vision_proj.collect(out, "vl.vision_proj");
    nn::push_param(out, "vl.token_table", token_table);
    for (std::size_t i = 0; i < text_blocks.size(); ++i)
      text_blocks[i].collect(out, "vl.text." + std::to_string(i));
    text_ln.collect(out, "vl.text_ln");
    text_proj.collect(out, "vl.text_proj");
    nn::push_param(out, "vl.logit_scale", logit_scale);
    return out;
  }

  void set_frozen(bool frozen) {
    for (auto& p : params()) p.tensor.set_frozen(frozen);
  }

  bool frozen() const { return const_cast<VlEncoder*>(this)->params().front().tensor.frozen(); }

  Tensor<T> vision_tokens(const sim::Observation& obs) const {
    const int g = obs.grid;
    std::vector<T> flat(obs.features.begin(), obs.features.end());
    Tensor<T> x = nn::matmul(
        Tensor<T>::from(g * g, sim::kPatchFeatures, std::move(flat)), patch_embed.w);
    x = nn::add_rowvec(x, patch_embed.b);
    for (const auto& block : vision_blocks) x = block.forward(x);
    return vision_ln.forward(x);
  }

  // occupancy-weighted pooling: empty patches carry no scene content and
  // would otherwise drown out the handful of entity tokens
  Tensor<T> pooled_vision(const Tensor<T>& tokens, const sim::Observation& obs) const {
    const int n = tokens.rows();
    std::vector<T> w(n, T(0));
    T total = T(0);
    for (int i = 0; i < n; ++i) {
      const float occ = obs.features[static_cast<std::size_t>(i) * sim::kPatchFeatures];
      w[i] = static_cast<T>(occ);
      total += w[i];
    }
    if (total <= T(0)) {
      std::fill(w.begin(), w.end(), T(1));
      total = static_cast<T>(n);
    }
    for (auto& v : w) v = v * static_cast<T>(n) / total;
    Tensor<T> weights = Tensor<T>::from(n, 1, std::move(w));
    Tensor<T> pooled = nn::mean_over_rows(nn::scale_rows(tokens, weights));
    return nn::l2_normalize_rows(vision_proj.forward(pooled));
  }

  Tensor<T> text_tokens(const std::vector<int>& ids) const {
    if (static_cast<int>(ids.size()) > sim::kMaxTokens)
      throw Error("encoder: instruction longer than " + std::to_string(sim::kMaxTokens));
    Tensor<T> x = nn::embedding_lookup(token_table, ids);
    std::vector<double> pos(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<double>(i);
    const auto positions = nn::Positions::oned(std::move(pos));
    for (const auto& block : text_blocks)
      x = block.forward(x, positions, cfg.attention_scale);
    return text_ln.forward(x);
  }

  Tensor<T> pooled_text(const Tensor<T>& tokens) const {
    return nn::l2_normalize_rows(text_proj.forward(nn::mean_over_rows(tokens)));
  }

  // Frozen inference product: detached tokens, scores and weighted tokens.
  // Patch tokens are passed through the contrastive projection so they share
  // the text embedding's space; s_i is the cosine in that joint space.
  VLTokens encode(const sim::Observation& obs, const std::vector<int>& ids) const {
    VLTokens out;
    out.vision = nn::detach(vision_proj.forward(vision_tokens(obs)));
    Tensor<T> txt = text_tokens(ids);
    out.text = nn::detach(txt);
    out.global_text = nn::detach(pooled_text(txt));
    auto [scores, weighted] = text_aware(out.vision, out.global_text);
    out.scores = scores.data();
    out.text_aware = nn::detach(weighted);
    return out;
  }
};

// --- contrastive pre-training ---------------------------------------------------

struct PretrainReport {
  double final_loss = 0.0;
  double retrieval_top1 = 0.0;      // mean of image->text and text->image
  double matched_beats_mismatched = 0.0;
  std::vector<double> losses;
};

namespace detail {

inline int argmax_row(const std::vector<float>& row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace detail

// semantic content of an instruction: named color, shape and container kind
// (-1 when the wording does not mention a container)
inline std::array<int, 3> instruction_content(const sim::Episode& ep) {
  const auto* target = sim::find_object(ep.scene, ep.instruction.target_object_id);
  const auto* container =
      sim::find_container(ep.scene, ep.instruction.target_container_id);
  const bool nameless_container = ep.instruction.template_id >= 3;
  return {target->color, target->shape, nameless_container ? -1 : container->kind};
}

inline bool content_matches(const std::array<int, 3>& a, const std::array<int, 3>& b) {
  if (a[0] != b[0] || a[1] != b[1]) return false;
  return a[2] == -1 || b[2] == -1 || a[2] == b[2];
}

// Held-out retrieval at a fixed batch size. Instructions are paraphrases of
// their content, so a retrieval counts as correct when the retrieved item
// names the same (color, container) content as the query's pair.
inline double retrieval_top1(VlEncoder<float>& enc, const data::Corpus& corpus,
                             const sim::WorldConfig& wcfg,
                             const std::vector<int>& eval_idx, int batch,
                             std::uint64_t seed) {
  Rng rng(derive_seed(seed, "retrieval"));
  int correct = 0, total = 0;
  const int rounds = std::max<int>(1, static_cast<int>(eval_idx.size()) / batch);
  for (int round = 0; round < rounds; ++round) {
    std::vector<int> batch_idx;
    for (int b = 0; b < batch; ++b)
      batch_idx.push_back(eval_idx[rng.next_u64() % eval_idx.size()]);
    std::vector<std::vector<float>> img(batch), txt(batch);
    std::vector<std::array<int, 3>> content(batch);
    for (int b = 0; b < batch; ++b) {
      const auto& ep = corpus.episodes[batch_idx[b]];
      const auto obs = sim::render_patches(ep.scene, wcfg);
      img[b] = enc.pooled_vision(enc.vision_tokens(obs), obs).data();
      txt[b] = enc.pooled_text(enc.text_tokens(ep.instruction.tokens)).data();
      content[b] = instruction_content(ep);
    }
    for (int i = 0; i < batch; ++i) {
      std::vector<float> row(batch, 0.0f);
      for (int j = 0; j < batch; ++j)
        for (std::size_t k = 0; k < img[i].size(); ++k) row[j] += img[i][k] * txt[j][k];
      if (content_matches(content[detail::argmax_row(row)], content[i])) ++correct;
      ++total;
      for (int j = 0; j < batch; ++j) {
        row[j] = 0.0f;
        for (std::size_t k = 0; k < img[j].size(); ++k) row[j] += img[j][k] * txt[i][k];
      }
      if (content_matches(content[detail::argmax_row(row)], content[i])) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / total;
}

struct PretrainSettings {
  int steps = 1200;
  int batch = 32;
  float lr = 1e-3f;
  float weight_decay = 1e-4f;
  double holdout_fraction = 0.15;
  bool enforce_retrieval_gate = true;
};

// Symmetric in-batch contrastive loss between the pooled vision embedding and
// the global text embedding. Throws if held-out retrieval ends below 0.5
// (the encoder would be unusable downstream).
inline PretrainReport pretrain_contrastive(VlEncoder<float>& enc,
                                           const data::Corpus& corpus,
                                           const sim::WorldConfig& wcfg,
                                           const PretrainSettings& settings,
                                           std::uint64_t seed,
                                           std::vector<std::string>* metrics = nullptr) {
  PretrainReport report;
  std::vector<int> idx(corpus.episodes.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng split_rng(derive_seed(seed, "pretrain_split"));
  split_rng.shuffle(idx);
  const std::size_t n_eval = std::max<std::size_t>(
      32, static_cast<std::size_t>(settings.holdout_fraction * idx.size()));
  std::vector<int> eval_idx(idx.begin(), idx.begin() + n_eval);
  std::vector<int> train_idx(idx.begin() + n_eval, idx.end());

  // observations and token ids are fixed; cache them once
  std::vector<sim::Observation> obs_cache(corpus.episodes.size());
  for (std::size_t i = 0; i < corpus.episodes.size(); ++i)
    obs_cache[i] = sim::render_patches(corpus.episodes[i].scene, wcfg);

  auto params = enc.params();
  nn::AdamW<float> opt(settings.lr, settings.weight_decay);
  Rng rng(derive_seed(seed, "pretrain"));
  std::vector<int> labels(settings.batch);
  for (int i = 0; i < settings.batch; ++i) labels[i] = i;

  for (int step = 0; step < settings.steps; ++step) {
    Tensor<float> img_rows, txt_rows;
    for (int b = 0; b < settings.batch; ++b) {
      const int i = train_idx[rng.next_u64() % train_idx.size()];
      Tensor<float> img = enc.pooled_vision(enc.vision_tokens(obs_cache[i]), obs_cache[i]);
      Tensor<float> txt =
          enc.pooled_text(enc.text_tokens(corpus.episodes[i].instruction.tokens));
      img_rows = b == 0 ? img : nn::concat_rows(img_rows, img);
      txt_rows = b == 0 ? txt : nn::concat_rows(txt_rows, txt);
    }
    Tensor<float> temp = nn::exp_t(enc.logit_scale);
    Tensor<float> logits = nn::scale_by(nn::matmul_nt(img_rows, txt_rows), temp);
    Tensor<float> logits_t = nn::scale_by(nn::matmul_nt(txt_rows, img_rows), temp);
    Tensor<float> loss = nn::scale(
        nn::add(nn::cross_entropy_mean(logits, labels),
                nn::cross_entropy_mean(logits_t, labels)),
        0.5f);
    nn::zero_grads(params);
    loss.backward();
    opt.step(params);
    if (enc.logit_scale.data()[0] > std::log(100.0f))
      enc.logit_scale.data()[0] = std::log(100.0f);
    report.losses.push_back(loss.item());
    if (metrics)
      metrics->push_back(std::to_string(step) + "," + std::to_string(loss.item()) +
                         "," + std::to_string(settings.lr) + ",pretrain");
  }
  report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
  report.retrieval_top1 =
      retrieval_top1(enc, corpus, wcfg, eval_idx, 32, derive_seed(seed, "ret"));

  // matched-vs-mismatched cosine comparison on held-out pairs
  Rng mm(derive_seed(seed, "mm"));
  int wins = 0, total = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int i = eval_idx[mm.next_u64() % eval_idx.size()];
    int j = eval_idx[mm.next_u64() % eval_idx.size()];
    if (content_matches(instruction_content(corpus.episodes[j]), instruction_content(corpus.episodes[i])))
      continue;
    const auto img = enc.pooled_vision(enc.vision_tokens(obs_cache[i]), obs_cache[i]).data();
    const auto ti =
        enc.pooled_text(enc.text_tokens(corpus.episodes[i].instruction.tokens)).data();
    const auto tj =
        enc.pooled_text(enc.text_tokens(corpus.episodes[j].instruction.tokens)).data();
    float si = 0, sj = 0;
    for (std::size_t k = 0; k < img.size(); ++k) {
      si += img[k] * ti[k];
      sj += img[k] * tj[k];
    }
    if (si > sj) ++wins;
    ++total;
  }
  report.matched_beats_mismatched = total ? static_cast<double>(wins) / total : 1.0;

  if (settings.enforce_retrieval_gate && report.retrieval_top1 < 0.5)
    throw Error("vl pretraining failed: held-out retrieval top-1 = " +
                std::to_string(report.retrieval_top1));
  return report;
}

// --- checkpoint glue -------------------------------------------------------------

inline Checkpoint encoder_checkpoint(VlEncoder<float>& enc, const std::string& cfg_hash) {
  Checkpoint ck;
  ck.set_meta("kind", "vl_encoder");
  ck.set_meta("frozen", "1");
  ck.set_meta("attention_scale", enc.cfg.attention_scale ? "1" : "0");
  ck.set_meta("vl_dim", std::to_string(enc.cfg.dim));
  ck.set_meta("vl_blocks", std::to_string(enc.cfg.blocks));
  ck.set_meta("vl_mlp_hidden", std::to_string(enc.cfg.mlp_hidden));
  ck.set_meta("config_hash", cfg_hash);
  ck.put_params(enc.params());
  return ck;
}

inline VlEncoder<float> encoder_from_checkpoint(const Checkpoint& ck) {
  VlConfig cfg;
  cfg.dim = std::stoi(ck.get_meta("vl_dim", "64"));
  cfg.blocks = std::stoi(ck.get_meta("vl_blocks", "2"));
  cfg.mlp_hidden = std::stoi(ck.get_meta("vl_mlp_hidden", "128"));
  cfg.attention_scale = ck.get_meta("attention_scale", "1") == "1";
  Rng rng(0);
  VlEncoder<float> enc(cfg, rng);
  auto params = enc.params();
  ck.load_params(params);
  if (ck.get_meta("frozen") == "1") enc.set_frozen(true);
  return enc;
}

}  // namespace bayesvla::vl
