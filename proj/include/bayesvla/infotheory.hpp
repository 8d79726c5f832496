#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bayesvla/dataset.hpp"
#include "bayesvla/microworld.hpp"
#include "bayesvla/nn.hpp"
#include "bayesvla/optim.hpp"

namespace bayesvla::info {

// Classifier-based entropy estimation and the NLL probe suite. All probes are
// small two-layer MLPs trained with AdamW; held-out cross-entropy in nats is
// the estimate.

struct ProbeConfig {
  int hidden = 128;
  int steps = 2500;
  int batch = 32;
  float lr = 1e-3f;
  float weight_decay = 1e-3f;
  double test_fraction = 0.2;
};

struct Probe {
  nn::Linear<float> fc1, fc2;
  int in_dim = 0, hidden = 0, classes = 0;

  Probe() = default;
  Probe(int in, int h, int c, Rng& rng)
      : fc1(in, h, rng), fc2(h, c, rng), in_dim(in), hidden(h), classes(c) {}

  nn::Tensor<float> forward(const nn::Tensor<float>& x) const {
    return fc2.forward(nn::gelu(fc1.forward(x)));
  }

  nn::Tensor<float> hidden_of(const nn::Tensor<float>& x) const {
    return nn::gelu(fc1.forward(x));
  }

  nn::ParamList<float> params() {
    nn::ParamList<float> out;
    fc1.collect(out, "probe.fc1");
    fc2.collect(out, "probe.fc2");
    return out;
  }

  std::size_t param_count() const { return fc1.w.size() + fc1.b.size() + fc2.w.size() + fc2.b.size(); }
};

struct ProbeResult {
  double train_nll = 0.0;
  double heldout_nll = 0.0;
  int classes = 0;
  bool degenerate = false;
};

namespace detail {

inline nn::Tensor<float> rows_tensor(const std::vector<std::vector<float>>& xs,
                                     const std::vector<int>& idx) {
  const int d = static_cast<int>(xs.front().size());
  std::vector<float> flat;
  flat.reserve(idx.size() * d);
  for (int i : idx) flat.insert(flat.end(), xs[i].begin(), xs[i].end());
  return nn::Tensor<float>::from(static_cast<int>(idx.size()), d, std::move(flat));
}

inline double eval_nll(const Probe& probe, const std::vector<std::vector<float>>& xs,
                       const std::vector<int>& ys, const std::vector<int>& idx) {
  double total = 0.0;
  const int batch = 256;
  for (std::size_t off = 0; off < idx.size(); off += batch) {
    std::vector<int> part(idx.begin() + off,
                          idx.begin() + std::min(idx.size(), off + batch));
    std::vector<int> labels;
    for (int i : part) labels.push_back(ys[i]);
    auto loss = nn::cross_entropy_mean(probe.forward(rows_tensor(xs, part)), labels);
    total += static_cast<double>(loss.item()) * part.size();
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace detail

// train/held-out split by index; returns the held-out NLL as the estimate
inline ProbeResult train_probe(Probe& probe, const std::vector<std::vector<float>>& xs,
                               const std::vector<int>& ys, const ProbeConfig& cfg,
                               std::uint64_t seed) {
  ProbeResult res;
  res.classes = probe.classes;
  std::vector<int> idx(xs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng(derive_seed(seed, "probe"));
  rng.shuffle(idx);
  const std::size_t n_test =
      std::max<std::size_t>(1, static_cast<std::size_t>(cfg.test_fraction * idx.size()));
  std::vector<int> test_idx(idx.begin(), idx.begin() + n_test);
  std::vector<int> train_idx(idx.begin() + n_test, idx.end());

  auto params = probe.params();
  nn::AdamW<float> opt(cfg.lr, cfg.weight_decay);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> batch;
    std::vector<int> labels;
    for (int b = 0; b < cfg.batch; ++b) {
      const int i = train_idx[rng.next_u64() % train_idx.size()];
      batch.push_back(i);
      labels.push_back(ys[i]);
    }
    nn::zero_grads(params);
    auto loss = nn::cross_entropy_mean(probe.forward(detail::rows_tensor(xs, batch)),
                                       labels);
    loss.backward();
    opt.step(params);
  }
  res.train_nll = detail::eval_nll(probe, xs, ys, train_idx);
  res.heldout_nll = detail::eval_nll(probe, xs, ys, test_idx);
  return res;
}

// --- corpus feature extraction -----------------------------------------------

inline std::vector<float> grid_features(const sim::Scene& scene,
                                        const sim::WorldConfig& cfg) {
  return sim::render_patches(scene, cfg).features;
}

inline std::vector<float> bow_features(const sim::Instruction& ins) {
  std::vector<float> f(sim::tokenizer().vocab_size(), 0.0f);
  for (int t : ins.tokens) f[t] += 1.0f;
  return f;
}

// Ĥ(l | v): held-out cross-entropy of a grid -> instruction-text classifier.
inline ProbeResult estimate_H_l_given_v(const data::Corpus& corpus,
                                        const sim::WorldConfig& cfg,
                                        const ProbeConfig& probe_cfg,
                                        std::uint64_t seed) {
  std::map<std::string, int> text_ids;
  for (const auto& ep : corpus.episodes) {
    const std::string t = ep.instruction.text();
    if (!text_ids.count(t)) text_ids[t] = static_cast<int>(text_ids.size());
  }
  if (text_ids.size() <= 1) {
    ProbeResult res;
    res.degenerate = true;
    res.classes = static_cast<int>(text_ids.size());
    return res;  // single-instruction corpus: entropy 0 by construction
  }
  std::vector<std::vector<float>> xs;
  std::vector<int> ys;
  for (const auto& ep : corpus.episodes) {
    xs.push_back(grid_features(ep.scene, cfg));
    ys.push_back(text_ids.at(ep.instruction.text()));
  }
  Rng init(derive_seed(seed, "h_l_given_v"));
  Probe probe(static_cast<int>(xs.front().size()), probe_cfg.hidden,
              static_cast<int>(text_ids.size()), init);
  return train_probe(probe, xs, ys, probe_cfg, seed);
}

// Ĥ(l | v) on the enumerable micro-world from sampled pairs.
inline ProbeResult estimate_H_micro(const MicroWorld& world, int samples,
                                    const ProbeConfig& probe_cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "micro_sample"));
  const auto pairs = world.sample_vl(samples, rng);
  std::vector<std::vector<float>> xs;
  std::vector<int> ys;
  for (const auto& [v, l] : pairs) {
    xs.push_back(world.features(v));
    ys.push_back(l);
  }
  Rng init(derive_seed(seed, "micro_probe"));
  Probe probe(world.feature_dim(), probe_cfg.hidden, world.n_instructions(), init);
  return train_probe(probe, xs, ys, probe_cfg, seed);
}

// --- categorical NLL sandwich -------------------------------------------------

// categorical action label from the expert episode: (target color, container kind)
inline int action_label(const sim::Episode& ep) {
  const auto* target = sim::find_object(ep.scene, ep.instruction.target_object_id);
  const auto* container =
      sim::find_container(ep.scene, ep.instruction.target_container_id);
  return target->color * sim::kNumKinds + container->kind;
}

constexpr int kActionClasses = sim::kNumColors * sim::kNumKinds;

struct SandwichReport {
  double nll_va = 0.0;
  double nll_vla = 0.0;
  double eps_hat = 0.0;  // classifier estimate of H(l|v) on the same corpus
  bool degenerate = false;
  bool ordering_holds = false;   // NLL_VLA <= NLL_VA + delta
  bool upper_holds = false;      // NLL_VA <= NLL_VLA + eps_hat + delta
  double delta = 0.05;
};

// capacity-matched pair: both probes share one architecture over
// [grid | bag-of-words]; the vision-only probe sees zeros in the language slot
inline SandwichReport probe_nll_sandwich(const data::Corpus& corpus,
                                         const sim::WorldConfig& cfg,
                                         const ProbeConfig& probe_cfg,
                                         std::uint64_t seed, double eps_hat) {
  std::set<int> distinct;
  for (const auto& ep : corpus.episodes) distinct.insert(action_label(ep));
  SandwichReport rep;
  rep.eps_hat = eps_hat;
  if (distinct.size() <= 1) {
    rep.degenerate = true;
    return rep;
  }
  const int vocab = sim::tokenizer().vocab_size();
  std::vector<std::vector<float>> xs_va, xs_vla;
  std::vector<int> ys;
  for (const auto& ep : corpus.episodes) {
    std::vector<float> grid = grid_features(ep.scene, cfg);
    std::vector<float> bow = bow_features(ep.instruction);
    std::vector<float> va = grid;
    va.insert(va.end(), static_cast<std::size_t>(vocab), 0.0f);
    std::vector<float> vla = grid;
    vla.insert(vla.end(), bow.begin(), bow.end());
    xs_va.push_back(std::move(va));
    xs_vla.push_back(std::move(vla));
    ys.push_back(action_label(ep));
  }
  Rng init_a(derive_seed(seed, "sandwich_va"));
  Probe va(static_cast<int>(xs_va.front().size()), probe_cfg.hidden, kActionClasses,
           init_a);
  Rng init_b(derive_seed(seed, "sandwich_vla"));
  Probe vla(static_cast<int>(xs_vla.front().size()), probe_cfg.hidden, kActionClasses,
            init_b);
  rep.nll_va = train_probe(va, xs_va, ys, probe_cfg, seed).heldout_nll;
  rep.nll_vla = train_probe(vla, xs_vla, ys, probe_cfg, seed).heldout_nll;
  rep.ordering_holds = rep.nll_vla <= rep.nll_va + rep.delta;
  rep.upper_holds = rep.nll_va <= rep.nll_vla + eps_hat + rep.delta;
  return rep;
}

// --- two-stage conditioning probe ----------------------------------------------

struct TwoStageReport {
  double nll_va = 0.0;        // P(a|v)
  double nll_vla = 0.0;       // P(a|v,l), full conditioning
  double nll_injected = 0.0;  // P(a | f(v), l), small head on the frozen embedding
  double param_ratio = 0.0;   // injected head params / full probe params
  double gap_recovered = 0.0; // fraction of the VA->VLA improvement recovered
};

inline TwoStageReport two_stage_probe(const data::Corpus& corpus,
                                      const sim::WorldConfig& cfg,
                                      const ProbeConfig& probe_cfg,
                                      std::uint64_t seed) {
  const int vocab = sim::tokenizer().vocab_size();
  std::vector<std::vector<float>> xs_va, xs_vla;
  std::vector<int> ys;
  for (const auto& ep : corpus.episodes) {
    std::vector<float> grid = grid_features(ep.scene, cfg);
    std::vector<float> bow = bow_features(ep.instruction);
    std::vector<float> va = grid;
    va.insert(va.end(), static_cast<std::size_t>(vocab), 0.0f);
    std::vector<float> vla = grid;
    vla.insert(vla.end(), bow.begin(), bow.end());
    xs_va.push_back(std::move(va));
    xs_vla.push_back(std::move(vla));
    ys.push_back(action_label(ep));
  }
  TwoStageReport rep;
  Rng init_a(derive_seed(seed, "two_stage_va"));
  Probe va(static_cast<int>(xs_va.front().size()), probe_cfg.hidden, kActionClasses,
           init_a);
  rep.nll_va = train_probe(va, xs_va, ys, probe_cfg, seed).heldout_nll;
  Rng init_b(derive_seed(seed, "two_stage_vla"));
  Probe vla(static_cast<int>(xs_vla.front().size()), probe_cfg.hidden, kActionClasses,
            init_b);
  rep.nll_vla = train_probe(vla, xs_vla, ys, probe_cfg, seed).heldout_nll;

  // frozen embedding f(v): the trained VA probe's penultimate activations
  std::vector<std::vector<float>> xs_head;
  for (const auto& x : xs_va) {
    auto h = va.hidden_of(nn::Tensor<float>::from(1, static_cast<int>(x.size()), x));
    std::vector<float> feats = h.data();
    // language enters only through the small injected head
    const auto& bow = xs_vla[xs_head.size()];
    feats.insert(feats.end(), bow.end() - vocab, bow.end());
    xs_head.push_back(std::move(feats));
  }
  Rng init_c(derive_seed(seed, "two_stage_head"));
  Probe head(static_cast<int>(xs_head.front().size()), 32, kActionClasses, init_c);
  // the head is an order of magnitude cheaper per step; give it equal compute
  ProbeConfig head_cfg = probe_cfg;
  head_cfg.steps = probe_cfg.steps * 3;
  rep.nll_injected = train_probe(head, xs_head, ys, head_cfg, seed).heldout_nll;
  rep.param_ratio = static_cast<double>(head.param_count()) /
                    static_cast<double>(vla.param_count());
  const double gap = rep.nll_va - rep.nll_vla;
  rep.gap_recovered = gap > 1e-9 ? (rep.nll_va - rep.nll_injected) / gap : 1.0;
  return rep;
}

// --- report container -----------------------------------------------------------

struct EntropyReport {
  double h_l_given_v_hat = 0.0;
  double h_l_given_v_train = 0.0;
  double eps_hat = 0.0;
  bool degenerate = false;
  SandwichReport sandwich;
  TwoStageReport two_stage;
  ExactQuantities micro_biased;
  ExactQuantities micro_diverse;
  double micro_hat_biased = 0.0;
  double micro_hat_diverse = 0.0;
};

}  // namespace bayesvla::info
