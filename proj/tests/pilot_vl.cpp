// scratch pilot: vl pretraining dynamics (not registered with ctest)
#include <cstdio>

#include "bayesvla/vlencoder.hpp"

using namespace bayesvla;
using namespace bayesvla::vl;

int main(int argc, char** argv) {
  sim::WorldConfig wcfg;
  wcfg.mode = "caption";
  wcfg.train_synonyms = sim::kNumSynonyms;
  wcfg.scene_repeat = 2;
  const int steps = argc > 1 ? std::atoi(argv[1]) : 1000;
  const float lr = argc > 2 ? std::atof(argv[2]) : 1e-3f;
  const int episodes = argc > 3 ? std::atoi(argv[3]) : 600;

  data::Corpus corpus = data::generate_corpus(wcfg, episodes, 1000000);
  Rng rng(42);
  VlEncoder<float> enc(VlConfig{}, rng);
  PretrainSettings s;
  s.steps = steps;
  s.lr = lr;
  s.enforce_retrieval_gate = false;

  auto t0 = std::chrono::steady_clock::now();
  PretrainReport rep = pretrain_contrastive(enc, corpus, wcfg, s, 7, nullptr);
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (std::size_t i = 0; i < rep.losses.size(); i += 100)
    std::printf("step %zu loss %.4f\n", i, rep.losses[i]);
  std::printf("final loss %.4f\n", rep.final_loss);
  std::printf("retrieval_top1 %.4f matched>mismatched %.4f\n", rep.retrieval_top1,
              rep.matched_beats_mismatched);
  std::printf("train time %.1fs (%.3f s/step)\n", dt, dt / steps);

  // text-aware localization: does the instructed object's patch carry max s_i?
  int hits = 0, total = 0, empty_wins = 0, container_wins = 0, distractor_wins = 0;
  for (int i = 0; i < 200; ++i) {
    const auto& ep = corpus.episodes[corpus.episodes.size() - 1 - i];
    const auto obs = sim::render_patches(ep.scene, wcfg);
    const VLTokens t = enc.encode(obs, ep.instruction.tokens);
    int best = 0;
    for (std::size_t k = 1; k < t.scores.size(); ++k)
      if (t.scores[k] > t.scores[best]) best = static_cast<int>(k);
    const int ent = obs.entity_id[best];
    if (ent == ep.instruction.target_object_id)
      ++hits;
    else if (ent < 0)
      ++empty_wins;
    else if (ent >= 1000)
      ++container_wins;
    else
      ++distractor_wins;
    ++total;
  }
  std::printf("max-s_i on instructed object: %.3f (empty %.2f container %.2f distractor %.2f)\n",
              static_cast<double>(hits) / total, static_cast<double>(empty_wins) / total,
              static_cast<double>(container_wins) / total,
              static_cast<double>(distractor_wins) / total);
  return 0;
}
