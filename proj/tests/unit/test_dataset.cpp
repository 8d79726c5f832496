#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "bayesvla/dataset.hpp"

using namespace bayesvla;
using namespace bayesvla::data;

namespace {

bool episodes_identical(const Episode& a, const Episode& b) {
  if (a.episode_seed != b.episode_seed || a.outcome != b.outcome) return false;
  if (a.instruction.tokens != b.instruction.tokens) return false;
  if (a.chunk.size() != b.chunk.size()) return false;
  for (std::size_t i = 0; i < a.chunk.size(); ++i)
    if (a.chunk[i].v != b.chunk[i].v) return false;
  if (a.poses.size() != b.poses.size()) return false;
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    if (a.poses[i].R.m != b.poses[i].R.m) return false;
    if (a.poses[i].t.x != b.poses[i].t.x || a.poses[i].t.y != b.poses[i].t.y ||
        a.poses[i].t.z != b.poses[i].t.z)
      return false;
  }
  if (a.widths != b.widths) return false;
  if (a.scene.objects.size() != b.scene.objects.size()) return false;
  for (std::size_t i = 0; i < a.scene.objects.size(); ++i) {
    const auto &x = a.scene.objects[i], &y = b.scene.objects[i];
    if (x.color != y.color || x.position.x != y.position.x || x.yaw != y.yaw)
      return false;
  }
  return a.scene.camera.pose.R.m == b.scene.camera.pose.R.m;
}

}  // namespace

TEST_CASE("corpus serialization") {
  sim::WorldConfig cfg;
  Corpus corpus = generate_corpus(cfg, 100, 0);
  split_prior_likelihood(corpus, 0.5, 7);
  normalize_actions(corpus);
  const std::string path = "test_corpus.jsonl";

  SECTION("write then read is field-identical") {
    write_corpus(corpus, path);
    Corpus back = read_corpus(path);
    REQUIRE(back.episodes.size() == corpus.episodes.size());
    REQUIRE(back.config_hash == corpus.config_hash);
    REQUIRE(back.splits == corpus.splits);
    REQUIRE(back.stats.fitted);
    REQUIRE(back.stats.mean == corpus.stats.mean);
    REQUIRE(back.stats.std == corpus.stats.std);
    for (std::size_t i = 0; i < corpus.episodes.size(); ++i)
      REQUIRE(episodes_identical(back.episodes[i], corpus.episodes[i]));
    std::remove(path.c_str());
  }

  SECTION("schema version mismatch names both versions") {
    {
      std::ofstream f(path);
      f << R"({"schema_version":2,"config_hash":"00","episodes":0})" << "\n";
    }
    try {
      read_corpus(path);
      FAIL("expected incompatibility error");
    } catch (const IoError& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("2") != std::string::npos);
      REQUIRE(msg.find("1") != std::string::npos);
    }
    std::remove(path.c_str());
  }

  SECTION("corrupted line is reported with its line number") {
    write_corpus(corpus, path);
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string l;
    while (std::getline(in, l)) lines.push_back(l);
    in.close();
    lines[6] = lines[6].substr(0, lines[6].size() / 2);  // truncate line 7
    std::ofstream out(path);
    for (const auto& s : lines) out << s << "\n";
    out.close();
    try {
      read_corpus(path);
      FAIL("expected parse error");
    } catch (const IoError& e) {
      REQUIRE(std::string(e.what()).find("line 7") != std::string::npos);
    }
    std::remove(path.c_str());
  }
}

TEST_CASE("prior/likelihood split") {
  sim::WorldConfig cfg;
  cfg.scene_repeat = 1;
  Corpus corpus = generate_corpus(cfg, 1000, 0);

  SECTION("half fraction gives a 500/500 partition") {
    split_prior_likelihood(corpus, 0.5, 11);
    REQUIRE(corpus.indices_of(Split::Prior).size() == 500);
    REQUIRE(corpus.indices_of(Split::Likelihood).size() == 500);
  }
  SECTION("same seed reproduces the split; different seed does not") {
    split_prior_likelihood(corpus, 0.5, 11);
    const auto first = corpus.splits;
    split_prior_likelihood(corpus, 0.5, 11);
    REQUIRE(corpus.splits == first);
    split_prior_likelihood(corpus, 0.5, 12);
    REQUIRE(corpus.splits != first);
  }
  SECTION("prior and likelihood sets are disjoint and cover the corpus") {
    split_prior_likelihood(corpus, 0.5, 11);
    const auto prior = corpus.indices_of(Split::Prior);
    const auto lik = corpus.indices_of(Split::Likelihood);
    std::set<int> all(prior.begin(), prior.end());
    for (int i : lik) REQUIRE(all.insert(i).second);
    REQUIRE(all.size() == corpus.episodes.size());
  }
  SECTION("bad fractions are rejected") {
    REQUIRE_THROWS_AS(split_prior_likelihood(corpus, 0.0, 1), ConfigError);
    REQUIRE_THROWS_AS(split_prior_likelihood(corpus, 1.0, 1), ConfigError);
  }
}

TEST_CASE("action normalization") {
  sim::WorldConfig cfg;
  Corpus corpus = generate_corpus(cfg, 60, 0);
  split_prior_likelihood(corpus, 0.5, 3);

  SECTION("normalized channels have zero mean and unit variance on the fit split") {
    NormStats stats = normalize_actions(corpus);
    for (int c = 0; c < 9; ++c) {
      double m = 0.0, var = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < corpus.episodes.size(); ++i)
        for (const auto& a : corpus.episodes[i].chunk) {
          const double z = stats.apply(a).v[c];
          m += z;
          ++n;
        }
      m /= n;
      for (std::size_t i = 0; i < corpus.episodes.size(); ++i)
        for (const auto& a : corpus.episodes[i].chunk) {
          const double z = stats.apply(a).v[c];
          var += (z - m) * (z - m);
        }
      var /= n;
      REQUIRE(std::abs(m) <= 1e-6);
      REQUIRE(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
    }
  }
  SECTION("invert undoes apply within 1e-9 on 1000 random vectors") {
    NormStats stats = normalize_actions(corpus);
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
      geo::ActionVector a;
      for (auto& v : a.v) v = rng.normal();
      const auto back = stats.invert(stats.apply(a));
      for (int c = 0; c < 10; ++c) REQUIRE(std::abs(back.v[c] - a.v[c]) <= 1e-9);
    }
  }
  SECTION("gripper channel passes through unchanged") {
    NormStats stats = normalize_actions(corpus);
    geo::ActionVector a;
    a.v[9] = -0.73;
    REQUIRE(stats.apply(a).v[9] == -0.73);
    REQUIRE(stats.invert(a).v[9] == -0.73);
  }
  SECTION("constant translation channels raise a named zero-variance error") {
    Corpus flat = corpus;
    for (auto& ep : flat.episodes)
      for (auto& a : ep.chunk) {
        a.v[0] = 0.01;
        a.v[1] = 0.02;
        a.v[2] = 0.03;
      }
    try {
      normalize_actions(flat);
      FAIL("expected zero-variance error");
    } catch (const ConfigError& e) {
      REQUIRE(std::string(e.what()).find("channel 0") != std::string::npos);
    }
  }
}

TEST_CASE("bias profile") {
  SECTION("biased corpora map every scene signature to one instruction") {
    sim::WorldConfig cfg;
    cfg.mode = "biased";
    cfg.scene_repeat = 5;
    Corpus corpus = generate_corpus(cfg, 200, 0);
    BiasProfile p = bias_profile(corpus, cfg);
    REQUIRE(p.instructions_per_scene.size() == 1);
    REQUIRE(p.instructions_per_scene.begin()->first == 1);
  }
  SECTION("diverse corpora show several instructions per repeated scene") {
    sim::WorldConfig cfg;
    cfg.mode = "diverse";
    cfg.objects_min = cfg.objects_max = 4;
    cfg.scene_repeat = 10;
    Corpus corpus = generate_corpus(cfg, 600, 0);
    BiasProfile p = bias_profile(corpus, cfg);
    int multi = 0, total = 0;
    for (const auto& [n_instr, n_scenes] : p.instructions_per_scene) {
      total += n_scenes;
      if (n_instr >= 2) multi += n_scenes;
    }
    REQUIRE(static_cast<double>(multi) / total >= 0.95);
  }
  SECTION("observed instruction texts stay inside the enumerated grammar") {
    sim::WorldConfig cfg;
    Corpus corpus = generate_corpus(cfg, 300, 0);
    const auto grammar = sim::enumerate_grammar(cfg.train_synonyms);
    for (const auto& ep : corpus.episodes)
      REQUIRE(grammar.count(ep.instruction.text()) == 1);
    BiasProfile p = bias_profile(corpus, cfg);
    REQUIRE(p.instruction_count <= static_cast<int>(sim::grammar_size(cfg.train_synonyms)));
  }
}
