#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bayesvla/infotheory.hpp"

using namespace bayesvla;
using namespace bayesvla::info;

TEST_CASE("exact micro-world quantities") {
  SECTION("biased world: instruction fully determined by vision") {
    MicroWorld w;
    w.mode = "biased";
    const auto q = exact_micro_quantities(w.enumerate());
    REQUIRE(std::abs(q.h_l_given_v) <= 1e-12);
    REQUIRE(std::abs(q.i_a_l_given_v_direct) <= 1e-12);
    REQUIRE(std::abs(q.i_a_l_given_v_via_a) <= 1e-12);
  }
  SECTION("diverse world: two equiprobable instructions determine the action") {
    MicroWorld w;
    w.mode = "diverse";
    const auto q = exact_micro_quantities(w.enumerate());
    const double ln2 = std::log(2.0);
    REQUIRE(q.h_l_given_v == Catch::Approx(ln2).margin(1e-12));
    REQUIRE(q.h_a_given_v == Catch::Approx(ln2).margin(1e-12));
    REQUIRE(std::abs(q.h_a_given_vl) <= 1e-12);
    REQUIRE(q.i_a_l_given_v_direct == Catch::Approx(ln2).margin(1e-12));
  }
  SECTION("identities agree to 1e-12 on every enumerated world") {
    for (const char* mode : {"biased", "diverse", "uniform4"}) {
      MicroWorld w;
      w.mode = mode;
      const auto q = exact_micro_quantities(w.enumerate());
      REQUIRE(std::abs(q.i_a_l_given_v_direct - q.i_a_l_given_v_via_a) <= 1e-12);
      REQUIRE(std::abs(q.i_a_l_given_v_direct - q.i_a_l_given_v_via_l) <= 1e-12);
      REQUIRE(q.h_l_given_v >= -1e-15);
      REQUIRE(q.h_a_given_v >= -1e-15);
      REQUIRE(q.i_a_l_given_v_direct >= -1e-12);
      REQUIRE(q.i_a_l_given_v_direct <= q.h_l_given_v + 1e-12);
    }
  }
  SECTION("data processing: discarding color cannot increase information") {
    for (const char* mode : {"biased", "diverse"}) {
      MicroWorld w;
      w.mode = mode;
      const auto joint = w.enumerate();
      const double i_full = cond_mutual_info(joint);
      const auto lossy = apply_lossy(joint, [&](int v) { return w.lossy_f(v); });
      const double i_lossy = cond_mutual_info(lossy);
      REQUIRE(i_lossy <= i_full + 1e-12);
    }
    MicroWorld w;
    w.mode = "diverse";
    const auto joint = w.enumerate();
    const auto lossy = apply_lossy(joint, [&](int v) { return w.lossy_f(v); });
    REQUIRE(cond_mutual_info(lossy) <= 1e-12);  // strictly lossy here
  }
  SECTION("no vision-only predictor beats 1/k on the diverse world") {
    MicroWorld w;
    w.mode = "diverse";
    REQUIRE(best_vision_only_accuracy(w.enumerate()) ==
            Catch::Approx(0.5).margin(1e-12));
    w.mode = "biased";
    REQUIRE(best_vision_only_accuracy(w.enumerate()) ==
            Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("classifier entropy estimator on micro-worlds") {
  ProbeConfig cfg;
  cfg.steps = 2500;
  SECTION("one-hot conditional: estimate near zero") {
    MicroWorld w;
    w.mode = "biased";
    const auto res = estimate_H_micro(w, 10000, cfg, 101);
    REQUIRE(res.heldout_nll <= 1e-2);
  }
  SECTION("uniform over four instructions: estimate within 5 percent of ln 4") {
    MicroWorld w;
    w.mode = "uniform4";
    const auto res = estimate_H_micro(w, 10000, cfg, 102);
    REQUIRE(std::abs(res.heldout_nll - std::log(4.0)) <= 0.05 * std::log(4.0));
  }
  SECTION("diverse world: estimate within 0.05 nats of the exact value") {
    MicroWorld w;
    w.mode = "diverse";
    const auto exact = exact_micro_quantities(w.enumerate()).h_l_given_v;
    const auto res = estimate_H_micro(w, 10000, cfg, 103);
    REQUIRE(std::abs(res.heldout_nll - exact) <= 0.05);
  }
  SECTION("estimates are monotone in the bias knob") {
    for (std::uint64_t seed : {11u, 22u, 33u}) {
      MicroWorld biased, diverse;
      biased.mode = "biased";
      diverse.mode = "diverse";
      const double hb = estimate_H_micro(biased, 6000, cfg, seed).heldout_nll;
      const double hd = estimate_H_micro(diverse, 6000, cfg, seed).heldout_nll;
      REQUIRE(hb < hd);
    }
  }
}

TEST_CASE("corpus entropy estimate and degenerate corpora") {
  sim::WorldConfig cfg;
  cfg.mode = "biased";
  cfg.scene_repeat = 1;
  ProbeConfig pc;
  pc.steps = 400;  // mechanics only; calibrated thresholds live in acceptance
  SECTION("single-instruction corpus returns zero with the degenerate flag") {
    data::Corpus corpus = data::generate_corpus(cfg, 40, 0);
    // force one instruction everywhere
    for (auto& ep : corpus.episodes) ep.instruction = corpus.episodes[0].instruction;
    const auto res = estimate_H_l_given_v(corpus, cfg, pc, 5);
    REQUIRE(res.degenerate);
    REQUIRE(res.heldout_nll == 0.0);
  }
  SECTION("sandwich probes flag degenerate single-class corpora") {
    data::Corpus corpus = data::generate_corpus(cfg, 30, 0);
    for (auto& ep : corpus.episodes) {
      ep.instruction = corpus.episodes[0].instruction;
      ep.scene = corpus.episodes[0].scene;
    }
    const auto rep = probe_nll_sandwich(corpus, cfg, pc, 5, 0.0);
    REQUIRE(rep.degenerate);
  }
}

TEST_CASE("sandwich and two-stage probes on a small diverse corpus") {
  sim::WorldConfig cfg;
  cfg.mode = "diverse";
  cfg.objects_min = cfg.objects_max = 4;
  cfg.containers_min = cfg.containers_max = 2;
  cfg.scene_repeat = 4;
  data::Corpus corpus = data::generate_corpus(cfg, 480, 0);
  ProbeConfig pc;
  pc.steps = 1500;

  const auto rep = probe_nll_sandwich(corpus, cfg, pc, 17, 0.0);
  SECTION("language closes most of the action uncertainty") {
    // k = 4 uniform targets plus a 2-way container choice
    REQUIRE(rep.nll_va - rep.nll_vla >= 0.5 * std::log(4.0));
    REQUIRE(rep.ordering_holds);
  }
  SECTION("small injected head recovers most of the gap with few parameters") {
    const auto two = two_stage_probe(corpus, cfg, pc, 17);
    REQUIRE(two.param_ratio <= 0.25);
    REQUIRE(two.gap_recovered >= 0.8);
    REQUIRE(two.nll_injected <= two.nll_va + 0.05);
  }
}
