#include <doctest.h>

#include <stdexcept>

#include "vpipe/cost_model.hpp"

using namespace vpipe;

TEST_CASE("layer costs follow the analytical table") {
  // [TRIVIAL] direct formula spot checks on small integers.
  ModelConfig cfg{2, 3, 5, 7, 4, 2, 4};
  const LayerCost tl = layer_cost(LayerKind::Transformer, cfg);
  CHECK(tl.flops == 2.0 * 3 * 5 * (72.0 * 5 + 12.0 * 3));
  CHECK(tl.param_units == 24.0 * 25);
  const LayerCost in = layer_cost(LayerKind::Input, cfg);
  CHECK(in.flops == 3.0 * 2 * 3 * 5);
  CHECK(in.param_units == 2.0 * 5 * 7);
  const LayerCost out = layer_cost(LayerKind::Output, cfg);
  CHECK(out.flops == 6.0 * 2 * 3 * 5 * 7);
  CHECK(out.param_units == 2.0 * 5 * 7);
}

TEST_CASE("cost ratios equal output layer relative to one transformer layer") {
  // [DERIVED] oracle: ratio computed from layer_cost directly.
  ModelConfig cfg{1, 128, 96, 4096, 8, 4, 16};
  const CostRatios ratios = cost_ratios(cfg);
  const double compute_oracle = layer_cost(LayerKind::Output, cfg).flops /
                                layer_cost(LayerKind::Transformer, cfg).flops;
  const double memory_oracle = layer_cost(LayerKind::Output, cfg).param_units /
                               layer_cost(LayerKind::Transformer, cfg).param_units;
  CHECK(ratios.compute == doctest::Approx(compute_oracle).epsilon(1e-12));
  CHECK(ratios.memory == doctest::Approx(memory_oracle).epsilon(1e-12));
}

TEST_CASE("published anchor: s=2048 h=4096 V=128000") {
  // [PAPER] compute ratio about 2.4, memory ratio about 2.6.
  ModelConfig cfg{1, 2048, 4096, 128000, 8, 4, 16};
  const CostRatios ratios = cost_ratios(cfg);
  CHECK(ratios.compute == doctest::Approx(2.404).epsilon(0.0005));
  CHECK(ratios.memory == doctest::Approx(2.604).epsilon(0.0005));
}

TEST_CASE("compute ratio is linear in V") {
  // [TRIVIAL] 6V/(72h+12s) doubles with V.
  ModelConfig cfg{1, 64, 32, 1000, 8, 4, 16};
  ModelConfig doubled = cfg;
  doubled.V = 2000;
  CHECK(cost_ratios(doubled).compute ==
        doctest::Approx(2.0 * cost_ratios(cfg).compute).epsilon(1e-12));
}

TEST_CASE("vocabulary padding") {
  // [PAPER] pad_vocab_size(256008, 24) = 256032.
  CHECK(pad_vocab_size(256008, 24) == 256032);
  // [TRIVIAL] already-aligned values are unchanged; result divisible by 2p.
  CHECK(pad_vocab_size(64, 4) == 64);
  CHECK(pad_vocab_size(65, 4) == 72);
  for (std::int64_t v : {1, 7, 100, 12345}) {
    for (std::int64_t p : {1, 2, 3, 8}) {
      const std::int64_t padded = pad_vocab_size(v, p);
      CHECK(padded >= v);
      CHECK(padded % (2 * p) == 0);
      CHECK(padded - v < 2 * p);
    }
  }
}

TEST_CASE("pass durations") {
  ModelConfig cfg{1, 8, 16, 64, 8, 4, 16};
  const double rate = layer_cost(LayerKind::Transformer, cfg).flops * cfg.L / cfg.p;

  SUBCASE("normalized so F=1, B=2") {
    // [DERIVED] unit_rate equal to one stage's flops.
    const PassDurations d = pass_durations(cfg, rate);
    CHECK(d.f == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.b == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(d.collective == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("S/T split depends on barrier count, sum is the shard cost") {
    // Full forward+backward shard cost is 3 table units (B = 2F).
    const double shard =
        3.0 * layer_cost(LayerKind::Output, cfg).flops / cfg.p / rate;
    const PassDurations one = pass_durations(cfg, rate, {1, -1.0});
    const PassDurations two = pass_durations(cfg, rate, {2, -1.0});
    CHECK(one.s + one.t == doctest::Approx(shard).epsilon(1e-12));
    CHECK(two.s + two.t == doctest::Approx(shard).epsilon(1e-12));
    CHECK(one.s == doctest::Approx(shard * 0.6).epsilon(1e-12));
    CHECK(two.s == doctest::Approx(shard / 3.0).epsilon(1e-12));
  }
  SUBCASE("rejects indivisible layer counts") {
    ModelConfig bad = cfg;
    bad.L = 7;
    CHECK_THROWS_AS(pass_durations(bad, rate), std::invalid_argument);
  }
}

TEST_CASE("config validation rejects non-positive fields") {
  ModelConfig cfg{1, 8, 16, 64, 8, 4, 16};
  CHECK_NOTHROW(cfg.validate());
  ModelConfig bad = cfg;
  bad.h = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.p = -2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
