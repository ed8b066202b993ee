#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vpipe/schedule.hpp"

using namespace vpipe;

namespace {

ModelConfig make_cfg(int p, int n) {
  ModelConfig cfg;
  cfg.b = 1;
  cfg.s = 8;
  cfg.h = 16;
  cfg.V = 16 * p;
  cfg.L = 2 * p;
  cfg.p = p;
  cfg.n = n;
  return cfg;
}

const std::vector<Method> kAllMethods = {
    Method::Baseline1F1B, Method::Redis,      Method::Vocab1,
    Method::Vocab2,       Method::Interlaced, Method::VHalfBase,
    Method::VHalfVocab1};

// Independent oracle for the redistribution objective: enumerate every
// composition of L into p non-negative parts.
double brute_force_objective(int L, int p, double out_ratio, double in_ratio) {
  std::vector<int> counts(p, 0);
  double best = 1e300;
  auto recurse = [&](auto&& self, int stage, int remaining) -> void {
    if (stage == p - 1) {
      counts[stage] = remaining;
      double obj = 0.0;
      for (int d = 0; d < p; ++d) {
        double cost = counts[d];
        if (d == 0) cost += in_ratio;
        if (d == p - 1) cost += out_ratio;
        obj = std::max(obj, cost);
      }
      best = std::min(best, obj);
      return;
    }
    for (int take = 0; take <= remaining; ++take) {
      counts[stage] = take;
      self(self, stage + 1, remaining - take);
    }
  };
  recurse(recurse, 0, L);
  return best;
}

}  // namespace

TEST_CASE("building-block analysis matches the lifespan/interval quotient") {
  // [PAPER] worked examples: lifespan 24, interval 3 -> 8 microbatches;
  // lifespan 36 -> 12.
  BuildingBlock block;
  block.interval = 3;
  block.chunks_per_device = 1;
  block.lifespan = 24;
  CHECK(analyze_block(block).peak_microbatches == 8);
  block.lifespan = 36;
  CHECK(analyze_block(block).peak_microbatches == 12);
  block.lifespan = 25;
  CHECK(analyze_block(block).peak_microbatches == 9);
  block.interval = 0;
  CHECK_THROWS_AS(analyze_block(block), std::invalid_argument);
}

TEST_CASE("method blocks have the documented peak microbatch counts") {
  for (int p : {2, 4, 8}) {
    const ModelConfig cfg = make_cfg(p, 4 * p);
    // [PAPER] baseline p, vocab2 p+1, vocab1 p+2, interlaced 1.5p.
    CHECK(analyze_block(build_block(Method::Baseline1F1B, cfg)).peak_microbatches == p);
    CHECK(analyze_block(build_block(Method::Vocab2, cfg)).peak_microbatches == p + 1);
    CHECK(analyze_block(build_block(Method::Vocab1, cfg)).peak_microbatches == p + 2);
    CHECK(analyze_block(build_block(Method::Interlaced, cfg)).peak_microbatches ==
          (3 * p + 1) / 2);
    // [DERIVED] V-Half halves the per-chunk activation: lifespan 6p over
    // interval 6 with 2 chunks -> ceil(p/2); +2 for the vocab variant.
    CHECK(analyze_block(build_block(Method::VHalfBase, cfg)).peak_microbatches ==
          (p + 1) / 2);
    CHECK(analyze_block(build_block(Method::VHalfVocab1, cfg)).peak_microbatches <=
          (p + 1) / 2 + 2);
  }
}

TEST_CASE("programs validate cleanly across the method/size grid") {
  // [DERIVED] validator oracle: zero violations for every built program.
  for (Method method : kAllMethods) {
    for (int p : {2, 4, 8}) {
      for (int n : {p, 2 * p, 16}) {
        if (n < p) continue;
        const DeviceProgram program = build_program(method, make_cfg(p, n));
        const auto violations = validate_dependencies(program);
        CAPTURE(method_name(method));
        CAPTURE(p);
        CAPTURE(n);
        CHECK(violations.empty());
      }
    }
  }
}

TEST_CASE("validator flags an injected T-before-C1 reordering") {
  // [TRIVIAL] fault injection: swap a T pass before the barrier it needs.
  DeviceProgram program = build_program(Method::Vocab1, make_cfg(4, 8));
  auto& order = program.order[2];
  auto c1 = std::find_if(order.begin(), order.end(), [](const Pass& pass) {
    return pass.kind == PassKind::CAllReduce && pass.microbatch == 3;
  });
  auto t = std::find_if(order.begin(), order.end(), [](const Pass& pass) {
    return pass.kind == PassKind::T && pass.microbatch == 3;
  });
  REQUIRE(c1 != order.end());
  REQUIRE(t != order.end());
  REQUIRE(c1 < t);
  std::iter_swap(c1, t);
  const auto violations = validate_dependencies(program);
  CHECK(!violations.empty());
  bool named = false;
  for (const auto& v : violations) {
    if (v.find("T microbatch 3") != std::string::npos) named = true;
  }
  CHECK(named);
}

TEST_CASE("validator reports missing passes") {
  // [TRIVIAL] deleting one forward breaks the structural check.
  DeviceProgram program = build_program(Method::Baseline1F1B, make_cfg(2, 4));
  auto& order = program.order[1];
  order.erase(std::find_if(order.begin(), order.end(), [](const Pass& pass) {
    return pass.kind == PassKind::F && pass.microbatch == 2;
  }));
  const auto violations = validate_dependencies(program);
  REQUIRE(!violations.empty());
  CHECK(violations.front().find("missing") != std::string::npos);
}

TEST_CASE("per-device pass counts are complete") {
  // [DERIVED] structural oracle: count every kind per device.
  const int p = 4, n = 6;
  const DeviceProgram program = build_program(Method::Vocab2, make_cfg(p, n));
  for (int d = 0; d < p; ++d) {
    int f = 0, b = 0, s = 0, t = 0, inf = 0, inb = 0, c0 = 0, c1 = 0;
    for (const Pass& pass : program.order[d]) {
      switch (pass.kind) {
        case PassKind::F: ++f; break;
        case PassKind::B: ++b; break;
        case PassKind::S: ++s; break;
        case PassKind::T: ++t; break;
        case PassKind::InputF: ++inf; break;
        case PassKind::InputB: ++inb; break;
        case PassKind::CBroadcast: ++c0; break;
        case PassKind::CAllReduce: ++c1; break;
        default: break;
      }
    }
    CHECK(f == n);
    CHECK(b == n);
    CHECK(s == n);
    CHECK(t == n);
    CHECK(inf == n);
    CHECK(inb == n);
    CHECK(c0 == n);
    CHECK(c1 == n);
  }
}

TEST_CASE("vhalf places both chunks of a stage pair on one device") {
  const int p = 4;
  CHECK(stage_count(Method::VHalfBase, p) == 2 * p);
  CHECK(stage_placement(Method::VHalfBase, p, 0) == std::make_pair(0, 0));
  CHECK(stage_placement(Method::VHalfBase, p, p - 1) == std::make_pair(p - 1, 0));
  CHECK(stage_placement(Method::VHalfBase, p, p) == std::make_pair(p - 1, 1));
  CHECK(stage_placement(Method::VHalfBase, p, 2 * p - 1) == std::make_pair(0, 1));
}

TEST_CASE("build_program rejects too few microbatches") {
  // [TRIVIAL] precondition n >= p.
  ModelConfig cfg = make_cfg(8, 4);
  CHECK_THROWS_WITH_AS(build_program(Method::Baseline1F1B, cfg),
                       doctest::Contains("insufficient microbatches"),
                       std::invalid_argument);
}

TEST_CASE("layer redistribution") {
  SUBCASE("matches brute force everywhere") {
    // [DERIVED] enumeration oracle over compositions.
    for (int p = 1; p <= 8; ++p) {
      for (int L = 0; L <= 16; ++L) {
        for (double ratio : {0.0, 1.2, 2.4, 5.0}) {
          const StageAssignment got = redistribute_layers(L, p, ratio, 0.0);
          const double want = brute_force_objective(L, p, ratio, 0.0);
          CAPTURE(p);
          CAPTURE(L);
          CAPTURE(ratio);
          CHECK(got.objective == doctest::Approx(want).epsilon(1e-12));
          int total = 0;
          double realized = 0.0;
          for (int d = 0; d < p; ++d) {
            total += got.layers_per_stage[d];
            double cost = got.layers_per_stage[d];
            if (d == p - 1) cost += ratio;
            realized = std::max(realized, cost);
          }
          CHECK(total == L);
          CHECK(realized == doctest::Approx(got.objective).epsilon(1e-12));
        }
      }
    }
  }
  SUBCASE("published examples") {
    // [DERIVED] p=4, L=8, ratio 2.4 -> [3,3,2,0] objective 3.0.
    const StageAssignment a = redistribute_layers(8, 4, 2.4, 0.0);
    CHECK(a.layers_per_stage == std::vector<int>{3, 3, 2, 0});
    CHECK(a.objective == doctest::Approx(3.0).epsilon(1e-12));
    // [DERIVED] residual imbalance: p=2, L=2, ratio 5 -> [2,0], objective 5.
    const StageAssignment b = redistribute_layers(2, 2, 5.0, 0.0);
    CHECK(b.layers_per_stage == std::vector<int>{2, 0});
    CHECK(b.objective == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("zero ratio is uniform when p divides L") {
    // [TRIVIAL]
    const StageAssignment a = redistribute_layers(12, 4, 0.0, 0.0);
    CHECK(a.layers_per_stage == std::vector<int>{3, 3, 3, 3});
    CHECK(a.objective == doctest::Approx(3.0));
  }
}

TEST_CASE("program serialization round-trips") {
  // [TRIVIAL] parse(serialize(x)) == x for every method.
  for (Method method : kAllMethods) {
    const DeviceProgram program = build_program(method, make_cfg(4, 8));
    const DeviceProgram parsed = parse_program(serialize_program(program));
    CHECK(parsed == program);
    CHECK(serialize_program(parsed) == serialize_program(program));
  }
}

TEST_CASE("parser rejects malformed input") {
  // [TRIVIAL]
  CHECK_THROWS_AS(parse_program("garbage"), std::runtime_error);
  CHECK_THROWS_AS(parse_program("vpipe-program 2\n"), std::runtime_error);
  const std::string good = serialize_program(
      build_program(Method::Baseline1F1B, make_cfg(2, 2)));
  CHECK_THROWS_AS(parse_program(good.substr(0, good.size() - 4)),
                  std::runtime_error);
}

TEST_CASE("pass kind and method names round-trip") {
  // [TRIVIAL]
  for (Method method : kAllMethods) {
    CHECK(method_from_name(method_name(method)) == method);
  }
  for (PassKind kind : {PassKind::F, PassKind::B, PassKind::S, PassKind::T,
                        PassKind::CBroadcast, PassKind::CAllReduce,
                        PassKind::CReduce, PassKind::InputF, PassKind::InputB}) {
    CHECK(pass_kind_from_name(pass_kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(method_from_name("nope"), std::invalid_argument);
  CHECK_THROWS_AS(pass_kind_from_name("Z"), std::invalid_argument);
}
