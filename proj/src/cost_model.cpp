#include "vpipe/cost_model.hpp"

#include <stdexcept>
#include <string>

namespace vpipe {

void ModelConfig::validate() const {
  auto check = [](std::int64_t v, const char* name) {
    if (v < 1) {
      throw std::invalid_argument(std::string("ModelConfig: ") + name +
                                  " must be >= 1");
    }
  };
  check(b, "b");
  check(s, "s");
  check(h, "h");
  check(V, "V");
  check(L, "L");
  check(p, "p");
  check(n, "n");
}

LayerCost layer_cost(LayerKind kind, const ModelConfig& cfg) {
  cfg.validate();
  const double b = static_cast<double>(cfg.b);
  const double s = static_cast<double>(cfg.s);
  const double h = static_cast<double>(cfg.h);
  const double V = static_cast<double>(cfg.V);
  switch (kind) {
    case LayerKind::Transformer:
      return {b * s * h * (72.0 * h + 12.0 * s), 24.0 * h * h};
    case LayerKind::Input:
      return {3.0 * b * s * h, 2.0 * h * V};
    case LayerKind::Output:
      return {6.0 * b * s * h * V, 2.0 * h * V};
  }
  throw std::invalid_argument("layer_cost: unknown LayerKind");
}

CostRatios cost_ratios(const ModelConfig& cfg) {
  cfg.validate();
  const double s = static_cast<double>(cfg.s);
  const double h = static_cast<double>(cfg.h);
  const double V = static_cast<double>(cfg.V);
  return {6.0 * V / (72.0 * h + 12.0 * s), V / (12.0 * h)};
}

std::int64_t pad_vocab_size(std::int64_t V, std::int64_t p) {
  if (V < 1 || p < 1) {
    throw std::invalid_argument("pad_vocab_size: V and p must be >= 1");
  }
  const std::int64_t align = 2 * p;
  return (V + align - 1) / align * align;
}

PassDurations pass_durations(const ModelConfig& cfg, double unit_rate,
                             const DurationOptions& opts) {
  cfg.validate();
  if (unit_rate <= 0.0) {
    throw std::invalid_argument("pass_durations: unit_rate must be > 0");
  }
  if (cfg.L % cfg.p != 0) {
    throw std::invalid_argument(
        "pass_durations: L not divisible by p; uniform stages require an "
        "explicit redistribution");
  }
  if (opts.output_barriers != 1 && opts.output_barriers != 2) {
    throw std::invalid_argument("pass_durations: output_barriers must be 1 or 2");
  }

  PassDurations d;
  const double layers_per_stage = static_cast<double>(cfg.L / cfg.p);
  d.f = layers_per_stage * layer_cost(LayerKind::Transformer, cfg).flops / unit_rate;
  d.b = 2.0 * d.f;

  // Forward/backward together cost three table units (B = 2F), for the
  // output and input layers just as for transformer stages.
  const double out_shard = 3.0 *
      layer_cost(LayerKind::Output, cfg).flops / static_cast<double>(cfg.p) / unit_rate;
  if (opts.output_barriers == 2) {
    // Two barriers: S is the logit matmul, T the two backward matmuls.
    d.s = out_shard / 3.0;
    d.t = out_shard * 2.0 / 3.0;
  } else {
    // Single barrier: S additionally computes the A and B gradient terms.
    d.s = out_shard * 3.0 / 5.0;
    d.t = out_shard * 2.0 / 5.0;
  }

  const double in_shard = 3.0 *
      layer_cost(LayerKind::Input, cfg).flops / static_cast<double>(cfg.p) / unit_rate;
  d.input_f = in_shard / 2.0;
  d.input_b = in_shard / 2.0;

  d.collective = opts.collective_latency >= 0.0 ? opts.collective_latency : 0.1 * d.f;
  return d;
}

}  // namespace vpipe
