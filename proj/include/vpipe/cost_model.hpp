#pragma once

#include <cstdint>

namespace vpipe {

/// Model and pipeline shape. One instance describes a single experiment:
/// a transformer with L layers and vocabulary V trained on p pipeline
/// devices with n microbatches of b sequences of s tokens each.
struct ModelConfig {
  std::int64_t b = 1;  // microbatch size (sequences)
  std::int64_t s = 1;  // sequence length (tokens)
  std::int64_t h = 1;  // hidden dimension
  std::int64_t V = 1;  // vocabulary size
  std::int64_t L = 1;  // transformer layer count
  std::int64_t p = 1;  // pipeline devices
  std::int64_t n = 1;  // microbatches per iteration

  // Throws std::invalid_argument when any field is < 1.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  std::int64_t tokens() const { return b * s; }
};

enum class LayerKind { Transformer, Input, Output };

struct LayerCost {
  double flops = 0.0;        // floating point operations per microbatch
  double param_units = 0.0;  // parameter count
};

// Analytical per-layer cost. Transformer: bsh(72h+12s) flops, 24h^2 params.
// Input: 3bsh flops, 2hV params. Output: 6bshV flops, 2hV params.
LayerCost layer_cost(LayerKind kind, const ModelConfig& cfg);

struct CostRatios {
  double compute = 0.0;  // output layer flops / one transformer layer flops
  double memory = 0.0;   // output layer params / one transformer layer params
};

// compute = 6V/(72h+12s), memory = V/(12h).
CostRatios cost_ratios(const ModelConfig& cfg);

// Smallest V' >= V with V' divisible by 2p.
std::int64_t pad_vocab_size(std::int64_t V, std::int64_t p);

/// Simulated durations of each pass kind, in time units.
struct PassDurations {
  double f = 0.0;           // forward of one uniform transformer stage (L/p layers)
  double b = 0.0;           // backward of one stage, 2x forward
  double s = 0.0;           // output-layer pass 1, per device shard
  double t = 0.0;           // output-layer pass 2, per device shard
  double input_f = 0.0;     // input-layer forward, per device shard
  double input_b = 0.0;     // input-layer backward, per device shard
  double collective = 0.0;  // one communication barrier
};

struct DurationOptions {
  // Number of communication barriers of the output-layer algorithm.
  // 2 selects the (1/3, 2/3) S/T flop split, 1 selects (3/5, 2/5).
  int output_barriers = 1;
  // Barrier duration; negative means the default of 10% of F.
  double collective_latency = -1.0;
};

// Maps analytical flops to simulated time. unit_rate is flops per time
// unit; with unit_rate equal to one stage's flops, F is exactly 1.0.
// Throws when L is not divisible by p (redistribute explicitly instead).
PassDurations pass_durations(const ModelConfig& cfg, double unit_rate,
                             const DurationOptions& opts = {});

}  // namespace vpipe
