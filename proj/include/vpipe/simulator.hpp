#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vpipe/cost_model.hpp"
#include "vpipe/schedule.hpp"

namespace vpipe {

// Two-stream-per-device machine: stream 0 is compute, stream 1 is
// communication. Collectives normally occupy only communication streams;
// the interlaced method runs them synchronously on compute streams.
struct MachineOptions {
  double unit_rate = 1.0;
  // Collective latency; negative selects the default of 10% of a balanced
  // forward pass (fully overlapped regime).
  double collective_latency = -1.0;
  // Fold the (unsharded) output layer cost into the last stage's F/B for
  // methods without vocabulary passes.
  bool include_output_cost = true;
  // Fold the input layer cost into the first stage's F/B (methods without
  // input passes) — off by default so balanced baselines stay balanced.
  bool include_input_cost = false;
};

struct MachineModel {
  int p = 0;
  int chunks = 1;
  bool sync_collectives = false;
  double unit_rate = 1.0;
  // Per-device, per-chunk transformer pass durations (stage imbalance and
  // folded vocabulary-layer costs live here).
  std::vector<std::vector<double>> f;
  std::vector<std::vector<double>> b;
  double s = 0.0;
  double t = 0.0;
  double input_f = 0.0;
  double input_b = 0.0;
  double collective = 0.0;

  double duration(const Pass& pass) const;
};

MachineModel build_machine(const DeviceProgram& program,
                           const MachineOptions& opts = {});

constexpr int kComputeStream = 0;
constexpr int kCommStream = 1;

struct TimelineEntry {
  Pass pass;
  double start = 0.0;
  double end = 0.0;
};

struct Timeline {
  Method method = Method::Baseline1F1B;
  ModelConfig cfg;
  // streams[device][stream] holds the entries of that stream in time order.
  std::vector<std::array<std::vector<TimelineEntry>, 2>> streams;
  double makespan = 0.0;
  double unit_rate = 1.0;  // copied from the machine; used for MFU
};

// Greedy as-soon-as-possible execution of the per-device ordered pass
// lists. Throws std::runtime_error naming the blocked passes on deadlock.
Timeline simulate(const DeviceProgram& program, const MachineModel& machine);

struct DeviceMetrics {
  double busy = 0.0;
  double idle = 0.0;
  double bubble_ratio = 0.0;
  int peak_inflight = 0;
  double peak_bytes = 0.0;
};

struct MetricsOptions {
  // Activation bytes per in-flight microbatch per stage; negative selects
  // the default 34*b*s*h*(L/p).
  double act_bytes_per_mb = -1.0;
  double param_bytes_per_unit = 2.0;
  double vocab_buffer_bytes_per_elem = 2.0;
  // Flops per time unit for MFU; non-positive uses the timeline's rate.
  double unit_rate = -1.0;
};

struct Metrics {
  std::vector<DeviceMetrics> devices;
  double makespan = 0.0;
  double mfu = 0.0;
  int peak_inflight() const;  // max over devices
};

Metrics metrics(const Timeline& timeline, const ModelConfig& cfg,
                const MetricsOptions& opts = {});

// Average compute-stream idle per microbatch on one device, measured over
// the steady-state window between the starts of two mid-run forwards.
double steady_state_idle_per_microbatch(const Timeline& timeline, int device);

// Maximum number of microbatches whose input-layer output is buffered on
// one device at the same instant (held from InputF end until the first
// transformer stage starts consuming it).
int peak_input_buffered(const Timeline& timeline, int device);

// Line-oriented record emitters (byte-deterministic).
std::string timeline_records(const Timeline& timeline);
std::string metrics_csv(const Metrics& metrics);

}  // namespace vpipe
