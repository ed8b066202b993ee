#include "vpipe/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace vpipe {

double MachineModel::duration(const Pass& pass) const {
  switch (pass.kind) {
    case PassKind::F: return f.at(pass.device).at(pass.chunk);
    case PassKind::B: return b.at(pass.device).at(pass.chunk);
    case PassKind::S: return s;
    case PassKind::T: return t;
    case PassKind::InputF: return input_f;
    case PassKind::InputB: return input_b;
    case PassKind::CBroadcast:
    case PassKind::CAllReduce:
    case PassKind::CReduce: return collective;
  }
  throw std::invalid_argument("duration: unknown pass kind");
}

MachineModel build_machine(const DeviceProgram& program,
                           const MachineOptions& opts) {
  const ModelConfig& cfg = program.cfg;
  cfg.validate();
  if (opts.unit_rate <= 0.0) {
    throw std::invalid_argument("build_machine: unit_rate must be > 0");
  }
  const Method method = program.method;
  const int p = static_cast<int>(cfg.p);

  MachineModel machine;
  machine.p = p;
  machine.chunks = method_chunks(method);
  machine.sync_collectives = method == Method::Interlaced;
  machine.unit_rate = opts.unit_rate;

  const double transformer =
      layer_cost(LayerKind::Transformer, cfg).flops / opts.unit_rate;
  const double input_total =
      layer_cost(LayerKind::Input, cfg).flops / opts.unit_rate;

  std::vector<double> layers(p, static_cast<double>(cfg.L) / p);
  if (method == Method::Redis) {
    const StageAssignment stages = redistribute_layers(cfg);
    for (int d = 0; d < p; ++d) layers[d] = stages.layers_per_stage[d];
  } else if (cfg.L % cfg.p != 0) {
    throw std::invalid_argument(
        "build_machine: L not divisible by p; use the redis method");
  }

  machine.f.assign(p, std::vector<double>(machine.chunks, 0.0));
  machine.b.assign(p, std::vector<double>(machine.chunks, 0.0));
  for (int d = 0; d < p; ++d) {
    const double fwd = layers[d] / machine.chunks * transformer;
    for (int c = 0; c < machine.chunks; ++c) {
      machine.f[d][c] = fwd;
      machine.b[d][c] = 2.0 * fwd;
    }
  }

  const bool vocab = method_has_vocab_passes(method);
  if (vocab) {
    // Vocabulary layers are padded and sharded evenly across devices.
    // Forward/backward of a layer together cost three table units (B=2F);
    // the same convention as transformer stages keeps the methods
    // time-comparable.
    ModelConfig padded = cfg;
    padded.V = pad_vocab_size(cfg.V, cfg.p);
    const double out_shard =
        3.0 * layer_cost(LayerKind::Output, padded).flops / p / opts.unit_rate;
    if (method_barriers(method) == 2) {
      machine.s = out_shard / 3.0;
      machine.t = out_shard * 2.0 / 3.0;
    } else {
      machine.s = out_shard * 3.0 / 5.0;
      machine.t = out_shard * 2.0 / 5.0;
    }
    machine.input_f = 3.0 * input_total / p / 2.0;
    machine.input_b = 3.0 * input_total / p / 2.0;
  } else if (opts.include_output_cost) {
    // Monolithic output layer folded into the last stage's F/B.
    const double out_fwd =
        layer_cost(LayerKind::Output, cfg).flops / opts.unit_rate;
    auto [dev, chunk] = stage_placement(method, p, stage_count(method, p) - 1);
    machine.f[dev][chunk] += out_fwd;
    machine.b[dev][chunk] += 2.0 * out_fwd;
  }
  if (opts.include_input_cost && !method_has_input_passes(method)) {
    machine.f[0][0] += input_total;
    machine.b[0][0] += 2.0 * input_total;
  }

  machine.collective = opts.collective_latency >= 0.0
                           ? opts.collective_latency
                           : 0.1 * (static_cast<double>(cfg.L) / p) * transformer;
  return machine;
}

Timeline simulate(const DeviceProgram& program, const MachineModel& machine) {
  const PassGraph graph = build_pass_graph(program);
  const int p = static_cast<int>(program.cfg.p);
  if (machine.p != p) {
    throw std::invalid_argument("simulate: machine/program device count mismatch");
  }
  const std::size_t count = graph.nodes.size();

  // Stream sequences: per device, the compute stream runs every
  // non-collective pass in program order (plus collectives when the
  // machine is synchronous); otherwise collectives go to the comm stream.
  std::vector<std::array<std::vector<int>, 2>> stream_nodes(p);
  for (int d = 0; d < p; ++d) {
    for (int id : graph.node_at[d]) {
      const bool comm = graph.nodes[id].collective && !machine.sync_collectives;
      stream_nodes[d][comm ? kCommStream : kComputeStream].push_back(id);
    }
  }

  // ASAP schedule = longest-path evaluation over semantic dependencies
  // plus stream-adjacency edges; Kahn's algorithm keeps it deterministic.
  std::vector<std::vector<int>> succ(count);
  std::vector<int> indegree(count, 0);
  auto edge = [&](int u, int v) {
    succ[u].push_back(v);
    ++indegree[v];
  };
  for (std::size_t v = 0; v < count; ++v) {
    for (int u : graph.preds[v]) edge(u, static_cast<int>(v));
  }
  for (const auto& device_streams : stream_nodes) {
    for (const auto& seq : device_streams) {
      for (std::size_t j = 1; j < seq.size(); ++j) edge(seq[j - 1], seq[j]);
    }
  }

  std::vector<double> start(count, 0.0), end(count, 0.0);
  std::vector<int> ready;
  for (std::size_t v = 0; v < count; ++v) {
    if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
  }
  std::size_t done = 0;
  std::vector<double> earliest(count, 0.0);
  while (!ready.empty()) {
    const int u = ready.back();
    ready.pop_back();
    start[u] = earliest[u];
    Pass pass = graph.nodes[u].pass;
    if (pass.device < 0) pass.device = graph.nodes[u].locations.front().first;
    end[u] = start[u] + machine.duration(pass);
    ++done;
    for (int v : succ[u]) {
      earliest[v] = std::max(earliest[v], end[u]);
      if (--indegree[v] == 0) ready.push_back(v);
    }
  }
  if (done != count) {
    std::ostringstream os;
    os << "simulate: deadlock; blocked passes:";
    int listed = 0;
    for (std::size_t v = 0; v < count && listed < 8; ++v) {
      if (indegree[v] > 0) {
        os << " " << pass_kind_name(graph.nodes[v].pass.kind) << "/mb"
           << graph.nodes[v].pass.microbatch;
        ++listed;
      }
    }
    throw std::runtime_error(os.str());
  }

  Timeline timeline;
  timeline.method = program.method;
  timeline.cfg = program.cfg;
  timeline.unit_rate = machine.unit_rate;
  timeline.streams.resize(p);
  for (int d = 0; d < p; ++d) {
    for (int stream = 0; stream < 2; ++stream) {
      for (int id : stream_nodes[d][stream]) {
        Pass pass = graph.nodes[id].pass;
        pass.device = d;
        timeline.streams[d][stream].push_back({pass, start[id], end[id]});
        timeline.makespan = std::max(timeline.makespan, end[id]);
      }
    }
  }
  return timeline;
}

int Metrics::peak_inflight() const {
  int peak = 0;
  for (const DeviceMetrics& m : devices) peak = std::max(peak, m.peak_inflight);
  return peak;
}

Metrics metrics(const Timeline& timeline, const ModelConfig& cfg,
                const MetricsOptions& opts) {
  cfg.validate();
  const int p = static_cast<int>(cfg.p);
  const int chunks = method_chunks(timeline.method);
  const double act_bytes =
      opts.act_bytes_per_mb >= 0.0
          ? opts.act_bytes_per_mb
          : 34.0 * cfg.b * cfg.s * cfg.h * (static_cast<double>(cfg.L) / p);

  const LayerCost transformer = layer_cost(LayerKind::Transformer, cfg);
  const LayerCost input = layer_cost(LayerKind::Input, cfg);
  const LayerCost output = layer_cost(LayerKind::Output, cfg);
  const std::int64_t padded_v = pad_vocab_size(cfg.V, cfg.p);
  const bool vocab = method_has_vocab_passes(timeline.method);
  auto [out_dev, out_chunk] =
      stage_placement(timeline.method, p, stage_count(timeline.method, p) - 1);
  (void)out_chunk;

  Metrics result;
  result.makespan = timeline.makespan;
  result.devices.resize(p);
  for (int d = 0; d < p; ++d) {
    DeviceMetrics& m = result.devices[d];
    const auto& compute = timeline.streams[d][kComputeStream];
    if (!compute.empty()) {
      const double window = compute.back().end - compute.front().start;
      // Synchronous collectives sit on the compute stream but are wait
      // time, not computation: they count as idle.
      for (const TimelineEntry& e : compute) {
        if (!is_collective(e.pass.kind)) m.busy += e.end - e.start;
      }
      m.idle = std::max(0.0, window - m.busy);
      m.bubble_ratio = window > 0.0 ? m.idle / window : 0.0;
    }

    // Peak in-flight microbatches: forwards started minus backwards
    // completed, each chunk holding 1/chunks of a microbatch.
    double inflight = 0.0, peak = 0.0;
    int st_held = 0, st_peak = 0;
    for (const TimelineEntry& e : compute) {
      if (e.pass.kind == PassKind::F) inflight += 1.0 / chunks;
      if (e.pass.kind == PassKind::B) inflight -= 1.0 / chunks;
      if (e.pass.kind == PassKind::S) ++st_held;
      if (e.pass.kind == PassKind::T) --st_held;
      peak = std::max(peak, inflight);
      st_peak = std::max(st_peak, st_held);
    }
    m.peak_inflight = static_cast<int>(std::ceil(peak - 1e-9));

    double param_units = (static_cast<double>(cfg.L) / p) * transformer.param_units;
    if (vocab) {
      const double shard_units = 2.0 * cfg.h * padded_v / p;
      param_units += 2.0 * shard_units;  // output shard + input shard
    } else {
      if (d == out_dev) param_units += output.param_units;
      if (d == 0) param_units += input.param_units;
    }
    const double st_buffer =
        st_peak * (static_cast<double>(cfg.b) * cfg.s * (padded_v / cfg.p) +
                   2.0 * cfg.b * cfg.s * cfg.h) *
        opts.vocab_buffer_bytes_per_elem;
    m.peak_bytes = m.peak_inflight * act_bytes +
                   param_units * opts.param_bytes_per_unit + st_buffer;
  }

  const double total_flops =
      cfg.n * (cfg.L * transformer.flops + input.flops + output.flops);
  const double rate = opts.unit_rate > 0.0 ? opts.unit_rate : timeline.unit_rate;
  if (timeline.makespan > 0.0) {
    result.mfu = total_flops / (p * timeline.makespan * rate);
  }
  return result;
}

double steady_state_idle_per_microbatch(const Timeline& timeline, int device) {
  const int n = static_cast<int>(timeline.cfg.n);
  const int p = static_cast<int>(timeline.cfg.p);
  const int a = std::max(p + 2, n / 4);
  const int b = std::min(n - (p + 2), 3 * n / 4);
  if (b <= a) {
    throw std::invalid_argument(
        "steady_state_idle_per_microbatch: not enough microbatches");
  }
  const auto& compute = timeline.streams.at(device)[kComputeStream];
  double t0 = -1.0, t1 = -1.0;
  for (const TimelineEntry& e : compute) {
    if (e.pass.kind == PassKind::F && e.pass.chunk == 0) {
      if (e.pass.microbatch == a) t0 = e.start;
      if (e.pass.microbatch == b) t1 = e.start;
    }
  }
  if (t0 < 0.0 || t1 < 0.0) {
    throw std::invalid_argument(
        "steady_state_idle_per_microbatch: window forwards not found");
  }
  double busy = 0.0;
  for (const TimelineEntry& e : compute) {
    busy += std::max(0.0, std::min(e.end, t1) - std::max(e.start, t0));
  }
  return ((t1 - t0) - busy) / (b - a);
}

int peak_input_buffered(const Timeline& timeline, int device) {
  // Hold interval per microbatch: from the device's InputF end until the
  // first transformer stage (device 0, chunk 0) starts consuming it.
  std::vector<double> consume(timeline.cfg.n, -1.0);
  for (const TimelineEntry& e : timeline.streams.at(0)[kComputeStream]) {
    if (e.pass.kind == PassKind::F && e.pass.chunk == 0) {
      consume[e.pass.microbatch] = e.start;
    }
  }
  std::vector<std::pair<double, double>> held;
  for (const TimelineEntry& e : timeline.streams.at(device)[kComputeStream]) {
    if (e.pass.kind == PassKind::InputF) {
      held.emplace_back(e.end, consume[e.pass.microbatch]);
    }
  }
  int peak = 0;
  for (const auto& [start, _] : held) {
    int overlapping = 0;
    for (const auto& [hs, he] : held) {
      if (hs <= start && start <= he) ++overlapping;
    }
    peak = std::max(peak, overlapping);
  }
  return peak;
}

namespace {

std::string format_time(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

}  // namespace

std::string timeline_records(const Timeline& timeline) {
  std::ostringstream os;
  for (std::size_t d = 0; d < timeline.streams.size(); ++d) {
    for (int stream = 0; stream < 2; ++stream) {
      for (const TimelineEntry& e : timeline.streams[d][stream]) {
        os << d << " " << (stream == kComputeStream ? "compute" : "comm") << " "
           << pass_kind_name(e.pass.kind) << " " << e.pass.microbatch << " "
           << format_time(e.start) << " " << format_time(e.end) << "\n";
      }
    }
  }
  return os.str();
}

std::string metrics_csv(const Metrics& metrics) {
  std::ostringstream os;
  os << "device,busy,idle,bubble_ratio,peak_inflight,peak_bytes,mfu\n";
  for (std::size_t d = 0; d < metrics.devices.size(); ++d) {
    const DeviceMetrics& m = metrics.devices[d];
    os << d << "," << format_time(m.busy) << "," << format_time(m.idle) << ","
       << format_time(m.bubble_ratio) << "," << m.peak_inflight << ","
       << format_time(m.peak_bytes) << "," << format_time(metrics.mfu) << "\n";
  }
  return os.str();
}

}  // namespace vpipe
