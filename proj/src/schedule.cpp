#include "vpipe/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vpipe {

bool is_collective(PassKind kind) {
  return kind == PassKind::CBroadcast || kind == PassKind::CAllReduce ||
         kind == PassKind::CReduce;
}

const char* pass_kind_name(PassKind kind) {
  switch (kind) {
    case PassKind::F: return "F";
    case PassKind::B: return "B";
    case PassKind::S: return "S";
    case PassKind::T: return "T";
    case PassKind::CBroadcast: return "C0";
    case PassKind::CAllReduce: return "C1";
    case PassKind::CReduce: return "C2";
    case PassKind::InputF: return "IF";
    case PassKind::InputB: return "IB";
  }
  return "?";
}

PassKind pass_kind_from_name(const std::string& name) {
  if (name == "F") return PassKind::F;
  if (name == "B") return PassKind::B;
  if (name == "S") return PassKind::S;
  if (name == "T") return PassKind::T;
  if (name == "C0") return PassKind::CBroadcast;
  if (name == "C1") return PassKind::CAllReduce;
  if (name == "C2") return PassKind::CReduce;
  if (name == "IF") return PassKind::InputF;
  if (name == "IB") return PassKind::InputB;
  throw std::invalid_argument("unknown pass kind: " + name);
}

const char* method_name(Method method) {
  switch (method) {
    case Method::Baseline1F1B: return "baseline";
    case Method::Redis: return "redis";
    case Method::Vocab1: return "vocab1";
    case Method::Vocab2: return "vocab2";
    case Method::Interlaced: return "interlaced";
    case Method::VHalfBase: return "vhalf";
    case Method::VHalfVocab1: return "vhalf-vocab1";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "baseline") return Method::Baseline1F1B;
  if (name == "redis") return Method::Redis;
  if (name == "vocab1") return Method::Vocab1;
  if (name == "vocab2") return Method::Vocab2;
  if (name == "interlaced") return Method::Interlaced;
  if (name == "vhalf") return Method::VHalfBase;
  if (name == "vhalf-vocab1") return Method::VHalfVocab1;
  throw std::invalid_argument("unknown method: " + name);
}

bool method_has_vocab_passes(Method method) {
  return method == Method::Vocab1 || method == Method::Vocab2 ||
         method == Method::Interlaced || method == Method::VHalfVocab1;
}

// The interlaced pipeline folds the input layer into its synchronous
// phases instead of scheduling dedicated passes.
bool method_has_input_passes(Method method) {
  return method == Method::Vocab1 || method == Method::Vocab2 ||
         method == Method::VHalfVocab1;
}

int method_barriers(Method method) {
  switch (method) {
    case Method::Vocab2: return 1;
    case Method::Vocab1:
    case Method::VHalfVocab1:
    case Method::Interlaced: return 2;
    default: return 0;
  }
}

int method_chunks(Method method) {
  return (method == Method::VHalfBase || method == Method::VHalfVocab1) ? 2 : 1;
}

int stage_count(Method method, int p) { return method_chunks(method) * p; }

std::pair<int, int> stage_placement(Method method, int p, int stage) {
  if (method_chunks(method) == 1) return {stage, 0};
  return stage < p ? std::make_pair(stage, 0) : std::make_pair(2 * p - 1 - stage, 1);
}

namespace {

// Intra-unit ordering constants. Only relative order within one grid
// unit matters.
constexpr int kSubEarly = 0;
constexpr int kSubInputB = 1;
constexpr int kSubS = 2;
constexpr int kSubC1 = 3;
constexpr int kSubFB = 4;
constexpr int kSubT = 5;
constexpr int kSubC2 = 6;

void add_all_devices(BuildingBlock* block, PassKind kind, int p, int offset,
                     int sub, int chunk = 0) {
  for (int d = 0; d < p; ++d) {
    block->entries.push_back({kind, d, chunk, offset, sub});
  }
}

}  // namespace

BuildingBlock build_block(Method method, const ModelConfig& cfg) {
  cfg.validate();
  const int p = static_cast<int>(cfg.p);
  BuildingBlock block;
  block.chunks_per_device = method_chunks(method);

  if (block.chunks_per_device == 2) {
    block.interval = 6;
    const int shift = method == Method::VHalfVocab1 ? 6 : 0;
    block.lifespan = 6 * p + shift;
    for (int stage = 0; stage < 2 * p; ++stage) {
      auto [dev, chunk] = stage_placement(method, p, stage);
      block.entries.push_back({PassKind::F, dev, chunk, stage, kSubFB});
      block.entries.push_back(
          {PassKind::B, dev, chunk, 6 * p - 2 - 2 * stage + shift, kSubFB});
    }
    if (method == Method::VHalfVocab1) {
      add_all_devices(&block, PassKind::InputF, p, -1, kSubEarly);
      add_all_devices(&block, PassKind::CBroadcast, p, 2 * p, kSubEarly);
      add_all_devices(&block, PassKind::S, p, 2 * p + 1, kSubS);
      add_all_devices(&block, PassKind::CAllReduce, p, 2 * p + 2, kSubC1);
      add_all_devices(&block, PassKind::T, p, 2 * p + 4, kSubT);
      add_all_devices(&block, PassKind::CReduce, p, 2 * p + 5, kSubC2);
      add_all_devices(&block, PassKind::InputB, p, 6 * p + 5, kSubInputB);
    }
    return block;
  }

  block.interval = 3;
  int shift = 0;  // extra intervals between the last-stage F and B
  switch (method) {
    case Method::Vocab1: shift = 6; break;
    case Method::Vocab2: shift = 3; break;
    case Method::Interlaced: shift = (3 * p + 1) / 2; break;
    default: break;
  }
  block.lifespan = 3 * p + shift;

  for (int d = 0; d < p; ++d) {
    block.entries.push_back({PassKind::F, d, 0, d, kSubFB});
    block.entries.push_back({PassKind::B, d, 0, 3 * p - 2 - 2 * d + shift, kSubFB});
  }

  if (method == Method::Vocab1 || method == Method::Vocab2) {
    // Input forwards sit one grid unit before the first stage's F: late
    // enough that idle devices do not run ahead and buffer more than two
    // microbatches of embeddings, early enough never to stall stage 0.
    add_all_devices(&block, PassKind::InputF, p, -1, kSubEarly);
    add_all_devices(&block, PassKind::CBroadcast, p, p, kSubEarly);
    add_all_devices(&block, PassKind::S, p, p + 1, kSubS);
    add_all_devices(&block, PassKind::CAllReduce, p, p + 2, kSubC1);
    add_all_devices(&block, PassKind::T, p, p + 4, kSubT);
    if (method == Method::Vocab1) {
      add_all_devices(&block, PassKind::CReduce, p, p + 5, kSubC2);
    }
    // Backward of the first stage finishes at 3p + shift on device 0.
    add_all_devices(&block, PassKind::InputB, p, 3 * p + shift + 1, kSubInputB);
  } else if (method == Method::Interlaced) {
    // Fully synchronous vocabulary phase inserted after the last-stage
    // forward; the two phases are fenced by barriers on every device.
    add_all_devices(&block, PassKind::CBroadcast, p, p, kSubEarly);
    add_all_devices(&block, PassKind::S, p, p, kSubS);
    add_all_devices(&block, PassKind::CAllReduce, p, p, kSubC1);
    add_all_devices(&block, PassKind::T, p, p + 1, kSubT);
    add_all_devices(&block, PassKind::CReduce, p, p + 1, kSubC2);
  }
  return block;
}

BlockAnalysis analyze_block(const BuildingBlock& block) {
  if (block.interval <= 0) {
    throw std::invalid_argument("analyze_block: zero interval");
  }
  BlockAnalysis analysis;
  analysis.lifespan = block.lifespan;
  analysis.interval = block.interval;
  const int denom = block.interval * block.chunks_per_device;
  analysis.peak_microbatches = (block.lifespan + denom - 1) / denom;
  return analysis;
}

DeviceProgram build_program(Method method, const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.n < cfg.p) {
    throw std::invalid_argument("build_program: insufficient microbatches (n < p)");
  }
  if (method_has_vocab_passes(method) &&
      pad_vocab_size(cfg.V, cfg.p) % cfg.p != 0) {
    throw std::invalid_argument("build_program: vocabulary not shardable");
  }

  const BuildingBlock block = build_block(method, cfg);
  const int p = static_cast<int>(cfg.p);
  const int n = static_cast<int>(cfg.n);

  struct Keyed {
    long long key;
    int sub;
    Pass pass;
  };
  std::vector<std::vector<Keyed>> per_device(p);
  for (int i = 0; i < n; ++i) {
    for (const BlockEntry& entry : block.entries) {
      const long long key =
          static_cast<long long>(entry.offset) + static_cast<long long>(block.interval) * i;
      per_device[entry.device].push_back(
          {key, entry.sub, Pass{entry.kind, entry.device, i, entry.chunk}});
    }
  }

  DeviceProgram program;
  program.method = method;
  program.cfg = cfg;
  program.order.resize(p);
  for (int d = 0; d < p; ++d) {
    std::sort(per_device[d].begin(), per_device[d].end(),
              [](const Keyed& a, const Keyed& b) {
                return std::tie(a.key, a.sub, a.pass.microbatch, a.pass.chunk) <
                       std::tie(b.key, b.sub, b.pass.microbatch, b.pass.chunk);
              });
    program.order[d].reserve(per_device[d].size());
    for (const Keyed& k : per_device[d]) program.order[d].push_back(k.pass);
  }
  return program;
}

PassGraph build_pass_graph(const DeviceProgram& program) {
  const int p = static_cast<int>(program.cfg.p);
  const int n = static_cast<int>(program.cfg.n);
  if (static_cast<int>(program.order.size()) != p) {
    throw std::invalid_argument("program: device list count != p");
  }

  PassGraph graph;
  graph.node_at.resize(p);
  std::map<std::tuple<int, int, int, int>, int> index;  // kind,dev,mb,chunk
  std::map<std::pair<int, int>, int> collective_index;  // kind,mb

  for (int d = 0; d < p; ++d) {
    graph.node_at[d].reserve(program.order[d].size());
    for (int j = 0; j < static_cast<int>(program.order[d].size()); ++j) {
      const Pass& pass = program.order[d][j];
      if (pass.device != d) {
        throw std::invalid_argument("program: pass device field mismatch");
      }
      if (pass.microbatch < 0 || pass.microbatch >= n) {
        throw std::invalid_argument("program: microbatch out of range");
      }
      int id;
      if (is_collective(pass.kind)) {
        auto key = std::make_pair(static_cast<int>(pass.kind), pass.microbatch);
        auto it = collective_index.find(key);
        if (it == collective_index.end()) {
          id = static_cast<int>(graph.nodes.size());
          collective_index.emplace(key, id);
          graph.nodes.push_back({Pass{pass.kind, -1, pass.microbatch, 0}, true, {}});
        } else {
          id = it->second;
        }
        for (const auto& loc : graph.nodes[id].locations) {
          if (loc.first == d) {
            throw std::invalid_argument("program: duplicate collective participation");
          }
        }
      } else {
        auto key = std::make_tuple(static_cast<int>(pass.kind), d,
                                   pass.microbatch, pass.chunk);
        if (index.count(key)) {
          throw std::invalid_argument("program: duplicate pass");
        }
        id = static_cast<int>(graph.nodes.size());
        index.emplace(key, id);
        graph.nodes.push_back({pass, false, {}});
      }
      graph.nodes[id].locations.emplace_back(d, j);
      graph.node_at[d].push_back(id);
    }
  }

  graph.preds.resize(graph.nodes.size());
  auto find = [&](PassKind kind, int dev, int mb, int chunk) -> int {
    auto it = index.find({static_cast<int>(kind), dev, mb, chunk});
    if (it == index.end()) {
      throw std::invalid_argument(
          std::string("program: missing required pass ") + pass_kind_name(kind) +
          " device " + std::to_string(dev) + " microbatch " + std::to_string(mb));
    }
    return it->second;
  };
  auto find_collective = [&](PassKind kind, int mb) -> int {
    auto it = collective_index.find({static_cast<int>(kind), mb});
    if (it == collective_index.end()) {
      throw std::invalid_argument(std::string("program: missing collective ") +
                                  pass_kind_name(kind) + " microbatch " +
                                  std::to_string(mb));
    }
    return it->second;
  };
  auto add_edge = [&](int from, int to) { graph.preds[to].push_back(from); };

  const Method method = program.method;
  const int stages = stage_count(method, p);
  const bool vocab = method_has_vocab_passes(method);
  const int barriers = method_barriers(method);

  for (int i = 0; i < n; ++i) {
    std::vector<int> f_nodes(stages), b_nodes(stages);
    for (int stage = 0; stage < stages; ++stage) {
      auto [dev, chunk] = stage_placement(method, p, stage);
      f_nodes[stage] = find(PassKind::F, dev, i, chunk);
      b_nodes[stage] = find(PassKind::B, dev, i, chunk);
    }
    for (int stage = 1; stage < stages; ++stage) {
      add_edge(f_nodes[stage - 1], f_nodes[stage]);
      add_edge(b_nodes[stage], b_nodes[stage - 1]);
    }

    if (!vocab) {
      add_edge(f_nodes[stages - 1], b_nodes[stages - 1]);
    } else {
      const int c0 = find_collective(PassKind::CBroadcast, i);
      const int c1 = find_collective(PassKind::CAllReduce, i);
      add_edge(f_nodes[stages - 1], c0);
      for (int d = 0; d < p; ++d) {
        const int s_node = find(PassKind::S, d, i, 0);
        add_edge(c0, s_node);
        add_edge(s_node, c1);
      }
      if (barriers == 2) {
        const int c2 = find_collective(PassKind::CReduce, i);
        for (int d = 0; d < p; ++d) {
          const int t_node = find(PassKind::T, d, i, 0);
          add_edge(c1, t_node);
          add_edge(t_node, c2);
        }
        add_edge(c2, b_nodes[stages - 1]);
      } else {
        add_edge(c1, b_nodes[stages - 1]);
        for (int d = 0; d < p; ++d) {
          add_edge(c1, find(PassKind::T, d, i, 0));
        }
      }
    }

    if (method_has_input_passes(method)) {
      for (int d = 0; d < p; ++d) {
        add_edge(find(PassKind::InputF, d, i, 0), f_nodes[0]);
        add_edge(b_nodes[0], find(PassKind::InputB, d, i, 0));
      }
    }
  }
  return graph;
}

namespace {

std::string pass_label(const PassGraph::Node& node) {
  std::ostringstream os;
  os << pass_kind_name(node.pass.kind) << " microbatch " << node.pass.microbatch;
  if (!node.collective) {
    os << " device " << node.pass.device;
    if (node.pass.chunk != 0) os << " chunk " << node.pass.chunk;
  }
  return os.str();
}

}  // namespace

std::vector<std::string> validate_dependencies(const DeviceProgram& program) {
  std::vector<std::string> violations;
  PassGraph graph;
  try {
    graph = build_pass_graph(program);
  } catch (const std::invalid_argument& e) {
    violations.emplace_back(e.what());
    return violations;
  }

  // Same-device ordering against every semantic dependency.
  for (std::size_t v = 0; v < graph.nodes.size(); ++v) {
    for (int u : graph.preds[v]) {
      for (const auto& [du, iu] : graph.nodes[u].locations) {
        for (const auto& [dv, iv] : graph.nodes[v].locations) {
          if (du == dv && iu >= iv) {
            violations.push_back("device " + std::to_string(dv) + ": " +
                                 pass_label(graph.nodes[v]) +
                                 " scheduled before its dependency " +
                                 pass_label(graph.nodes[u]));
          }
        }
      }
    }
  }

  // Global acyclicity over semantic plus per-device order edges.
  std::vector<std::vector<int>> succ(graph.nodes.size());
  std::vector<int> indegree(graph.nodes.size(), 0);
  auto edge = [&](int u, int v) {
    succ[u].push_back(v);
    ++indegree[v];
  };
  for (std::size_t v = 0; v < graph.nodes.size(); ++v) {
    for (int u : graph.preds[v]) edge(u, static_cast<int>(v));
  }
  for (const auto& list : graph.node_at) {
    for (std::size_t j = 1; j < list.size(); ++j) edge(list[j - 1], list[j]);
  }
  std::vector<int> ready;
  for (std::size_t v = 0; v < graph.nodes.size(); ++v) {
    if (indegree[v] == 0) ready.push_back(static_cast<int>(v));
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const int u = ready.back();
    ready.pop_back();
    ++seen;
    for (int v : succ[u]) {
      if (--indegree[v] == 0) ready.push_back(v);
    }
  }
  if (seen != graph.nodes.size()) {
    violations.push_back("cyclic dependency among " +
                         std::to_string(graph.nodes.size() - seen) + " passes");
  }
  return violations;
}

StageAssignment redistribute_layers(std::int64_t L, std::int64_t p,
                                    double output_ratio, double input_ratio) {
  if (L < 0 || p < 1) {
    throw std::invalid_argument("redistribute_layers: need L >= 0, p >= 1");
  }
  constexpr double kEps = 1e-9;
  std::vector<double> extra(p, 0.0);
  extra[0] += input_ratio;
  extra[p - 1] += output_ratio;
  const double min_obj = *std::max_element(extra.begin(), extra.end());

  // The optimum objective is k + extra[d] for some stage d and integer k.
  std::vector<double> candidates;
  for (double e : extra) {
    for (std::int64_t k = 0; k <= L; ++k) candidates.push_back(e + static_cast<double>(k));
  }
  std::sort(candidates.begin(), candidates.end());

  StageAssignment best;
  for (double M : candidates) {
    if (M < min_obj - kEps) continue;
    std::int64_t capacity = 0;
    std::vector<std::int64_t> caps(p);
    for (std::int64_t d = 0; d < p; ++d) {
      caps[d] = std::max<std::int64_t>(
          0, static_cast<std::int64_t>(std::floor(M - extra[d] + kEps)));
      capacity += caps[d];
    }
    if (capacity < L) continue;
    // Feasible; place layers one at a time on the least-loaded stage
    // below its cap, ties to the lowest index, so the secondary stages
    // stay as balanced as the cap allows.
    best.layers_per_stage.assign(p, 0);
    for (std::int64_t placed = 0; placed < L; ++placed) {
      std::int64_t pick = -1;
      double pick_load = 0.0;
      for (std::int64_t d = 0; d < p; ++d) {
        if (best.layers_per_stage[d] >= caps[d]) continue;
        const double load = best.layers_per_stage[d] + extra[d];
        if (pick < 0 || load < pick_load - kEps) {
          pick = d;
          pick_load = load;
        }
      }
      ++best.layers_per_stage[pick];
    }
    best.objective = 0.0;
    for (std::int64_t d = 0; d < p; ++d) {
      best.objective = std::max(best.objective, best.layers_per_stage[d] + extra[d]);
    }
    return best;
  }
  throw std::logic_error("redistribute_layers: no feasible assignment");
}

StageAssignment redistribute_layers(const ModelConfig& cfg) {
  cfg.validate();
  const double transformer = layer_cost(LayerKind::Transformer, cfg).flops;
  return redistribute_layers(cfg.L, cfg.p,
                             layer_cost(LayerKind::Output, cfg).flops / transformer,
                             layer_cost(LayerKind::Input, cfg).flops / transformer);
}

std::string serialize_program(const DeviceProgram& program) {
  std::ostringstream os;
  os << "vpipe-program 1\n";
  os << "method " << method_name(program.method) << "\n";
  const ModelConfig& c = program.cfg;
  os << "b " << c.b << "\ns " << c.s << "\nh " << c.h << "\nV " << c.V
     << "\nL " << c.L << "\np " << c.p << "\nn " << c.n << "\n";
  std::size_t total = 0;
  for (const auto& list : program.order) total += list.size();
  os << "passes " << total << "\n";
  for (const auto& list : program.order) {
    for (const Pass& pass : list) {
      os << pass.device << " " << pass.microbatch << " "
         << pass_kind_name(pass.kind) << " " << pass.chunk << "\n";
    }
  }
  return os.str();
}

DeviceProgram parse_program(std::istream& in) {
  auto fail = [](const std::string& what) -> void {
    throw std::runtime_error("parse_program: " + what);
  };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "vpipe-program" || version != 1) {
    fail("bad header");
  }
  DeviceProgram program;
  std::size_t total = 0;
  for (;;) {
    std::string key;
    if (!(in >> key)) fail("truncated header");
    if (key == "passes") {
      if (!(in >> total)) fail("bad pass count");
      break;
    }
    if (key == "method") {
      std::string value;
      in >> value;
      program.method = method_from_name(value);
      continue;
    }
    std::int64_t value = 0;
    if (!(in >> value)) fail("bad header value for " + key);
    if (key == "b") program.cfg.b = value;
    else if (key == "s") program.cfg.s = value;
    else if (key == "h") program.cfg.h = value;
    else if (key == "V") program.cfg.V = value;
    else if (key == "L") program.cfg.L = value;
    else if (key == "p") program.cfg.p = value;
    else if (key == "n") program.cfg.n = value;
    else fail("unknown header key " + key);
  }
  program.cfg.validate();
  program.order.resize(program.cfg.p);
  for (std::size_t line = 0; line < total; ++line) {
    int device = 0, microbatch = 0, chunk = 0;
    std::string kind;
    if (!(in >> device >> microbatch >> kind >> chunk)) fail("truncated pass list");
    if (device < 0 || device >= static_cast<int>(program.cfg.p)) {
      fail("pass device out of range");
    }
    program.order[device].push_back(
        Pass{pass_kind_from_name(kind), device, microbatch, chunk});
  }
  return program;
}

DeviceProgram parse_program(const std::string& text) {
  std::istringstream in(text);
  return parse_program(in);
}

}  // namespace vpipe
