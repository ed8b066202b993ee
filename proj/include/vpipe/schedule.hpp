#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vpipe/cost_model.hpp"

namespace vpipe {

enum class PassKind {
  F,           // forward of a transformer stage
  B,           // backward of a transformer stage
  S,           // output-layer pass 1
  T,           // output-layer pass 2
  CBroadcast,  // C0: broadcast of the last stage output
  CAllReduce,  // C1: max/sum all-reduce
  CReduce,     // C2: grad_x reduce
  InputF,      // input-layer forward shard
  InputB,      // input-layer backward shard
};

bool is_collective(PassKind kind);
const char* pass_kind_name(PassKind kind);
PassKind pass_kind_from_name(const std::string& name);

struct Pass {
  PassKind kind;
  int device = 0;
  int microbatch = 0;
  int chunk = 0;  // virtual stage index: 0 for 1F1B, {0,1} for V-Half

  friend bool operator==(const Pass&, const Pass&) = default;
};

enum class Method {
  Baseline1F1B,
  Redis,
  Vocab1,
  Vocab2,
  Interlaced,
  VHalfBase,
  VHalfVocab1,
};

const char* method_name(Method method);
Method method_from_name(const std::string& name);

// Does the method run sharded vocabulary passes (S/T/collectives/input)?
bool method_has_vocab_passes(Method method);
// Does the method schedule dedicated input-layer passes (InputF/InputB)?
bool method_has_input_passes(Method method);
// Communication barriers between S and the last-stage backward (0 when
// no vocabulary passes are scheduled).
int method_barriers(Method method);
int method_chunks(Method method);

/// Per-microbatch scheduling pattern; repeating it at `interval` grid
/// units yields the full schedule.
struct BlockEntry {
  PassKind kind;
  int device = 0;
  int chunk = 0;
  int offset = 0;  // grid units from the microbatch's first forward
  int sub = 0;     // intra-unit ordering
};

struct BuildingBlock {
  std::vector<BlockEntry> entries;
  int interval = 0;           // grid units per microbatch
  int lifespan = 0;           // first F to matching B on the critical device
  int chunks_per_device = 1;  // activation fraction held per chunk is 1/chunks
};

struct BlockAnalysis {
  int lifespan = 0;
  int interval = 0;
  int peak_microbatches = 0;
};

BuildingBlock build_block(Method method, const ModelConfig& cfg);

// peak = ceil(lifespan / (interval * chunks_per_device)). Throws on zero
// interval.
BlockAnalysis analyze_block(const BuildingBlock& block);

/// Per-device ordered pass lists; execution order for the simulator.
struct DeviceProgram {
  Method method = Method::Baseline1F1B;
  ModelConfig cfg;
  std::vector<std::vector<Pass>> order;  // [device] -> passes in order

  friend bool operator==(const DeviceProgram&, const DeviceProgram&) = default;
};

// Builds the full schedule by repeating the method's building block.
// Requires n >= p and, for vocabulary methods, V divisible by p after
// padding (callers pad cfg.V first; build_program pads internally).
DeviceProgram build_program(Method method, const ModelConfig& cfg);

// Empty iff the program satisfies every scheduling constraint: stage-order
// F/B chains, S after C0 after the last-stage forward, C1 after all S,
// and the barrier ordering of the method. Violations are data, not errors.
std::vector<std::string> validate_dependencies(const DeviceProgram& program);

/// Layer redistribution baseline: layer counts per stage.
struct StageAssignment {
  std::vector<int> layers_per_stage;
  double objective = 0.0;  // longest stage, in transformer-layer units
};

// Exact minimization of the longest stage given extra vocabulary cost
// pinned to the first (input) and last (output) stages, both expressed as
// multiples of one transformer layer. Ties place extra layers on the
// lowest-indexed stages.
StageAssignment redistribute_layers(std::int64_t L, std::int64_t p,
                                    double output_ratio, double input_ratio);
StageAssignment redistribute_layers(const ModelConfig& cfg);

// --- dependency graph, shared by the validator and the simulator ---

struct PassGraph {
  struct Node {
    Pass pass;  // for collectives, device is -1 and chunk 0
    bool collective = false;
    // (device, index in that device's order); one entry per participation.
    std::vector<std::pair<int, int>> locations;
  };
  std::vector<Node> nodes;
  std::vector<std::vector<int>> preds;    // semantic dependencies
  std::vector<std::vector<int>> node_at;  // [device][list index] -> node id
};

// Throws std::invalid_argument when the program is structurally malformed
// (missing passes, duplicates). Violating *order* is not an error here;
// the validator reports it.
PassGraph build_pass_graph(const DeviceProgram& program);

// Number of stages and stage -> (device, chunk) placement.
int stage_count(Method method, int p);
std::pair<int, int> stage_placement(Method method, int p, int stage);

// --- text serialization (line oriented, lossless round trip) ---

std::string serialize_program(const DeviceProgram& program);
DeviceProgram parse_program(std::istream& in);
DeviceProgram parse_program(const std::string& text);

}  // namespace vpipe
