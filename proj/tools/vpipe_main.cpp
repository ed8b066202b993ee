#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vpipe/cost_model.hpp"
#include "vpipe/schedule.hpp"
#include "vpipe/simulator.hpp"
#include "vpipe/svg.hpp"
#include "vpipe/vocab_math.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;

struct RunSpec {
  std::string method = "baseline";
  vpipe::ModelConfig cfg{};
  double unit_rate = 1.0;
  double collective_latency = -1.0;
  double act_bytes_mult = -1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string timeline_out;
  std::string svg_out;
  double ratio = -1.0;
  double input_ratio = 0.0;
  double fault_scale = 1.0;
  std::vector<std::int64_t> vocab_sweep;
};

// Write-then-rename so concurrent sweeps never interleave bytes.
void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
  } else {
    write_atomic(path, content);
  }
}

void add_model_flags(CLI::App* cmd, RunSpec* spec) {
  // TakeLast so values injected from a config file are overridden by
  // flags appearing later on the command line.
  const auto last = CLI::MultiOptionPolicy::TakeLast;
  cmd->add_option("--method", spec->method, "schedule method name")
      ->multi_option_policy(last);
  cmd->add_option("--devices", spec->cfg.p, "pipeline devices p")
      ->multi_option_policy(last);
  cmd->add_option("--layers", spec->cfg.L, "transformer layers L")
      ->multi_option_policy(last);
  cmd->add_option("--hidden", spec->cfg.h, "hidden size h")
      ->multi_option_policy(last);
  cmd->add_option("--seq-len", spec->cfg.s, "sequence length s")
      ->multi_option_policy(last);
  cmd->add_option("--vocab", spec->cfg.V, "vocabulary size V")
      ->multi_option_policy(last);
  cmd->add_option("--microbatches", spec->cfg.n, "microbatches n")
      ->multi_option_policy(last);
  cmd->add_option("--batch", spec->cfg.b, "microbatch size b")
      ->multi_option_policy(last);
  cmd->add_option("--seed", spec->seed, "random seed")
      ->multi_option_policy(last);
  cmd->add_option("--unit-rate", spec->unit_rate, "flops per time unit")
      ->multi_option_policy(last);
  cmd->add_option("--collective-latency", spec->collective_latency,
                  "collective duration (negative = 10% of F)")
      ->multi_option_policy(last);
  cmd->add_option("--act-bytes", spec->act_bytes_mult,
                  "activation bytes per microbatch (negative = default)")
      ->multi_option_policy(last);
  cmd->add_option("--out", spec->out, "output file (default stdout)")
      ->multi_option_policy(last);
  std::string ignored;
  cmd->add_option("--config", ignored,
                  "key=value config file with # comments; flags override")
      ->multi_option_policy(last);
}

// key=value lines with # comments; returns flag-style arguments.
std::vector<std::string> load_config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("cannot read config file " + path);
  std::vector<std::string> args;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("malformed config line: " + line);
    }
    args.push_back("--" + line.substr(0, eq) + "=" + line.substr(eq + 1));
  }
  return args;
}

int cmd_analyze(const RunSpec& spec) {
  const vpipe::Method method = vpipe::method_from_name(spec.method);
  const vpipe::BuildingBlock block = vpipe::build_block(method, spec.cfg);
  const vpipe::BlockAnalysis analysis = vpipe::analyze_block(block);
  std::ostringstream os;
  os << "method=" << spec.method << " devices=" << spec.cfg.p
     << " lifespan=" << analysis.lifespan << " interval=" << analysis.interval
     << " peak_microbatches=" << analysis.peak_microbatches << "\n";
  emit(spec.out, os.str());
  return kExitOk;
}

int cmd_simulate(const RunSpec& spec) {
  const vpipe::Method method = vpipe::method_from_name(spec.method);
  if (spec.cfg.n < spec.cfg.p) {
    throw CLI::ValidationError("insufficient microbatches (n < p)");
  }
  const vpipe::DeviceProgram program = vpipe::build_program(method, spec.cfg);
  const auto violations = vpipe::validate_dependencies(program);
  if (!violations.empty()) {
    throw std::runtime_error("program failed validation: " + violations.front());
  }
  vpipe::MachineOptions mopts;
  mopts.unit_rate = spec.unit_rate;
  mopts.collective_latency = spec.collective_latency;
  const vpipe::MachineModel machine = vpipe::build_machine(program, mopts);
  const vpipe::Timeline timeline = vpipe::simulate(program, machine);
  vpipe::MetricsOptions popts;
  popts.act_bytes_per_mb = spec.act_bytes_mult;
  popts.unit_rate = spec.unit_rate;
  const vpipe::Metrics metrics = vpipe::metrics(timeline, spec.cfg, popts);
  emit(spec.out, vpipe::metrics_csv(metrics));
  if (!spec.timeline_out.empty()) {
    write_atomic(spec.timeline_out, vpipe::timeline_records(timeline));
  }
  if (!spec.svg_out.empty()) {
    write_atomic(spec.svg_out, vpipe::render_timeline_svg(timeline));
  }
  return kExitOk;
}

int cmd_verify(const RunSpec& spec) {
  const std::int64_t n_tok = spec.cfg.b * spec.cfg.s;
  const int p = static_cast<int>(spec.cfg.p);
  const std::int64_t V = vpipe::pad_vocab_size(spec.cfg.V, spec.cfg.p);
  const vpipe::RandomInstance inst =
      vpipe::random_instance(n_tok, spec.cfg.h, V, spec.seed);
  const vpipe::OutputResult oracle =
      vpipe::oracle_output_layer(inst.batch, inst.W);

  struct Case {
    const char* name;
    vpipe::OutputResult result;
  };
  const std::vector<Case> cases = {
      {"naive", vpipe::run_naive(inst.batch, inst.W, p)},
      {"alg1", vpipe::run_alg1(inst.batch, inst.W, p, spec.fault_scale)},
      {"alg2", vpipe::run_alg2(inst.batch, inst.W, p, spec.fault_scale)},
  };

  bool ok = true;
  std::ostringstream os;
  for (const Case& c : cases) {
    const double err = std::max(
        {(c.result.softmax - oracle.softmax).cwiseAbs().maxCoeff(),
         (c.result.loss - oracle.loss).cwiseAbs().maxCoeff(),
         (c.result.grad_x - oracle.grad_x).cwiseAbs().maxCoeff(),
         (c.result.grad_w - oracle.grad_w).cwiseAbs().maxCoeff()});
    const bool pass = err <= 1e-10;
    ok = ok && pass;
    os << c.name << " max_abs_err=" << err << (pass ? " PASS" : " FAIL") << "\n";
  }

  // Input layer: sharded forward/backward vs. monolithic lookup.
  std::vector<std::int64_t> tokens(inst.batch.labels);
  const auto shards = vpipe::shard_weights(inst.W, p);
  vpipe::Matrix fwd = vpipe::Matrix::Zero(n_tok, spec.cfg.h);
  vpipe::Matrix bwd = vpipe::Matrix::Zero(V, spec.cfg.h);
  for (const auto& shard : shards) {
    fwd += vpipe::input_forward(tokens, shard);
    bwd.middleRows(shard.row_begin, shard.rows()) +=
        vpipe::input_backward(inst.batch.X, tokens, shard);
  }
  vpipe::Matrix fwd_ref(n_tok, spec.cfg.h);
  vpipe::Matrix bwd_ref = vpipe::Matrix::Zero(V, spec.cfg.h);
  for (std::int64_t i = 0; i < n_tok; ++i) {
    fwd_ref.row(i) = inst.W.row(tokens[i]);
    bwd_ref.row(tokens[i]) += inst.batch.X.row(i);
  }
  const double input_err = std::max((fwd - fwd_ref).cwiseAbs().maxCoeff(),
                                    (bwd - bwd_ref).cwiseAbs().maxCoeff());
  const bool input_pass = input_err <= 1e-10;
  ok = ok && input_pass;
  os << "input max_abs_err=" << input_err << (input_pass ? " PASS" : " FAIL")
     << "\n";

  emit(spec.out, os.str());
  return ok ? kExitOk : kExitVerifyFail;
}

int cmd_ratio(const RunSpec& spec) {
  std::vector<std::int64_t> sweep = spec.vocab_sweep;
  if (sweep.empty()) sweep.push_back(spec.cfg.V);
  std::ostringstream os;
  os << "V,compute_ratio,memory_ratio\n";
  char buf[128];
  for (std::int64_t v : sweep) {
    vpipe::ModelConfig cfg = spec.cfg;
    cfg.V = v;
    const vpipe::CostRatios ratios = vpipe::cost_ratios(cfg);
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n",
                  static_cast<long long>(v), ratios.compute, ratios.memory);
    os << buf;
  }
  emit(spec.out, os.str());
  return kExitOk;
}

int cmd_redistribute(const RunSpec& spec) {
  vpipe::StageAssignment assignment;
  if (spec.ratio >= 0.0) {
    assignment = vpipe::redistribute_layers(spec.cfg.L, spec.cfg.p, spec.ratio,
                                            spec.input_ratio);
  } else {
    assignment = vpipe::redistribute_layers(spec.cfg);
  }
  std::ostringstream os;
  os << "layers_per_stage=[";
  for (std::size_t d = 0; d < assignment.layers_per_stage.size(); ++d) {
    os << (d ? "," : "") << assignment.layers_per_stage[d];
  }
  os << "] objective=" << assignment.objective << "\n";
  emit(spec.out, os.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline-parallelism laboratory with vocabulary parallelism"};
  app.require_subcommand(1);
  RunSpec spec;
  spec.cfg = {1, 8, 16, 64, 8, 4, 16};

  CLI::App* analyze = app.add_subcommand("analyze", "building-block metrics");
  CLI::App* simulate = app.add_subcommand("simulate", "run the event simulator");
  CLI::App* verify = app.add_subcommand("verify", "numerical equivalence checks");
  CLI::App* ratio = app.add_subcommand("ratio", "vocabulary cost ratios");
  CLI::App* redistribute = app.add_subcommand("redistribute", "layer balancing");
  for (CLI::App* cmd : {analyze, simulate, verify, ratio, redistribute}) {
    add_model_flags(cmd, &spec);
  }
  simulate->add_option("--timeline", spec.timeline_out, "timeline records file");
  simulate->add_option("--svg", spec.svg_out, "SVG rendering file");
  verify->add_option("--fault-scale", spec.fault_scale,
                     "corrupt the softmax correction factor (test hook)");
  ratio->add_option("--vocab-sweep", spec.vocab_sweep,
                    "comma-separated vocabulary sizes")
      ->delimiter(',');
  redistribute->add_option("--ratio", spec.ratio,
                           "output/transformer cost ratio (negative = from model)");
  redistribute->add_option("--input-ratio", spec.input_ratio,
                           "input/transformer cost ratio");

  // verify defaults per the documented contract.
  if (argc > 1 && std::string(argv[1]) == "verify") {
    spec.cfg = {2, 4, 8, 32, 8, 4, 16};
  }

  try {
    // Inject config-file values before the user's flags so the TakeLast
    // policy lets explicit flags win.
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (!config_path.empty() && !args.empty()) {
      const std::vector<std::string> injected = load_config_args(config_path);
      args.insert(args.begin() + 1, injected.begin(), injected.end());
    }
    std::vector<const char*> cargv = {argv[0]};
    for (const std::string& a : args) cargv.push_back(a.c_str());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
    if (analyze->parsed()) return cmd_analyze(spec);
    if (simulate->parsed()) return cmd_simulate(spec);
    if (verify->parsed()) return cmd_verify(spec);
    if (ratio->parsed()) return cmd_ratio(spec);
    if (redistribute->parsed()) return cmd_redistribute(spec);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerifyFail;
  }
}
