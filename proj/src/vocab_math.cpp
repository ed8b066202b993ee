#include "vpipe/vocab_math.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace vpipe {

namespace {

void check_batch(const TokenBatch& batch, std::int64_t V) {
  if (batch.X.rows() < 1) throw std::invalid_argument("TokenBatch: empty X");
  if (static_cast<std::int64_t>(batch.labels.size()) != batch.X.rows()) {
    throw std::invalid_argument("TokenBatch: labels/X row mismatch");
  }
  for (std::int64_t g : batch.labels) {
    if (g < 0 || g >= V) throw std::invalid_argument("TokenBatch: label out of range");
  }
}

// Per-row scale factor sum'_i * e^{m'_i - m_i} / sum_i of Eq. 5.
Vector global_scale(const ShardState& state, const GlobalStats& stats) {
  return (state.sum_local.array() * (state.m_local - stats.m).array().exp() /
          stats.sum.array())
      .matrix();
}

}  // namespace

OutputResult oracle_output_layer(const TokenBatch& batch, const Matrix& W,
                                 const Vector* logit_shift) {
  const std::int64_t V = W.rows();
  check_batch(batch, V);
  if (batch.X.cols() != W.cols()) {
    throw std::invalid_argument("oracle_output_layer: X/W hidden dim mismatch");
  }
  const std::int64_t n_tok = batch.X.rows();

  Matrix Y = batch.X * W.transpose();
  if (logit_shift != nullptr) {
    Y.colwise() += *logit_shift;
  }

  const Vector m = Y.rowwise().maxCoeff();
  const Matrix e = (Y.colwise() - m).array().exp();
  const Vector sum = e.rowwise().sum();

  OutputResult out;
  out.softmax = e.array().colwise() / sum.array();
  out.loss.resize(n_tok);
  for (std::int64_t i = 0; i < n_tok; ++i) {
    out.loss(i) = m(i) + std::log(sum(i)) - Y(i, batch.labels[i]);
  }

  Matrix grad_y = out.softmax;  // softmax - G
  for (std::int64_t i = 0; i < n_tok; ++i) {
    grad_y(i, batch.labels[i]) -= 1.0;
  }
  out.grad_x = grad_y * W;
  out.grad_w = grad_y.transpose() * batch.X;
  return out;
}

std::vector<EmbeddingShard> shard_weights(const Matrix& W, int p) {
  if (p < 1) throw std::invalid_argument("shard_weights: p must be >= 1");
  const std::int64_t V = W.rows();
  if (V % p != 0) {
    throw std::invalid_argument("shard_weights: V not divisible by p");
  }
  const std::int64_t rows = V / p;
  std::vector<EmbeddingShard> shards(p);
  for (int k = 0; k < p; ++k) {
    shards[k].W = W.middleRows(k * rows, rows);
    shards[k].index = k;
    shards[k].row_begin = k * rows;
    shards[k].row_end = (k + 1) * rows;
  }
  return shards;
}

GlobalStats merge_max_sum(const std::vector<LocalStats>& parts) {
  if (parts.empty()) throw std::invalid_argument("merge_max_sum: empty input");
  const Eigen::Index n = parts.front().m.size();
  for (const auto& part : parts) {
    if (part.m.size() != n || part.sum.size() != n) {
      throw std::invalid_argument("merge_max_sum: length mismatch");
    }
  }
  GlobalStats stats;
  stats.m = parts.front().m;
  for (const auto& part : parts) {
    stats.m = stats.m.cwiseMax(part.m);
  }
  stats.sum = Vector::Zero(n);
  for (const auto& part : parts) {
    stats.sum.array() +=
        part.sum.array() * (part.m - stats.m).array().exp();
  }
  return stats;
}

OutputResult naive_partitioned_output(const TokenBatch& batch,
                                      const std::vector<EmbeddingShard>& shards) {
  if (shards.empty()) throw std::invalid_argument("naive: no shards");
  const std::int64_t V = shards.back().row_end;
  check_batch(batch, V);
  const std::int64_t n_tok = batch.X.rows();
  const int p = static_cast<int>(shards.size());

  // F1: local logits and local max, then the max all-reduce.
  std::vector<Matrix> Y(p);
  Vector m = Vector::Constant(n_tok, -std::numeric_limits<double>::infinity());
  for (int k = 0; k < p; ++k) {
    Y[k] = batch.X * shards[k].W.transpose();
    m = m.cwiseMax(Y[k].rowwise().maxCoeff());
  }

  // F2: local exp-sums against the global max, then the sum all-reduce.
  std::vector<Matrix> e(p);
  Vector sum = Vector::Zero(n_tok);
  for (int k = 0; k < p; ++k) {
    e[k] = (Y[k].colwise() - m).array().exp();
    sum += e[k].rowwise().sum();
  }

  // B: local softmax and gradients, then the grad_x reduce.
  OutputResult out;
  out.softmax.resize(n_tok, V);
  out.grad_x = Matrix::Zero(n_tok, batch.X.cols());
  out.grad_w.resize(V, batch.X.cols());
  out.loss.resize(n_tok);
  for (int k = 0; k < p; ++k) {
    Matrix grad_y = e[k].array().colwise() / sum.array();
    out.softmax.middleCols(shards[k].row_begin, shards[k].rows()) = grad_y;
    for (std::int64_t i = 0; i < n_tok; ++i) {
      const std::int64_t g = batch.labels[i];
      if (shards[k].owns(g)) {
        out.loss(i) = m(i) + std::log(sum(i)) -
                      Y[k](i, g - shards[k].row_begin);
        grad_y(i, g - shards[k].row_begin) -= 1.0;
      }
    }
    out.grad_x += grad_y * shards[k].W;
    out.grad_w.middleRows(shards[k].row_begin, shards[k].rows()) =
        grad_y.transpose() * batch.X;
  }
  return out;
}

ShardState alg1_pass_S(const Matrix& X, const EmbeddingShard& shard) {
  if (X.cols() != shard.W.cols()) {
    throw std::invalid_argument("alg1_pass_S: hidden dim mismatch");
  }
  ShardState state;
  state.Y = X * shard.W.transpose();
  state.m_local = state.Y.rowwise().maxCoeff();
  Matrix e = (state.Y.colwise() - state.m_local).array().exp();
  state.sum_local = e.rowwise().sum();
  state.softmax_local = e.array().colwise() / state.sum_local.array();
  return state;
}

ShardGrads alg1_pass_T(const ShardState& state, const GlobalStats& stats,
                       const TokenBatch& batch, const EmbeddingShard& shard) {
  if (state.m_local.size() != stats.m.size()) {
    throw std::invalid_argument("alg1_pass_T: state/stats length mismatch");
  }
  const Vector scale = global_scale(state, stats);
  Matrix grad_y = state.softmax_local.array().colwise() * scale.array();
  for (std::int64_t i = 0; i < grad_y.rows(); ++i) {
    const std::int64_t g = batch.labels[i];
    if (shard.owns(g)) grad_y(i, g - shard.row_begin) -= 1.0;
  }
  ShardGrads grads;
  grads.grad_x_partial = grad_y * shard.W;
  grads.grad_w = grad_y.transpose() * batch.X;
  return grads;
}

ShardState alg2_pass_S(const TokenBatch& batch, const EmbeddingShard& shard) {
  ShardState state = alg1_pass_S(batch.X, shard);
  state.A = state.softmax_local * shard.W;
  state.B = Matrix::Zero(batch.X.rows(), batch.X.cols());
  for (std::int64_t i = 0; i < batch.X.rows(); ++i) {
    const std::int64_t g = batch.labels[i];
    if (shard.owns(g)) state.B.row(i) = shard.W.row(g - shard.row_begin);
  }
  state.has_grad_terms = true;
  return state;
}

BarrierResult alg2_barrier_C1(const std::vector<ShardState>& states) {
  if (states.empty()) throw std::invalid_argument("alg2_barrier_C1: no states");
  std::vector<LocalStats> parts;
  parts.reserve(states.size());
  for (const auto& state : states) {
    if (!state.has_grad_terms) {
      throw std::invalid_argument("alg2_barrier_C1: A/B terms missing");
    }
    parts.push_back({state.m_local, state.sum_local});
  }
  BarrierResult result;
  result.stats = merge_max_sum(parts);
  result.grad_x = Matrix::Zero(states.front().A.rows(), states.front().A.cols());
  for (const auto& state : states) {
    const Vector scale = global_scale(state, result.stats);
    result.grad_x += (state.A.array().colwise() * scale.array()).matrix() - state.B;
  }
  return result;
}

Matrix alg2_pass_T(const ShardState& state, const GlobalStats& stats,
                   const TokenBatch& batch, const EmbeddingShard& shard) {
  if (state.m_local.size() != stats.m.size()) {
    throw std::invalid_argument("alg2_pass_T: state/stats length mismatch");
  }
  const Vector scale = global_scale(state, stats);
  Matrix grad_y = state.softmax_local.array().colwise() * scale.array();
  for (std::int64_t i = 0; i < grad_y.rows(); ++i) {
    const std::int64_t g = batch.labels[i];
    if (shard.owns(g)) grad_y(i, g - shard.row_begin) -= 1.0;
  }
  return grad_y.transpose() * batch.X;
}

Matrix input_forward(const std::vector<std::int64_t>& tokens,
                     const EmbeddingShard& shard) {
  Matrix out = Matrix::Zero(static_cast<std::int64_t>(tokens.size()), shard.W.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::int64_t tok = tokens[i];
    if (tok < 0) throw std::invalid_argument("input_forward: token out of range");
    if (shard.owns(tok)) out.row(static_cast<std::int64_t>(i)) = shard.W.row(tok - shard.row_begin);
  }
  return out;
}

Matrix input_backward(const Matrix& grad_out,
                      const std::vector<std::int64_t>& tokens,
                      const EmbeddingShard& shard) {
  if (grad_out.rows() != static_cast<std::int64_t>(tokens.size())) {
    throw std::invalid_argument("input_backward: grad/token length mismatch");
  }
  Matrix grad = Matrix::Zero(shard.rows(), grad_out.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::int64_t tok = tokens[i];
    if (tok < 0) throw std::invalid_argument("input_backward: token out of range");
    if (shard.owns(tok)) grad.row(tok - shard.row_begin) += grad_out.row(static_cast<std::int64_t>(i));
  }
  return grad;
}

RandomInstance random_instance(std::int64_t n_tok, std::int64_t h,
                               std::int64_t V, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  RandomInstance inst;
  inst.batch.X.resize(n_tok, h);
  for (std::int64_t i = 0; i < n_tok; ++i) {
    for (std::int64_t j = 0; j < h; ++j) inst.batch.X(i, j) = uniform(rng);
  }
  inst.W.resize(V, h);
  for (std::int64_t i = 0; i < V; ++i) {
    for (std::int64_t j = 0; j < h; ++j) inst.W(i, j) = uniform(rng);
  }
  std::uniform_int_distribution<std::int64_t> label(0, V - 1);
  inst.batch.labels.resize(n_tok);
  for (auto& g : inst.batch.labels) g = label(rng);
  return inst;
}

namespace {

// Shared assembly for the two optimized algorithms: full softmax and loss
// from the shard states plus global stats.
void assemble_forward(const std::vector<ShardState>& states,
                      const GlobalStats& stats, const TokenBatch& batch,
                      const std::vector<EmbeddingShard>& shards,
                      OutputResult* out) {
  const std::int64_t n_tok = batch.X.rows();
  out->softmax.resize(n_tok, shards.back().row_end);
  out->loss.resize(n_tok);
  for (std::size_t k = 0; k < states.size(); ++k) {
    const Vector scale = global_scale(states[k], stats);
    out->softmax.middleCols(shards[k].row_begin, shards[k].rows()) =
        states[k].softmax_local.array().colwise() * scale.array();
    for (std::int64_t i = 0; i < n_tok; ++i) {
      const std::int64_t g = batch.labels[i];
      if (shards[k].owns(g)) {
        out->loss(i) = stats.m(i) + std::log(stats.sum(i)) -
                       states[k].Y(i, g - shards[k].row_begin);
      }
    }
  }
}

}  // namespace

OutputResult run_naive(const TokenBatch& batch, const Matrix& W, int p) {
  return naive_partitioned_output(batch, shard_weights(W, p));
}

OutputResult run_alg1(const TokenBatch& batch, const Matrix& W, int p,
                      double fault_scale) {
  const auto shards = shard_weights(W, p);
  std::vector<ShardState> states;
  states.reserve(shards.size());
  std::vector<LocalStats> parts;
  for (const auto& shard : shards) {
    states.push_back(alg1_pass_S(batch.X, shard));
    parts.push_back({states.back().m_local, states.back().sum_local});
  }
  GlobalStats stats = merge_max_sum(parts);  // C1
  stats.sum *= fault_scale;

  OutputResult out;
  assemble_forward(states, stats, batch, shards, &out);
  out.grad_x = Matrix::Zero(batch.X.rows(), batch.X.cols());
  out.grad_w.resize(W.rows(), W.cols());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    ShardGrads grads = alg1_pass_T(states[k], stats, batch, shards[k]);
    out.grad_x += grads.grad_x_partial;  // C2
    out.grad_w.middleRows(shards[k].row_begin, shards[k].rows()) = grads.grad_w;
  }
  return out;
}

OutputResult run_alg2(const TokenBatch& batch, const Matrix& W, int p,
                      double fault_scale) {
  const auto shards = shard_weights(W, p);
  std::vector<ShardState> states;
  states.reserve(shards.size());
  for (const auto& shard : shards) {
    states.push_back(alg2_pass_S(batch, shard));
  }
  BarrierResult barrier = alg2_barrier_C1(states);
  if (fault_scale != 1.0) {
    GlobalStats faulty = barrier.stats;
    faulty.sum *= fault_scale;
    barrier.grad_x = Matrix::Zero(batch.X.rows(), batch.X.cols());
    for (const auto& state : states) {
      const Vector scale =
          (state.sum_local.array() * (state.m_local - faulty.m).array().exp() /
           faulty.sum.array())
              .matrix();
      barrier.grad_x +=
          (state.A.array().colwise() * scale.array()).matrix() - state.B;
    }
    barrier.stats = faulty;
  }

  OutputResult out;
  assemble_forward(states, barrier.stats, batch, shards, &out);
  out.grad_x = barrier.grad_x;
  out.grad_w.resize(W.rows(), W.cols());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    out.grad_w.middleRows(shards[k].row_begin, shards[k].rows()) =
        alg2_pass_T(states[k], barrier.stats, batch, shards[k]);
  }
  return out;
}

}  // namespace vpipe
