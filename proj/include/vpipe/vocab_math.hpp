#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vpipe/cost_model.hpp"

namespace vpipe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Last transformer layer output plus per-token labels.
struct TokenBatch {
  Matrix X;                         // [n_tok x h]
  std::vector<std::int64_t> labels; // [n_tok], each in [0, V)
};

/// Contiguous row slice of the embedding matrix owned by one device.
struct EmbeddingShard {
  Matrix W;                // [V/p x h], rows [row_begin, row_end) of the full W
  int index = 0;           // shard index k in [0, p)
  std::int64_t row_begin = 0;
  std::int64_t row_end = 0;

  std::int64_t rows() const { return row_end - row_begin; }
  bool owns(std::int64_t vocab_row) const {
    return vocab_row >= row_begin && vocab_row < row_end;
  }
};

/// One device's local output-layer intermediates.
struct ShardState {
  Matrix Y;             // local logits [n_tok x V/p]
  Vector m_local;       // local max per token
  Vector sum_local;     // local exp-sum per token
  Matrix softmax_local; // softmax over local logits only, rows sum to 1
  // Precomputed gradient terms (single-barrier algorithm only).
  Matrix A;             // softmax'(Y) * W_k, [n_tok x h]
  Matrix B;             // G_k * W_k, [n_tok x h]
  bool has_grad_terms = false;
};

struct GlobalStats {
  Vector m;    // global max per token
  Vector sum;  // global corrected exp-sum per token
};

/// Oracle-comparable bundle: everything the output layer produces.
struct OutputResult {
  Matrix softmax;  // [n_tok x V]
  Vector loss;     // per-token cross entropy
  Matrix grad_x;   // [n_tok x h]
  Matrix grad_w;   // [V x h]
};

struct LocalStats {
  Vector m;
  Vector sum;
};

struct ShardGrads {
  Matrix grad_x_partial;  // [n_tok x h], sums across shards to grad_x
  Matrix grad_w;          // [V/p x h], this shard's rows of grad_w
};

// Monolithic reference: Y = X W^T, safe softmax with per-row max
// subtraction, loss_i = m_i + log(sum_i) - Y_{i,g_i},
// grad_x = (softmax - G) W, grad_w = (softmax - G)^T X.
// logit_shift, when given, adds a per-row constant to Y (test hook for the
// shift-invariance property).
OutputResult oracle_output_layer(const TokenBatch& batch, const Matrix& W,
                                 const Vector* logit_shift = nullptr);

// Splits W into p contiguous row shards; requires V divisible by p.
std::vector<EmbeddingShard> shard_weights(const Matrix& W, int p);

// Online-softmax merge: m = max_k m_k, sum = sum_k sum_k * e^{m_k - m}.
GlobalStats merge_max_sum(const std::vector<LocalStats>& parts);

// The 3-barrier ordering: local max, global max, local exp-sums, global
// sum, local softmax and gradients, reduce of grad_x.
OutputResult naive_partitioned_output(const TokenBatch& batch,
                                      const std::vector<EmbeddingShard>& shards);

// Two-barrier algorithm, pass S: local logits, max, sum and softmax.
ShardState alg1_pass_S(const Matrix& X, const EmbeddingShard& shard);

// Two-barrier algorithm, pass T: rescale the local softmax with the global
// stats, then both gradient matmuls for this shard.
ShardGrads alg1_pass_T(const ShardState& state, const GlobalStats& stats,
                       const TokenBatch& batch, const EmbeddingShard& shard);

// Single-barrier algorithm, pass S: everything alg1_pass_S computes plus
// the precomputed A = softmax'(Y) W_k and B = G_k W_k terms.
ShardState alg2_pass_S(const TokenBatch& batch, const EmbeddingShard& shard);

struct BarrierResult {
  GlobalStats stats;
  Matrix grad_x;  // full [n_tok x h] input gradient
};

// Single-barrier C1: merge stats and finish grad_x from the precomputed
// A/B terms; only vector-width elementwise work beyond the merge.
BarrierResult alg2_barrier_C1(const std::vector<ShardState>& states);

// Single-barrier pass T: this shard's grad_w rows; pure, arbitrarily
// delayable.
Matrix alg2_pass_T(const ShardState& state, const GlobalStats& stats,
                   const TokenBatch& batch, const EmbeddingShard& shard);

// Sharded input layer: row i = W_k[tokens_i - row_begin] when owned,
// else zero. Summed over shards this equals the monolithic lookup.
Matrix input_forward(const std::vector<std::int64_t>& tokens,
                     const EmbeddingShard& shard);

// Scatter-add of grad_out rows into owned token rows.
Matrix input_backward(const Matrix& grad_out,
                      const std::vector<std::int64_t>& tokens,
                      const EmbeddingShard& shard);

// --- drivers used by tests and the verify CLI ---

struct RandomInstance {
  TokenBatch batch;
  Matrix W;
};

// Deterministic seeded instance; X and W entries uniform in [-1, 1].
RandomInstance random_instance(std::int64_t n_tok, std::int64_t h,
                               std::int64_t V, std::uint64_t seed);

// Full sharded pipelines assembled into an OutputResult. fault_scale != 1
// corrupts the online-softmax correction factor (verification test hook).
OutputResult run_naive(const TokenBatch& batch, const Matrix& W, int p);
OutputResult run_alg1(const TokenBatch& batch, const Matrix& W, int p,
                      double fault_scale = 1.0);
OutputResult run_alg2(const TokenBatch& batch, const Matrix& W, int p,
                      double fault_scale = 1.0);

}  // namespace vpipe
