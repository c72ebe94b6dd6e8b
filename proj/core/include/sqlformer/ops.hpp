#pragma once

#include <span>

#include "sqlformer/common.hpp"
#include "sqlformer/tensor.hpp"

namespace sqlformer {

/// Additive-mask surrogate for -inf. Large enough that exp underflows to
/// exactly zero after max-subtraction, small enough to avoid inf - inf NaNs.
constexpr float kMaskNegInf = -1e9f;

Tensor add(const Tensor& a, const Tensor& b);

/// x: [... x n], bias: [n]; bias broadcast over all leading dimensions.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float s);

/// a: [m x k], b: [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched matmul. a: [B x m x k], b: [B x k x n] -> [B x m x n].
Tensor bmm(const Tensor& a, const Tensor& b);

/// 2-D transpose.
Tensor transpose(const Tensor& a);

/// Swap the last two axes of a rank-3 tensor.
Tensor transpose_last2(const Tensor& a);

/// [T x (h*dk)] -> [h x T x dk].
Tensor split_heads(const Tensor& x, int n_heads);

/// [h x T x dk] -> [T x (h*dk)]. Inverse of split_heads.
Tensor merge_heads(const Tensor& x);

/// Softmax along `axis` (negative axes count from the end), computed with
/// max-subtraction. Rows along the axis sum to 1 within 1e-6.
Tensor softmax(const Tensor& x, int axis = -1);

/// softmax(scores + mask) along the last axis. Mask entries are 0 (keep) or
/// kMaskNegInf (drop); masked positions end up with probability exactly 0.
/// The mask must either match scores' shape or, for rank-3 scores, match the
/// trailing two dims and broadcast over the batch axis. A fully masked row
/// throws NumericsError.
Tensor masked_softmax(const Tensor& scores, const Tensor& mask);

/// Mean negative log-likelihood of `labels` under rows of `logits` [T x V],
/// skipping positions whose label equals ignore_index. Ignored positions
/// contribute exactly zero loss and zero gradient. ignore_index must lie
/// outside [0, V). Throws NumericsError when every position is ignored.
Tensor cross_entropy_masked(const Tensor& logits, std::span<const int> labels, int ignore_index);

/// Row-wise layer normalization over the last axis; gain/bias are [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor relu(const Tensor& x);

/// tanh-approximation GELU.
Tensor gelu(const Tensor& x);

/// table: [V x d], ids in [0, V) -> [len(ids) x d].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

/// matmul(x, w) + bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Inverted dropout; keep probability 1-rate, kept values scaled by
/// 1/(1-rate). rate == 0 returns x unchanged. Training-only: inference
/// paths simply never call it.
Tensor dropout(const Tensor& x, float rate, Rng& rng);

/// Sum of all elements as a scalar tensor.
Tensor sum(const Tensor& x);

/// Tape-free log-softmax of one row, for decoding-time scoring.
void log_softmax_row(std::span<const float> logits, std::span<float> out);

}  // namespace sqlformer
