#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "transrec/nn/tape.hpp"

namespace transrec::nn {

// Differentiable ops over Tape vars. Each op checks its shapes and throws
// transrec::Error(DimMismatch) on violation.

Var matmul(Var a, Var b);       // a: n x k, b: k x m
Var matmul_nt(Var a, Var b);    // a * b^T, a: n x k, b: m x k
Var add(Var a, Var b);
Var add_row(Var a, Var bias);   // bias: 1 x m broadcast over rows
Var scale(Var a, double s);
Var relu(Var a);
Var gelu(Var a);                // tanh approximation
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var sum(Var a);                 // 1 x 1

/// Row gather; index -1 yields a zero row. Gradient scatters back.
Var gather_rows(Var src, std::span<const int> indices);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Per-row dot product of equally shaped a and b, result n x 1.
Var dot_rows(Var a, Var b);
/// Inverted dropout; identity when p == 0 or the tape is in inference mode.
Var dropout(Var a, double p, std::mt19937_64& rng);

/// Layout of `batch` sequences of `seq` slots flattened into batch*seq rows.
/// key_mask[b*seq + t] != 0 marks a real slot; padding is never attended to.
struct SequenceLayout {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> key_mask;
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  /// When set, receives one (batch*heads*seq) x seq matrix of attention
  /// probabilities per call. Test-only inspection hook.
  std::vector<Matrix>* trace = nullptr;
};

/// Multi-head scaled dot-product self-attention over packed q|k|v columns.
/// qkv: (batch*seq) x 3d, result (batch*seq) x d.
Var self_attention(Var qkv, const SequenceLayout& layout, const AttentionOptions& options);

/// Attention probabilities of one self_attention call, without the tape.
Matrix attention_probabilities(const Matrix& qkv, const SequenceLayout& layout,
                               const AttentionOptions& options);

/// Softmax-weighted pooling: weights = softmax over the real slots of each
/// sequence of `scores` (batch*seq x 1); output row b = sum_t w_bt * h_bt.
Var attention_pool(Var h, Var scores, const SequenceLayout& layout);
/// Pooling weights as computed by attention_pool, batch*seq x 1 (0 on padding).
Matrix attention_pool_weights(const Matrix& scores, const SequenceLayout& layout);

/// Mean over consecutive groups of `group` rows: (n*group) x c -> n x c.
Var segment_mean(Var x, std::size_t group);

/// Channels-last image batch geometry: rows are (image, y, x), cols channels.
struct ImageGeometry {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_height(std::size_t h) const { return (h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width(std::size_t w) const { return (w + 2 * pad - kernel) / stride + 1; }
};

/// Unfolds patches: (count*H*W) x C -> (count*Ho*Wo) x (kernel*kernel*C), zero padded.
Var im2col(Var x, const ImageGeometry& geom, const ConvGeometry& conv);

}  // namespace transrec::nn
