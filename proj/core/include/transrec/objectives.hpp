#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transrec/nn/layers.hpp"

namespace transrec::objectives {

using nn::Matrix;
using nn::Tape;
using nn::Var;

inline constexpr const char* kUepHeadPrefix = "uep_head";

struct ContextTarget {
  std::vector<int> context;
  std::vector<int> target;
};

/// Last `l` items become the target, the rest the context. Throws
/// SequenceTooShort unless seq.size() >= l + 1.
ContextTarget split_context_target(std::span<const int> seq, std::size_t l);

/// `j` distinct items drawn uniformly from [0, catalog_size) minus the items
/// of `user_seq`. Throws CatalogExhausted when fewer than j are eligible.
std::vector<int> sample_negatives(std::span<const int> user_seq, std::size_t catalog_size, std::size_t j,
                                  std::mt19937_64& rng);

/// Sum over rows of -log softmax(logits)[label]. Throws LabelOutOfRange.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Next-item softmax head: `uep_head.w` (d x |V|) and `uep_head.b` (1 x |V|).
void add_uep_head(nn::ParameterStore& store, std::size_t d, std::size_t vocab, nn::ParameterStore::Rng& rng);
/// Head logits before the optional ReLU.
Var uep_logits(const nn::Binder& bind, Var hidden);
/// Summed cross-entropy of softmax(ReLU(hidden W + b)) against labels; the
/// ReLU is skipped when `relu` is false.
Var uep_loss(const nn::Binder& bind, Var hidden, std::span<const int> labels, bool relu = true);

/// Sum of -log sigmoid(pos) - log(1 - sigmoid(neg)), evaluated through
/// softplus so no intermediate overflows.
Var cpc_loss(Var pos_scores, Var neg_scores);

// Tape-free forms for reporting and tests.
double log_sigmoid(double x);
double cpc_loss_value(std::span<const double> pos, std::span<const double> neg);
double uep_loss_value(const Matrix& hidden, const Matrix& w, const Matrix& b, std::span<const int> labels,
                      bool relu = true);

}  // namespace transrec::objectives
