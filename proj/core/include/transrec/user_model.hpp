#pragma once

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transrec/nn/layers.hpp"

namespace transrec::user_model {

using nn::Matrix;
using nn::ParameterStore;
using nn::SequenceLayout;
using nn::Var;

inline constexpr const char* kUserEncoderPrefix = "user_encoder";
inline constexpr const char* kUserFeaturePrefix = "user_features";

struct UserEncoderConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 2;
  std::size_t max_positions = 16;
  /// Default mask; training stages pass their own (stage 1 causal, stage 2 not).
  bool causal = false;
  double dropout = 0.0;

  void validate() const;
};

/// Transformer over right-padded sequences of item embeddings. Parameters:
/// `user_encoder.pos` (position table), `user_encoder.input_ln`,
/// `user_encoder.layer{i}.*`, and optional `user_features.*`.
class UserTower {
 public:
  UserTower(UserEncoderConfig cfg, std::vector<nn::FeatureSpec> features = {});

  const UserEncoderConfig& config() const noexcept { return cfg_; }
  const std::vector<nn::FeatureSpec>& features() const noexcept { return features_; }
  void init(ParameterStore& store, ParameterStore::Rng& rng) const;

  /// items: (batch*seq) x d. Adds table row t to slot t of every real slot.
  /// Throws SequenceTooLong when seq exceeds max_positions.
  Var add_positions(const nn::Binder& bind, Var items, const SequenceLayout& layout) const;

  /// Input LayerNorm then the transformer stack; returns all hidden states.
  Var encode(const nn::Binder& bind, Var fused, const SequenceLayout& layout, bool causal,
             std::mt19937_64* dropout_rng = nullptr) const;

  /// Hidden state at the last real slot of each sequence: batch x d.
  Var summarize(Var hidden, const SequenceLayout& layout) const;

  /// projection(concat(summary, feature embeddings)); identity without features.
  Var apply_features(const nn::Binder& bind, Var summary,
                     const std::vector<const std::map<std::string, int>*>& rows) const;

  /// add_positions, encode, summarize and apply_features in one call.
  Var represent(const nn::Binder& bind, Var items, const SequenceLayout& layout, bool causal,
                const std::vector<const std::map<std::string, int>*>& feature_rows,
                std::mt19937_64* dropout_rng = nullptr) const;

 private:
  UserEncoderConfig cfg_;
  std::vector<nn::FeatureSpec> features_;
};

/// Number of real slots of sequence b (slots are a contiguous prefix).
std::size_t real_length(const SequenceLayout& layout, std::size_t b);

/// Right-padded layout for sequences of the given lengths.
SequenceLayout padded_layout(std::span<const std::size_t> lengths);

/// Dot product of `user` with every candidate row. Throws DimMismatch.
std::vector<double> relevance(std::span<const double> user, const Matrix& candidates);
/// users (n x d) against candidates (m x d): n x m scores.
Var relevance(Var users, Var candidates);

}  // namespace transrec::user_model
