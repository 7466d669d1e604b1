#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/encoders.hpp"
#include "transrec/eval.hpp"
#include "transrec/user_model.hpp"

namespace transrec::pipeline {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

struct ModelConfig {
  encoders::ItemTowerConfig item;
  user_model::UserEncoderConfig user;
  std::vector<nn::FeatureSpec> user_features;
  /// Size of the next-item softmax head; 0 builds no head.
  std::size_t uep_vocab = 0;
  bool uep_relu = true;

  void validate() const;
};

/// Canonical text of the transferable architecture: widths, depths, heads,
/// vocabularies and conv stages. Image size, ID tables, feature tables,
/// softmax head and position count are excluded because adaptation to a new
/// domain legitimately changes them.
std::string architecture_signature(const ModelConfig& cfg);
/// 64-bit FNV-1a of architecture_signature.
std::uint64_t config_hash(const ModelConfig& cfg);

enum class ScoreMode {
  TwoTower,  // user summary . item embedding
  UepHead,   // pre-ReLU next-item head logits of the causal encoder
};

/// The two-tower recommender: item tower, user tower, optional features and
/// softmax head, all parameters in one store.
class TransRecModel : public eval::ScoreSource {
 public:
  explicit TransRecModel(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  const encoders::ItemTower& items() const noexcept { return items_; }
  const user_model::UserTower& users() const noexcept { return users_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  /// Discards all parameters and draws fresh ones from `seed`.
  void init(std::uint64_t seed);

  std::uint64_t config_hash() const override { return hash_; }
  void set_score_mode(ScoreMode mode) noexcept { mode_ = mode; }
  ScoreMode score_mode() const noexcept { return mode_; }

  /// Every catalog item embedded without gradients. Encoder failures are
  /// reported as UnencodableItem naming the item.
  Matrix item_embeddings(const corpus::Catalog& catalog, bool with_features = true) const;

  /// Item embedding rows for `items` on a training tape. When `content_cache`
  /// holds precomputed encoder outputs for the whole catalog they are used as
  /// constants instead of re-running the encoders.
  Var item_rows(Tape& tape, const corpus::Catalog& catalog, std::span<const int> items, bool freeze_encoders,
                const Matrix* content_cache, std::mt19937_64* dropout_rng);

  Matrix score(const corpus::Catalog& catalog, std::span<const eval::Query> queries) const override;

 private:
  ModelConfig cfg_;
  encoders::ItemTower items_;
  user_model::UserTower users_;
  ParameterStore params_;
  std::uint64_t hash_;
  ScoreMode mode_ = ScoreMode::TwoTower;
};

/// Gathers `table` rows for each sequence into a right-padded block;
/// `slot_of[item]` is the table row holding that item.
struct SequenceBlock {
  nn::SequenceLayout layout;
  std::vector<int> rows;  // table row per slot, -1 on padding
};
SequenceBlock sequence_block(const std::vector<std::span<const int>>& seqs, std::span<const int> slot_of);

}  // namespace transrec::pipeline
