#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/nn/layers.hpp"

namespace transrec::encoders {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

/// Namespace shared by every modality encoder. Frozen-feature adaptation
/// freezes exactly the tensors under this prefix.
inline constexpr const char* kItemEncoderPrefix = "item_encoder.";
inline constexpr const char* kItemFeaturePrefix = "item_features";

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t max_tokens = 8;
  std::size_t d_model = 32;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 2;
  double dropout = 0.0;

  void validate() const;
};

struct ConvStage {
  std::size_t out_channels = 8;
  std::size_t stride = 1;
};

struct VisionEncoderConfig {
  std::size_t in_channels = 3;
  std::size_t image_h = 8;
  std::size_t image_w = 8;
  std::vector<ConvStage> conv_stages{{8, 1}, {16, 2}};
  /// Hidden widths then the output width; the last entry must equal d_model.
  std::vector<std::size_t> mlp_dims{64, 32};

  void validate(std::size_t d_model) const;
};

enum class ItemRepresentation { Content, Id };

struct ItemTowerConfig {
  std::size_t d_model = 32;
  ItemRepresentation representation = ItemRepresentation::Content;
  bool text_enabled = true;
  TextEncoderConfig text;
  bool vision_enabled = true;
  VisionEncoderConfig vision;
  /// Rows of the ID table; required for IDRec and for catalogs with id items.
  std::size_t id_vocab = 0;
  std::vector<nn::FeatureSpec> item_features;

  void validate() const;
};

/// The item tower: modality-dispatched encoders emitting d_model vectors.
class ItemTower {
 public:
  explicit ItemTower(ItemTowerConfig cfg);

  const ItemTowerConfig& config() const noexcept { return cfg_; }
  void init(ParameterStore& store, ParameterStore::Rng& rng) const;

  /// Each token list must be non-empty, <= max_tokens, ids in range.
  Var encode_text(const nn::Binder& bind, const std::vector<std::span<const int>>& token_lists,
                  std::mt19937_64* dropout_rng = nullptr) const;
  /// Pooled residual-stack activations before the MLP, for inspection.
  Var vision_features(const nn::Binder& bind, const std::vector<std::span<const std::uint8_t>>& images,
                      const corpus::ImageShape& shape) const;
  Var encode_image(const nn::Binder& bind, const std::vector<std::span<const std::uint8_t>>& images,
                   const corpus::ImageShape& shape) const;
  Var encode_id(const nn::Binder& bind, std::span<const int> indices) const;

  /// Encodes catalog items in input order, dispatching by modality (or via
  /// the ID table for IDRec), then applies item features. `frozen` turns the
  /// modality encoders into constants; feature tables stay trainable.
  Var encode_items(Tape& tape, ParameterStore& store, const corpus::Catalog& catalog, std::span<const int> items,
                   bool frozen, std::mt19937_64* dropout_rng = nullptr) const;
  /// encode_items without the item-feature projection.
  Var encode_content(Tape& tape, ParameterStore& store, const corpus::Catalog& catalog, std::span<const int> items,
                     bool frozen, std::mt19937_64* dropout_rng = nullptr) const;
  /// Item-feature projection over `content` rows for `items`; identity without features.
  Var apply_features(const nn::Binder& bind, const corpus::Catalog& catalog, Var content,
                     std::span<const int> items) const;

 private:
  ItemTowerConfig cfg_;
};

// Single-item inference helpers (no gradient, read-only parameters).
std::vector<double> encode_text(const ItemTower& tower, const ParameterStore& store, std::span<const int> tokens);
std::vector<double> encode_image(const ItemTower& tower, const ParameterStore& store,
                                 std::span<const std::uint8_t> pixels, const corpus::ImageShape& shape);
std::vector<double> encode_id(const ItemTower& tower, const ParameterStore& store, int index);

}  // namespace transrec::encoders
