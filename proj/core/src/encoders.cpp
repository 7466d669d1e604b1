#include "transrec/encoders.hpp"

#include <cmath>
#include <optional>

#include "transrec/error.hpp"

namespace transrec::encoders {

using corpus::ImageShape;
using corpus::Modality;

namespace {

const std::string kText = "item_encoder.text";
const std::string kVision = "item_encoder.vision";
const std::string kId = "item_encoder.id.table";

nn::TransformerConfig text_block(const TextEncoderConfig& c) {
  return {c.d_model, c.n_heads, c.ffn_mult, c.dropout};
}

std::string stage_name(std::size_t i) { return kVision + ".stage" + std::to_string(i); }

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::ConfigInvalid, field + ": " + why);
}

}  // namespace

void TextEncoderConfig::validate() const {
  if (vocab_size == 0) invalid("text.vocab_size", "must be positive");
  if (max_tokens == 0) invalid("text.max_tokens", "must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    invalid("text.n_heads", "d_model must be divisible by n_heads");
  }
  if (n_layers == 0) invalid("text.n_layers", "must be positive");
  if (ffn_mult == 0) invalid("text.ffn_mult", "must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) invalid("text.dropout", "must be in [0, 1)");
}

void VisionEncoderConfig::validate(std::size_t d_model) const {
  if (in_channels == 0 || image_h == 0 || image_w == 0) invalid("vision.image_shape", "must be positive");
  if (conv_stages.empty()) invalid("vision.conv_stages", "need at least one stage");
  std::size_t h = image_h, w = image_w;
  for (const ConvStage& s : conv_stages) {
    if (s.out_channels == 0 || s.stride == 0) invalid("vision.conv_stages", "channels and stride must be positive");
    h = (h - 1) / s.stride + 1;
    w = (w - 1) / s.stride + 1;
  }
  if (h < 1 || w < 1) invalid("vision.conv_stages", "spatial size collapses below 1x1");
  if (mlp_dims.empty() || mlp_dims.back() != d_model) invalid("vision.mlp_dims", "must end in d_model");
  for (std::size_t m : mlp_dims) {
    if (m == 0) invalid("vision.mlp_dims", "widths must be positive");
  }
}

void ItemTowerConfig::validate() const {
  if (d_model == 0) invalid("d_model", "must be positive");
  if (representation == ItemRepresentation::Id) {
    if (id_vocab == 0) invalid("id_vocab", "IDRec needs an ID table");
  } else {
    if (text_enabled) {
      text.validate();
      if (text.d_model != d_model) invalid("text.d_model", "must equal d_model");
    }
    if (vision_enabled) vision.validate(d_model);
  }
  for (const auto& f : item_features) {
    if (f.name.empty() || f.cardinality == 0 || f.dim == 0) invalid("item_features", "bad feature '" + f.name + "'");
  }
}

ItemTower::ItemTower(ItemTowerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void ItemTower::init(ParameterStore& store, ParameterStore::Rng& rng) const {
  const std::size_t d = cfg_.d_model;
  if (cfg_.representation == ItemRepresentation::Content) {
    if (cfg_.text_enabled) {
      const auto& t = cfg_.text;
      store.add(kText + ".token_emb", t.vocab_size, d, nn::Init::TruncatedNormal, rng);
      store.add(kText + ".pos_emb", t.max_tokens, d, nn::Init::TruncatedNormal, rng);
      nn::add_layer_norm(store, kText + ".emb_ln", d, rng);
      for (std::size_t l = 0; l < t.n_layers; ++l) {
        nn::add_transformer_block(store, kText + ".layer" + std::to_string(l), text_block(t), rng);
      }
      store.add(kText + ".pool.query", d, 1, nn::Init::TruncatedNormal, rng);
      nn::add_linear(store, kText + ".proj", d, d, rng);
    }
    if (cfg_.vision_enabled) {
      const auto& v = cfg_.vision;
      std::size_t in = v.in_channels;
      for (std::size_t i = 0; i < v.conv_stages.size(); ++i) {
        const ConvStage& s = v.conv_stages[i];
        const std::string p = stage_name(i);
        // He initialisation keeps activations alive through the ReLU stack.
        store.add(p + ".conv1.w", 9 * in, s.out_channels, nn::Init::TruncatedNormal, rng,
                  std::sqrt(2.0 / static_cast<double>(9 * in)));
        store.add(p + ".conv1.b", 1, s.out_channels, nn::Init::Zeros, rng);
        store.add(p + ".conv2.w", 9 * s.out_channels, s.out_channels, nn::Init::TruncatedNormal, rng,
                  std::sqrt(2.0 / static_cast<double>(9 * s.out_channels)));
        store.add(p + ".conv2.b", 1, s.out_channels, nn::Init::Zeros, rng);
        if (s.stride != 1 || in != s.out_channels) {
          store.add(p + ".shortcut.w", in, s.out_channels, nn::Init::TruncatedNormal, rng,
                    std::sqrt(2.0 / static_cast<double>(in)));
          store.add(p + ".shortcut.b", 1, s.out_channels, nn::Init::Zeros, rng);
        }
        in = s.out_channels;
      }
      for (std::size_t j = 0; j < v.mlp_dims.size(); ++j) {
        nn::add_linear(store, kVision + ".mlp" + std::to_string(j), in, v.mlp_dims[j], rng);
        in = v.mlp_dims[j];
      }
    }
  }
  if (cfg_.id_vocab > 0) store.add(kId, cfg_.id_vocab, d, nn::Init::TruncatedNormal, rng);
  nn::add_feature_concat(store, kItemFeaturePrefix, d, cfg_.item_features, rng);
}

Var ItemTower::encode_text(const nn::Binder& bind, const std::vector<std::span<const int>>& token_lists,
                           std::mt19937_64* dropout_rng) const {
  if (!cfg_.text_enabled || cfg_.representation != ItemRepresentation::Content) {
    throw Error(ErrorCode::UnconfiguredModality, "text encoder is not configured");
  }
  const auto& t = cfg_.text;
  const std::size_t n = token_lists.size(), T = t.max_tokens;
  nn::SequenceLayout layout{n, T, std::vector<std::uint8_t>(n * T, 0)};
  std::vector<int> tok(n * T, -1), pos(n * T, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& toks = token_lists[i];
    if (toks.empty()) throw Error(ErrorCode::EmptyTokenList, "text item " + std::to_string(i) + " has no tokens");
    if (toks.size() > T) {
      throw Error(ErrorCode::SequenceTooLong, "text item has " + std::to_string(toks.size()) + " tokens, max " +
                                                  std::to_string(T));
    }
    for (std::size_t k = 0; k < toks.size(); ++k) {
      if (toks[k] < 0 || static_cast<std::size_t>(toks[k]) >= t.vocab_size) {
        throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(toks[k]) + " outside vocabulary of " +
                                                    std::to_string(t.vocab_size));
      }
      tok[i * T + k] = toks[k];
      pos[i * T + k] = static_cast<int>(k);
      layout.key_mask[i * T + k] = 1;
    }
  }
  Var x = nn::add(nn::gather_rows(bind(kText + ".token_emb"), tok), nn::gather_rows(bind(kText + ".pos_emb"), pos));
  x = nn::layer_norm(bind, kText + ".emb_ln", x);
  nn::AttentionOptions attn{t.n_heads, false, nullptr};
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    x = nn::transformer_block(bind, kText + ".layer" + std::to_string(l), x, layout, text_block(t), attn, dropout_rng);
  }
  Var scores = nn::matmul(x, bind(kText + ".pool.query"));
  Var pooled = nn::attention_pool(x, scores, layout);
  return nn::linear(bind, kText + ".proj", pooled);
}

Var ItemTower::vision_features(const nn::Binder& bind, const std::vector<std::span<const std::uint8_t>>& images,
                               const ImageShape& shape) const {
  if (!cfg_.vision_enabled || cfg_.representation != ItemRepresentation::Content) {
    throw Error(ErrorCode::UnconfiguredModality, "vision encoder is not configured");
  }
  const auto& v = cfg_.vision;
  if (shape.channels != v.in_channels || shape.height != v.image_h || shape.width != v.image_w) {
    throw Error(ErrorCode::BadImageShape,
                "image " + std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
                    std::to_string(shape.width) + " does not match encoder " + std::to_string(v.in_channels) + "x" +
                    std::to_string(v.image_h) + "x" + std::to_string(v.image_w));
  }
  const std::size_t n = images.size(), hw = shape.height * shape.width;
  Matrix input(n * hw, shape.channels);
  for (std::size_t i = 0; i < n; ++i) {
    if (images[i].size() != shape.pixels()) {
      throw Error(ErrorCode::BadImageShape, "image " + std::to_string(i) + " has " +
                                                std::to_string(images[i].size()) + " pixels");
    }
    for (std::size_t c = 0; c < shape.channels; ++c) {
      for (std::size_t p = 0; p < hw; ++p) input(i * hw + p, c) = images[i][c * hw + p] / 255.0;
    }
  }
  Var x = bind.tape.constant(std::move(input));
  nn::ImageGeometry geom{n, shape.height, shape.width, shape.channels};
  for (std::size_t s = 0; s < v.conv_stages.size(); ++s) {
    const ConvStage& st = v.conv_stages[s];
    const std::string p = stage_name(s);
    const nn::ConvGeometry k3{3, st.stride, 1};
    nn::ImageGeometry out{n, k3.out_height(geom.height), k3.out_width(geom.width), st.out_channels};
    Var y = nn::relu(nn::linear(bind, p + ".conv1", nn::im2col(x, geom, k3)));
    y = nn::linear(bind, p + ".conv2", nn::im2col(y, out, nn::ConvGeometry{3, 1, 1}));
    Var shortcut = x;
    if (bind.store.contains(p + ".shortcut.w")) {
      shortcut = nn::linear(bind, p + ".shortcut", nn::im2col(x, geom, nn::ConvGeometry{1, st.stride, 0}));
    }
    x = nn::relu(nn::add(y, shortcut));
    geom = out;
  }
  return nn::segment_mean(x, geom.height * geom.width);
}

Var ItemTower::encode_image(const nn::Binder& bind, const std::vector<std::span<const std::uint8_t>>& images,
                            const ImageShape& shape) const {
  Var x = vision_features(bind, images, shape);
  const auto& dims = cfg_.vision.mlp_dims;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    x = nn::linear(bind, kVision + ".mlp" + std::to_string(j), x);
    if (j + 1 < dims.size()) x = nn::relu(x);
  }
  return x;
}

Var ItemTower::encode_id(const nn::Binder& bind, std::span<const int> indices) const {
  if (cfg_.id_vocab == 0) throw Error(ErrorCode::UnconfiguredModality, "ID encoder is not configured");
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= cfg_.id_vocab) {
      throw Error(ErrorCode::IndexOutOfRange, "item index " + std::to_string(idx) + " outside ID table of " +
                                                  std::to_string(cfg_.id_vocab));
    }
  }
  return nn::gather_rows(bind(kId), indices);
}

Var ItemTower::encode_content(Tape& tape, ParameterStore& store, const corpus::Catalog& catalog,
                              std::span<const int> items, bool frozen, std::mt19937_64* dropout_rng) const {
  const nn::Binder enc{tape, store, frozen};
  std::vector<int> text_pos, vision_pos, id_pos;
  std::vector<std::span<const int>> texts;
  std::vector<std::span<const std::uint8_t>> images;
  std::vector<int> ids;
  std::optional<ImageShape> shape;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] < 0 || static_cast<std::size_t>(items[i]) >= catalog.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "item index " + std::to_string(items[i]));
    }
    const corpus::Item& item = catalog.at(static_cast<std::size_t>(items[i]));
    Modality route = cfg_.representation == ItemRepresentation::Id ? Modality::Id : item.modality;
    switch (route) {
      case Modality::Text:
        if (!cfg_.text_enabled) throw Error(ErrorCode::UnconfiguredModality, "text item '" + item.item_id + "'");
        text_pos.push_back(static_cast<int>(i));
        texts.emplace_back(item.text_tokens);
        break;
      case Modality::Vision:
        if (!cfg_.vision_enabled) throw Error(ErrorCode::UnconfiguredModality, "vision item '" + item.item_id + "'");
        if (shape && !(*shape == item.image_shape)) {
          throw Error(ErrorCode::BadImageShape, "mixed image shapes in one catalog");
        }
        shape = item.image_shape;
        vision_pos.push_back(static_cast<int>(i));
        images.emplace_back(item.image);
        break;
      case Modality::Id:
        if (cfg_.id_vocab == 0) throw Error(ErrorCode::UnconfiguredModality, "id item '" + item.item_id + "'");
        id_pos.push_back(static_cast<int>(i));
        ids.push_back(items[i]);
        break;
    }
  }
  std::vector<Var> parts;
  std::vector<int> order;  // position in the concatenated block -> input slot
  if (!texts.empty()) {
    parts.push_back(encode_text(enc, texts, dropout_rng));
    order.insert(order.end(), text_pos.begin(), text_pos.end());
  }
  if (!images.empty()) {
    parts.push_back(encode_image(enc, images, *shape));
    order.insert(order.end(), vision_pos.begin(), vision_pos.end());
  }
  if (!ids.empty()) {
    parts.push_back(encode_id(enc, ids));
    order.insert(order.end(), id_pos.begin(), id_pos.end());
  }
  if (parts.empty()) return tape.constant(Matrix(0, cfg_.d_model));
  Var stacked = parts.size() == 1 ? parts.front() : nn::concat_rows(parts);
  std::vector<int> gather(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) gather[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
  return nn::gather_rows(stacked, gather);
}

Var ItemTower::apply_features(const nn::Binder& bind, const corpus::Catalog& catalog, Var content,
                              std::span<const int> items) const {
  if (cfg_.item_features.empty()) return content;
  std::vector<const corpus::FeatureMap*> rows(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) rows[i] = &catalog.at(static_cast<std::size_t>(items[i])).features;
  return nn::feature_concat(bind, kItemFeaturePrefix, content, cfg_.item_features, rows);
}

Var ItemTower::encode_items(Tape& tape, ParameterStore& store, const corpus::Catalog& catalog,
                            std::span<const int> items, bool frozen, std::mt19937_64* dropout_rng) const {
  Var content = encode_content(tape, store, catalog, items, frozen, dropout_rng);
  return apply_features(nn::Binder{tape, store, false}, catalog, content, items);
}

namespace {

std::vector<double> first_row(const Var& v) {
  auto r = v.value().row(0);
  return {r.begin(), r.end()};
}

}  // namespace

std::vector<double> encode_text(const ItemTower& tower, const ParameterStore& store, std::span<const int> tokens) {
  Tape tape(false);
  const nn::Binder bind{tape, const_cast<ParameterStore&>(store), true};
  return first_row(tower.encode_text(bind, {tokens}));
}

std::vector<double> encode_image(const ItemTower& tower, const ParameterStore& store,
                                 std::span<const std::uint8_t> pixels, const ImageShape& shape) {
  Tape tape(false);
  const nn::Binder bind{tape, const_cast<ParameterStore&>(store), true};
  return first_row(tower.encode_image(bind, {pixels}, shape));
}

std::vector<double> encode_id(const ItemTower& tower, const ParameterStore& store, int index) {
  Tape tape(false);
  const nn::Binder bind{tape, const_cast<ParameterStore&>(store), true};
  const int idx[] = {index};
  return first_row(tower.encode_id(bind, idx));
}

}  // namespace transrec::encoders
