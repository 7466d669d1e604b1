#include "transrec/user_model.hpp"

#include <algorithm>

#include "transrec/error.hpp"

namespace transrec::user_model {

namespace {

const std::string kPos = std::string(kUserEncoderPrefix) + ".pos";
const std::string kInputLn = std::string(kUserEncoderPrefix) + ".input_ln";

std::string layer_name(std::size_t i) { return std::string(kUserEncoderPrefix) + ".layer" + std::to_string(i); }

nn::TransformerConfig block(const UserEncoderConfig& c) { return {c.d_model, c.n_heads, c.ffn_mult, c.dropout}; }

}  // namespace

void UserEncoderConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::ConfigInvalid, "user." + field + ": " + why);
  };
  if (d_model == 0) bad("d_model", "must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) bad("n_heads", "d_model must be divisible by n_heads");
  if (n_layers == 0) bad("n_layers", "must be positive");
  if (ffn_mult == 0) bad("ffn_mult", "must be positive");
  if (max_positions == 0) bad("max_positions", "must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout", "must be in [0, 1)");
}

UserTower::UserTower(UserEncoderConfig cfg, std::vector<nn::FeatureSpec> features)
    : cfg_(cfg), features_(std::move(features)) {
  cfg_.validate();
}

void UserTower::init(ParameterStore& store, ParameterStore::Rng& rng) const {
  store.add(kPos, cfg_.max_positions, cfg_.d_model, nn::Init::TruncatedNormal, rng);
  nn::add_layer_norm(store, kInputLn, cfg_.d_model, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) nn::add_transformer_block(store, layer_name(l), block(cfg_), rng);
  nn::add_feature_concat(store, kUserFeaturePrefix, cfg_.d_model, features_, rng);
}

Var UserTower::add_positions(const nn::Binder& bind, Var items, const SequenceLayout& layout) const {
  if (layout.seq > cfg_.max_positions) {
    throw Error(ErrorCode::SequenceTooLong, "sequence of " + std::to_string(layout.seq) + " slots exceeds " +
                                                std::to_string(cfg_.max_positions) + " positions");
  }
  if (layout.key_mask.size() != layout.batch * layout.seq) {
    throw Error(ErrorCode::MaskShapeMismatch, "mask has " + std::to_string(layout.key_mask.size()) + " entries");
  }
  std::vector<int> pos(layout.batch * layout.seq, -1);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if (layout.key_mask[i]) pos[i] = static_cast<int>(i % layout.seq);
  }
  return nn::add(items, nn::gather_rows(bind(kPos), pos));
}

Var UserTower::encode(const nn::Binder& bind, Var fused, const SequenceLayout& layout, bool causal,
                      std::mt19937_64* dropout_rng) const {
  Var x = nn::layer_norm(bind, kInputLn, fused);
  if (dropout_rng) x = nn::dropout(x, cfg_.dropout, *dropout_rng);
  const nn::AttentionOptions attn{cfg_.n_heads, causal, nullptr};
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    x = nn::transformer_block(bind, layer_name(l), x, layout, block(cfg_), attn, dropout_rng);
  }
  return x;
}

Var UserTower::summarize(Var hidden, const SequenceLayout& layout) const {
  std::vector<int> last(layout.batch, -1);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const std::size_t n = real_length(layout, b);
    if (n > 0) last[b] = static_cast<int>(b * layout.seq + n - 1);
  }
  return nn::gather_rows(hidden, last);
}

Var UserTower::apply_features(const nn::Binder& bind, Var summary,
                              const std::vector<const std::map<std::string, int>*>& rows) const {
  return nn::feature_concat(bind, kUserFeaturePrefix, summary, features_, rows);
}

Var UserTower::represent(const nn::Binder& bind, Var items, const SequenceLayout& layout, bool causal,
                         const std::vector<const std::map<std::string, int>*>& feature_rows,
                         std::mt19937_64* dropout_rng) const {
  Var h = encode(bind, add_positions(bind, items, layout), layout, causal, dropout_rng);
  return apply_features(bind, summarize(h, layout), feature_rows);
}

std::size_t real_length(const SequenceLayout& layout, std::size_t b) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < layout.seq; ++t) n += layout.key_mask[b * layout.seq + t] ? 1 : 0;
  return n;
}

SequenceLayout padded_layout(std::span<const std::size_t> lengths) {
  SequenceLayout layout;
  layout.batch = lengths.size();
  layout.seq = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  layout.key_mask.assign(layout.batch * layout.seq, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    std::fill_n(layout.key_mask.begin() + static_cast<std::ptrdiff_t>(b * layout.seq), lengths[b], 1);
  }
  return layout;
}

std::vector<double> relevance(std::span<const double> user, const Matrix& candidates) {
  if (user.size() != candidates.cols()) {
    throw Error(ErrorCode::DimMismatch, "user vector has " + std::to_string(user.size()) +
                                            " dims, candidates have " + std::to_string(candidates.cols()));
  }
  std::vector<double> out(candidates.rows(), 0.0);
  for (std::size_t j = 0; j < candidates.rows(); ++j) {
    const double* c = candidates.data() + j * candidates.cols();
    double s = 0.0;
    for (std::size_t k = 0; k < user.size(); ++k) s += user[k] * c[k];
    out[j] = s;
  }
  return out;
}

Var relevance(Var users, Var candidates) { return nn::matmul_nt(users, candidates); }

}  // namespace transrec::user_model
