#include "transrec/pipeline/model.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "transrec/error.hpp"
#include "transrec/objectives.hpp"

namespace transrec::pipeline {

void ModelConfig::validate() const {
  item.validate();
  user.validate();
  if (item.d_model != user.d_model) {
    throw Error(ErrorCode::ConfigInvalid, "user.d_model: must equal item d_model (" + std::to_string(item.d_model) +
                                              ")");
  }
  for (const auto& f : user_features) {
    if (f.name.empty() || f.cardinality == 0 || f.dim == 0) {
      throw Error(ErrorCode::ConfigInvalid, "user_features: bad feature '" + f.name + "'");
    }
  }
}

std::string architecture_signature(const ModelConfig& cfg) {
  std::ostringstream s;
  const auto& it = cfg.item;
  s << "d=" << it.d_model << ";repr=" << (it.representation == encoders::ItemRepresentation::Id ? "id" : "content");
  if (it.representation == encoders::ItemRepresentation::Content) {
    if (it.text_enabled) {
      const auto& t = it.text;
      s << ";text=" << t.vocab_size << "," << t.max_tokens << "," << t.n_layers << "," << t.n_heads << ","
        << t.ffn_mult;
    }
    if (it.vision_enabled) {
      const auto& v = it.vision;
      s << ";vision=" << v.in_channels << ":";
      for (const auto& st : v.conv_stages) s << st.out_channels << "/" << st.stride << ",";
      s << "mlp";
      for (std::size_t m : v.mlp_dims) s << "," << m;
    }
  }
  const auto& u = cfg.user;
  s << ";user=" << u.n_layers << "," << u.n_heads << "," << u.ffn_mult;
  return s.str();
}

std::uint64_t config_hash(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : architecture_signature(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

TransRecModel::TransRecModel(ModelConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      items_(cfg_.item),
      users_(cfg_.user, cfg_.user_features),
      hash_(pipeline::config_hash(cfg_)) {}

void TransRecModel::init(std::uint64_t seed) {
  params_ = ParameterStore();
  ParameterStore::Rng rng(seed);
  items_.init(params_, rng);
  users_.init(params_, rng);
  if (cfg_.uep_vocab > 0) objectives::add_uep_head(params_, cfg_.item.d_model, cfg_.uep_vocab, rng);
}

Matrix TransRecModel::item_embeddings(const corpus::Catalog& catalog, bool with_features) const {
  constexpr std::size_t kChunk = 256;
  Matrix out(catalog.size(), cfg_.item.d_model);
  auto& store = const_cast<ParameterStore&>(params_);
  for (std::size_t lo = 0; lo < catalog.size(); lo += kChunk) {
    const std::size_t hi = std::min(catalog.size(), lo + kChunk);
    std::vector<int> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), static_cast<int>(lo));
    Tape tape(false);
    Var e;
    try {
      e = with_features ? items_.encode_items(tape, store, catalog, idx, true)
                        : items_.encode_content(tape, store, catalog, idx, true);
    } catch (const Error& err) {
      switch (err.code()) {
        case ErrorCode::UnconfiguredModality:
        case ErrorCode::BadImageShape:
        case ErrorCode::EmptyTokenList:
        case ErrorCode::TokenOutOfRange:
        case ErrorCode::SequenceTooLong:
        case ErrorCode::IndexOutOfRange:
          throw Error(ErrorCode::UnencodableItem, err.what());
        default:
          throw;
      }
    }
    std::copy(e.value().values().begin(), e.value().values().end(), out.data() + lo * out.cols());
  }
  return out;
}

Var TransRecModel::item_rows(Tape& tape, const corpus::Catalog& catalog, std::span<const int> items,
                             bool freeze_encoders, const Matrix* content_cache, std::mt19937_64* dropout_rng) {
  if (content_cache) {
    Var content = nn::gather_rows(tape.constant(*content_cache), items);
    return items_.apply_features(nn::Binder{tape, params_, false}, catalog, content, items);
  }
  return items_.encode_items(tape, params_, catalog, items, freeze_encoders, dropout_rng);
}

Matrix TransRecModel::score(const corpus::Catalog& catalog, std::span<const eval::Query> queries) const {
  const Matrix table = item_embeddings(catalog);
  Tape tape(false);
  const nn::Binder bind{tape, const_cast<ParameterStore&>(params_), true};
  std::vector<std::span<const int>> seqs;
  std::vector<const corpus::FeatureMap*> features;
  for (const eval::Query& q : queries) {
    seqs.emplace_back(*q.context);
    features.push_back(q.user_features);
  }
  std::vector<int> identity(catalog.size());
  std::iota(identity.begin(), identity.end(), 0);
  const SequenceBlock block = sequence_block(seqs, identity);
  Var items = tape.constant(table);
  Var x = nn::gather_rows(items, block.rows);
  if (mode_ == ScoreMode::UepHead) {
    if (cfg_.uep_vocab != catalog.size() || !params_.contains(std::string(objectives::kUepHeadPrefix) + ".w")) {
      throw Error(ErrorCode::ShapeMismatch, "next-item head covers " + std::to_string(cfg_.uep_vocab) +
                                                " items, catalog has " + std::to_string(catalog.size()));
    }
    Var h = users_.encode(bind, users_.add_positions(bind, x, block.layout), block.layout, true);
    return objectives::uep_logits(bind, users_.summarize(h, block.layout)).value();
  }
  Var u = users_.represent(bind, x, block.layout, false, features);
  return user_model::relevance(u, items).value();
}

SequenceBlock sequence_block(const std::vector<std::span<const int>>& seqs, std::span<const int> slot_of) {
  std::vector<std::size_t> lengths;
  lengths.reserve(seqs.size());
  for (const auto& s : seqs) lengths.push_back(s.size());
  SequenceBlock block{user_model::padded_layout(lengths), {}};
  const std::size_t S = block.layout.seq;
  block.rows.assign(seqs.size() * S, -1);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) {
      block.rows[b * S + t] = slot_of[static_cast<std::size_t>(seqs[b][t])];
    }
  }
  return block;
}

}  // namespace transrec::pipeline
