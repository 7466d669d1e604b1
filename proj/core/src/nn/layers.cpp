#include "transrec/nn/layers.hpp"

#include "transrec/error.hpp"

namespace transrec::nn {

void add_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                ParameterStore::Rng& rng) {
  store.add(prefix + ".w", in, out, Init::TruncatedNormal, rng);
  store.add(prefix + ".b", 1, out, Init::Zeros, rng);
}

Var linear(const Binder& bind, const std::string& prefix, Var x) {
  return add_row(matmul(x, bind(prefix + ".w")), bind(prefix + ".b"));
}

void add_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t d, ParameterStore::Rng& rng) {
  store.add(prefix + ".g", 1, d, Init::Ones, rng);
  store.add(prefix + ".b", 1, d, Init::Zeros, rng);
}

Var layer_norm(const Binder& bind, const std::string& prefix, Var x) {
  return layer_norm(x, bind(prefix + ".g"), bind(prefix + ".b"));
}

void add_transformer_block(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg,
                           ParameterStore::Rng& rng) {
  const std::size_t d = cfg.d_model;
  add_linear(store, prefix + ".attn.qkv", d, 3 * d, rng);
  add_linear(store, prefix + ".attn.out", d, d, rng);
  add_layer_norm(store, prefix + ".ln1", d, rng);
  add_linear(store, prefix + ".ffn.in", d, cfg.ffn_mult * d, rng);
  add_linear(store, prefix + ".ffn.out", cfg.ffn_mult * d, d, rng);
  add_layer_norm(store, prefix + ".ln2", d, rng);
}

Var transformer_block(const Binder& bind, const std::string& prefix, Var x, const SequenceLayout& layout,
                      const TransformerConfig& cfg, const AttentionOptions& attention,
                      std::mt19937_64* dropout_rng) {
  Var qkv = linear(bind, prefix + ".attn.qkv", x);
  Var a = linear(bind, prefix + ".attn.out", self_attention(qkv, layout, attention));
  if (dropout_rng) a = dropout(a, cfg.dropout, *dropout_rng);
  x = layer_norm(bind, prefix + ".ln1", add(x, a));
  Var f = linear(bind, prefix + ".ffn.out", gelu(linear(bind, prefix + ".ffn.in", x)));
  if (dropout_rng) f = dropout(f, cfg.dropout, *dropout_rng);
  return layer_norm(bind, prefix + ".ln2", add(x, f));
}

void add_feature_concat(ParameterStore& store, const std::string& prefix, std::size_t d,
                        const std::vector<FeatureSpec>& features, ParameterStore::Rng& rng) {
  if (features.empty()) return;
  std::size_t width = d;
  for (const FeatureSpec& f : features) {
    store.add(prefix + "." + f.name + ".table", f.cardinality, f.dim, Init::TruncatedNormal, rng);
    width += f.dim;
  }
  Matrix w(width, d);
  for (std::size_t i = 0; i < d; ++i) w(i, i) = 1.0;
  store.add(prefix + ".proj.w", std::move(w));
  store.add(prefix + ".proj.b", 1, d, Init::Zeros, rng);
}

Var feature_concat(const Binder& bind, const std::string& prefix, Var x, const std::vector<FeatureSpec>& features,
                   const std::vector<const std::map<std::string, int>*>& rows) {
  if (features.empty()) return x;
  if (rows.size() != x.rows()) {
    throw Error(ErrorCode::DimMismatch, prefix + ": feature rows do not match embedding rows");
  }
  std::vector<Var> parts{x};
  for (const FeatureSpec& f : features) {
    std::vector<int> ids(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto* fm = rows[r];
      if (!fm) throw Error(ErrorCode::UnknownFeature, prefix + ": feature '" + f.name + "' missing");
      auto it = fm->find(f.name);
      if (it == fm->end()) throw Error(ErrorCode::UnknownFeature, prefix + ": feature '" + f.name + "' missing");
      if (it->second < 0 || static_cast<std::size_t>(it->second) >= f.cardinality) {
        throw Error(ErrorCode::IndexOutOfRange, prefix + ": feature '" + f.name + "' id " +
                                                    std::to_string(it->second) + " outside [0, " +
                                                    std::to_string(f.cardinality) + ")");
      }
      ids[r] = it->second;
    }
    parts.push_back(gather_rows(bind(prefix + "." + f.name + ".table"), ids));
  }
  return linear(bind, prefix + ".proj", concat_cols(parts));
}

}  // namespace transrec::nn
