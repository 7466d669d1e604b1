#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "transrec/nn/ops.hpp"
#include "transrec/nn/parameters.hpp"

namespace transrec::nn {

/// Binds parameters of a store onto a tape. `frozen` turns every bound
/// tensor into a constant for this forward pass.
struct Binder {
  Tape& tape;
  ParameterStore& store;
  bool frozen = false;

  Var operator()(const std::string& name) const { return tape.parameter(store.at(name), frozen); }
};

/// `prefix.w` (in x out, truncated normal) and `prefix.b` (1 x out, zeros).
void add_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                ParameterStore::Rng& rng);
Var linear(const Binder& bind, const std::string& prefix, Var x);

/// `prefix.g` (ones) and `prefix.b` (zeros).
void add_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t d, ParameterStore::Rng& rng);
Var layer_norm(const Binder& bind, const std::string& prefix, Var x);

struct TransformerConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 2;
  double dropout = 0.0;
};

/// Post-LN encoder block: x = LN(x + Attn(x)); x = LN(x + FFN(x)).
void add_transformer_block(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg,
                           ParameterStore::Rng& rng);
Var transformer_block(const Binder& bind, const std::string& prefix, Var x, const SequenceLayout& layout,
                      const TransformerConfig& cfg, const AttentionOptions& attention,
                      std::mt19937_64* dropout_rng);

/// One categorical input: `cardinality` ids embedded in `dim` columns.
struct FeatureSpec {
  std::string name;
  std::size_t cardinality = 0;
  std::size_t dim = 4;
};

/// Tables `prefix.<name>.table` plus `prefix.proj` mapping
/// (d + sum dims) -> d. The projection starts as identity on the embedding
/// block and zero on the feature block, so a freshly attached feature set is
/// a pass-through until trained.
void add_feature_concat(ParameterStore& store, const std::string& prefix, std::size_t d,
                        const std::vector<FeatureSpec>& features, ParameterStore::Rng& rng);

/// projection(concat(x, feature embeddings)); identity when `features` is
/// empty. `rows[i]` gives the feature ids of row i of x. Throws UnknownFeature
/// when a configured feature is absent and IndexOutOfRange for bad ids.
Var feature_concat(const Binder& bind, const std::string& prefix, Var x, const std::vector<FeatureSpec>& features,
                   const std::vector<const std::map<std::string, int>*>& rows);

}  // namespace transrec::nn
