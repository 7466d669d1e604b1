#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/eval.hpp"
#include "transrec/pipeline.hpp"
#include "transrec/synthetic.hpp"

namespace transrec::cli {

/// Flat `section.key -> value` configuration with a fixed schema. Every key
/// has a default; files and overrides may only set known keys.
class RunConfig {
 public:
  RunConfig();

  /// Merges an INI file. Throws ConfigInvalid for unknown sections or keys.
  void load_file(const std::filesystem::path& path);
  /// Sets one `section.key`. Throws ConfigInvalid for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Parses `section.key=value`.
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Every key with its value, grouped by section, in INI form. Loading
  /// this text reproduces the configuration exactly.
  std::string resolved_text() const;

  /// Converts every section once so bad values fail before any compute.
  void validate() const;

  corpus::SyntheticWorldConfig synthetic() const;
  /// `section` is pretrain, train or adapt.
  pipeline::TrainConfig train(const std::string& section) const;
  eval::EvalOptions eval_options() const;
  /// Model for `dataset`: image shape and ID table size resolve against its
  /// catalog when configured as auto. `uep_vocab` sizes the softmax head.
  pipeline::ModelConfig model_for(const corpus::Dataset& dataset, std::size_t uep_vocab) const;
  std::vector<std::string> list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// "3x8x8" -> {3, 8, 8}. Throws ConfigInvalid naming `field`.
corpus::ImageShape parse_image_shape(const std::string& text, const std::string& field);
/// "name:cardinality:dim,..." -> feature specs.
std::vector<nn::FeatureSpec> parse_features(const std::string& text, const std::string& field);

/// One feature per name seen in `rows`, cardinality max id + 1.
std::vector<nn::FeatureSpec> infer_features(const std::vector<const corpus::FeatureMap*>& rows, std::size_t dim);

}  // namespace transrec::cli
