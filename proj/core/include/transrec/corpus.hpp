#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace transrec::corpus {

enum class Modality { Text, Vision, Id };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const { return channels * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Categorical features: name -> small integer id.
using FeatureMap = std::map<std::string, int>;

struct Item {
  std::string item_id;
  Modality modality = Modality::Id;
  std::vector<int> text_tokens;        // Text only
  std::vector<std::uint8_t> image;     // Vision only, CHW layout
  ImageShape image_shape;              // Vision only
  FeatureMap features;
};

/// Declared bounds used to validate catalog records.
struct CatalogLimits {
  std::optional<std::size_t> vocab_size;
  /// When unset, the first vision item fixes the shape for the rest.
  std::optional<ImageShape> image_shape;
};

/// Items in file order. The position of an item is its catalog index; ranking
/// ties are broken by this index.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<Item> items);

  std::size_t size() const noexcept { return items_.size(); }
  const Item& at(std::size_t index) const { return items_.at(index); }
  const std::vector<Item>& items() const noexcept { return items_; }
  std::optional<std::size_t> index_of(const std::string& item_id) const;
  /// Shape shared by all vision items, if any.
  std::optional<ImageShape> image_shape() const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct InteractionSequence {
  std::string user_id;
  std::vector<int> items;  // catalog indices, interaction-time order
  FeatureMap user_features;
};

struct Dataset {
  std::string domain_name;
  std::shared_ptr<const Catalog> catalog;
  std::vector<InteractionSequence> users;
  std::size_t max_seq_len = 25;
  std::size_t dropped_users = 0;
};

/// Minimum sequence length for leave-one-out (train, valid and test non-empty).
inline constexpr std::size_t kMinSequenceLength = 3;

Item parse_item_record(const std::string& line, std::size_t line_no, const CatalogLimits& limits);
std::string item_record(const Item& item);

Catalog load_catalog(const std::filesystem::path& path, const CatalogLimits& limits = {});

/// Keeps the most recent `max_seq_len` interactions of every user and drops
/// users below kMinSequenceLength (counted in `dropped_users`).
Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const Catalog> catalog,
                          std::size_t max_seq_len, std::string domain_name);

/// Builds a dataset from in-memory sequences with the same truncation and
/// dropping rules as load_interactions.
Dataset make_dataset(std::string domain_name, std::shared_ptr<const Catalog> catalog,
                     std::vector<InteractionSequence> users, std::size_t max_seq_len);

void write_catalog(const Catalog& catalog, const std::filesystem::path& path);
void write_interactions(const Dataset& dataset, const std::filesystem::path& path);

struct HeldOut {
  std::vector<int> context;
  int target = -1;
};

struct UserSplit {
  std::size_t user = 0;  // index into Dataset::users
  std::vector<int> train;
  HeldOut valid;
  HeldOut test;
};

struct SplitView {
  std::shared_ptr<const Catalog> catalog;
  std::vector<UserSplit> users;
};

enum class Split { Valid, Test };
std::string to_string(Split s);

/// Per user: test target = last item, validation target = second to last,
/// train = everything before. Throws SequenceTooShort below 3 items.
SplitView leave_one_out_split(const Dataset& dataset);

/// Keeps round(fraction * |users|) whole users: the prefix of one seeded
/// permutation, so smaller fractions select subsets of larger ones. Selected
/// users keep their original relative order.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

}  // namespace transrec::corpus
