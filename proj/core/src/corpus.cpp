#include "transrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "transrec/error.hpp"
#include "transrec/log.hpp"

namespace transrec::corpus {

using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Text: return "text";
    case Modality::Vision: return "vision";
    case Modality::Id: return "id";
  }
  return "id";
}

Modality modality_from_string(const std::string& s) {
  if (s == "text") return Modality::Text;
  if (s == "vision") return Modality::Vision;
  if (s == "id") return Modality::Id;
  throw Error(ErrorCode::MalformedRecord, "unknown modality '" + s + "'");
}

std::string to_string(Split s) { return s == Split::Valid ? "valid" : "test"; }

Catalog::Catalog(std::vector<Item> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i].item_id, i).second) {
      throw Error(ErrorCode::DuplicateItemId, "item_id '" + items_[i].item_id + "'");
    }
  }
}

std::optional<std::size_t> Catalog::index_of(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<ImageShape> Catalog::image_shape() const {
  for (const Item& item : items_) {
    if (item.modality == Modality::Vision) return item.image_shape;
  }
  return std::nullopt;
}

namespace {

[[noreturn]] void malformed(std::size_t line_no, const std::string& why) {
  throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + why);
}

FeatureMap parse_features(const json& j, std::size_t line_no) {
  FeatureMap out;
  if (!j.is_object()) malformed(line_no, "features must be an object");
  for (const auto& [name, value] : j.items()) {
    if (!value.is_number_integer()) malformed(line_no, "feature '" + name + "' must be an integer");
    out[name] = value.get<int>();
  }
  return out;
}

json features_json(const FeatureMap& features) {
  json j = json::object();
  for (const auto& [k, v] : features) j[k] = v;
  return j;
}

}  // namespace

Item parse_item_record(const std::string& line, std::size_t line_no, const CatalogLimits& limits) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    malformed(line_no, e.what());
  }
  if (!j.is_object()) malformed(line_no, "record must be an object");
  if (!j.contains("item_id") || !j["item_id"].is_string()) malformed(line_no, "missing item_id");
  if (!j.contains("modality") || !j["modality"].is_string()) malformed(line_no, "missing modality");

  Item item;
  item.item_id = j["item_id"].get<std::string>();
  try {
    item.modality = modality_from_string(j["modality"].get<std::string>());
  } catch (const Error&) {
    malformed(line_no, "unknown modality");
  }
  const bool has_text = j.contains("text_tokens");
  const bool has_image = j.contains("image");

  switch (item.modality) {
    case Modality::Text: {
      if (!has_text || has_image) malformed(line_no, "text item needs text_tokens and no image");
      const json& toks = j["text_tokens"];
      if (!toks.is_array() || toks.empty()) malformed(line_no, "text_tokens must be a non-empty array");
      for (const json& t : toks) {
        if (!t.is_number_integer()) malformed(line_no, "token ids must be integers");
        const long id = t.get<long>();
        if (id < 0 || (limits.vocab_size && static_cast<std::size_t>(id) >= *limits.vocab_size)) {
          throw Error(ErrorCode::TokenOutOfRange, "line " + std::to_string(line_no) + ": token " +
                                                      std::to_string(id) + " outside vocabulary");
        }
        item.text_tokens.push_back(static_cast<int>(id));
      }
      break;
    }
    case Modality::Vision: {
      if (!has_image || has_text) malformed(line_no, "vision item needs image and no text_tokens");
      const json& img = j["image"];
      if (!img.is_array() || img.empty() || !img[0].is_array() || img[0].empty() ||
          !img[0][0].is_array() || img[0][0].empty()) {
        throw Error(ErrorCode::BadImageShape, "line " + std::to_string(line_no) + ": image must be [C][H][W]");
      }
      item.image_shape = {img.size(), img[0].size(), img[0][0].size()};
      item.image.reserve(item.image_shape.pixels());
      for (const json& plane : img) {
        if (!plane.is_array() || plane.size() != item.image_shape.height) {
          throw Error(ErrorCode::BadImageShape, "line " + std::to_string(line_no) + ": ragged image");
        }
        for (const json& row : plane) {
          if (!row.is_array() || row.size() != item.image_shape.width) {
            throw Error(ErrorCode::BadImageShape, "line " + std::to_string(line_no) + ": ragged image");
          }
          for (const json& px : row) {
            if (!px.is_number_integer() || px.get<int>() < 0 || px.get<int>() > 255) {
              malformed(line_no, "pixel values must be integers in [0, 255]");
            }
            item.image.push_back(static_cast<std::uint8_t>(px.get<int>()));
          }
        }
      }
      if (limits.image_shape && !(item.image_shape == *limits.image_shape)) {
        throw Error(ErrorCode::BadImageShape, "line " + std::to_string(line_no) +
                                                  ": image shape differs from catalog shape");
      }
      break;
    }
    case Modality::Id:
      if (has_text || has_image) malformed(line_no, "id item carries no content");
      break;
  }
  if (j.contains("features")) item.features = parse_features(j["features"], line_no);
  return item;
}

std::string item_record(const Item& item) {
  json j;
  j["item_id"] = item.item_id;
  j["modality"] = to_string(item.modality);
  if (item.modality == Modality::Text) j["text_tokens"] = item.text_tokens;
  if (item.modality == Modality::Vision) {
    const ImageShape& s = item.image_shape;
    json img = json::array();
    for (std::size_t c = 0; c < s.channels; ++c) {
      json plane = json::array();
      for (std::size_t y = 0; y < s.height; ++y) {
        json row = json::array();
        for (std::size_t x = 0; x < s.width; ++x) row.push_back(item.image[(c * s.height + y) * s.width + x]);
        plane.push_back(std::move(row));
      }
      img.push_back(std::move(plane));
    }
    j["image"] = std::move(img);
  }
  if (!item.features.empty()) j["features"] = features_json(item.features);
  return j.dump();
}

Catalog load_catalog(const std::filesystem::path& path, const CatalogLimits& limits) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open catalog " + path.string());
  CatalogLimits active = limits;
  std::vector<Item> items;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Item item = parse_item_record(line, line_no, active);
    if (item.modality == Modality::Vision && !active.image_shape) active.image_shape = item.image_shape;
    if (!seen.emplace(item.item_id, line_no).second) {
      throw Error(ErrorCode::DuplicateItemId, "line " + std::to_string(line_no) + ": item_id '" +
                                                  item.item_id + "' first seen on line " +
                                                  std::to_string(seen[item.item_id]));
    }
    items.push_back(std::move(item));
  }
  return Catalog(std::move(items));
}

Dataset make_dataset(std::string domain_name, std::shared_ptr<const Catalog> catalog,
                     std::vector<InteractionSequence> users, std::size_t max_seq_len) {
  Dataset ds;
  ds.domain_name = std::move(domain_name);
  ds.catalog = std::move(catalog);
  ds.max_seq_len = max_seq_len;
  for (auto& u : users) {
    if (u.items.size() > max_seq_len) {
      u.items.erase(u.items.begin(), u.items.end() - static_cast<std::ptrdiff_t>(max_seq_len));
    }
    if (u.items.size() < kMinSequenceLength) {
      ++ds.dropped_users;
      continue;
    }
    ds.users.push_back(std::move(u));
  }
  if (ds.dropped_users > 0) {
    log::warn("dropped " + std::to_string(ds.dropped_users) + " user(s) with fewer than " +
              std::to_string(kMinSequenceLength) + " interactions in domain '" + ds.domain_name + "'");
  }
  if (ds.users.empty()) throw Error(ErrorCode::EmptyDataset, "domain '" + ds.domain_name + "' has no usable users");
  return ds;
}

Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const Catalog> catalog,
                          std::size_t max_seq_len, std::string domain_name) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open interactions " + path.string());
  std::vector<InteractionSequence> users;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      malformed(line_no, e.what());
    }
    if (!j.is_object() || !j.contains("user_id") || !j["user_id"].is_string() || !j.contains("items") ||
        !j["items"].is_array()) {
      malformed(line_no, "interaction record needs user_id and items");
    }
    InteractionSequence seq;
    seq.user_id = j["user_id"].get<std::string>();
    for (const json& ref : j["items"]) {
      if (!ref.is_string()) malformed(line_no, "item references must be strings");
      const auto id = ref.get<std::string>();
      const auto idx = catalog->index_of(id);
      if (!idx) throw Error(ErrorCode::UnknownItemRef, "user '" + seq.user_id + "' references '" + id + "'");
      seq.items.push_back(static_cast<int>(*idx));
    }
    if (j.contains("features")) seq.user_features = parse_features(j["features"], line_no);
    users.push_back(std::move(seq));
  }
  return make_dataset(std::move(domain_name), std::move(catalog), std::move(users), max_seq_len);
}

void write_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const Item& item : catalog.items()) out << item_record(item) << '\n';
}

void write_interactions(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& u : dataset.users) {
    json j;
    j["user_id"] = u.user_id;
    json items = json::array();
    for (int idx : u.items) items.push_back(dataset.catalog->at(static_cast<std::size_t>(idx)).item_id);
    j["items"] = std::move(items);
    if (!u.user_features.empty()) j["features"] = features_json(u.user_features);
    out << j.dump() << '\n';
  }
}

SplitView leave_one_out_split(const Dataset& dataset) {
  SplitView view;
  view.catalog = dataset.catalog;
  view.users.reserve(dataset.users.size());
  for (std::size_t u = 0; u < dataset.users.size(); ++u) {
    const auto& items = dataset.users[u].items;
    if (items.size() < kMinSequenceLength) {
      throw Error(ErrorCode::SequenceTooShort, "user '" + dataset.users[u].user_id + "' has " +
                                                   std::to_string(items.size()) + " interactions");
    }
    const std::size_t n = items.size();
    UserSplit s;
    s.user = u;
    s.train.assign(items.begin(), items.end() - 2);
    s.valid.context = s.train;
    s.valid.target = items[n - 2];
    s.test.context.assign(items.begin(), items.end() - 1);
    s.test.target = items[n - 1];
    view.users.push_back(std::move(s));
  }
  return view;
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::BadFraction, "fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = dataset.users.size();
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (keep == 0) throw Error(ErrorCode::EmptyDataset, "fraction selects zero users");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  std::vector<std::size_t> chosen(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(chosen.begin(), chosen.end());
  Dataset out;
  out.domain_name = dataset.domain_name;
  out.catalog = dataset.catalog;
  out.max_seq_len = dataset.max_seq_len;
  out.users.reserve(keep);
  for (std::size_t idx : chosen) out.users.push_back(dataset.users[idx]);
  return out;
}

}  // namespace transrec::corpus
