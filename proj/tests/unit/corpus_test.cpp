#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "test_support.hpp"
#include "transrec/corpus.hpp"
#include "transrec/error.hpp"

namespace transrec::corpus {
namespace {

using testing::TempDir;

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

template <typename Fn>
ErrorCode error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::ConfigInvalid;
}

std::shared_ptr<const Catalog> text_catalog(std::size_t n) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.item_id = "i" + std::to_string(i);
    it.modality = Modality::Text;
    it.text_tokens = {static_cast<int>(i % 5) + 1};
    items.push_back(it);
  }
  return std::make_shared<const Catalog>(std::move(items));
}

InteractionSequence user(const std::string& id, std::vector<int> items) {
  return {id, std::move(items), {}};
}

TEST(LoadCatalog, TextRecordMapsFields) {
  TempDir dir("catalog");
  write_lines(dir / "c.jsonl", {R"({"item_id":"a1","modality":"text","text_tokens":[3,7,7]})"});
  const Catalog c = load_catalog(dir / "c.jsonl");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at(0).item_id, "a1");
  EXPECT_EQ(c.at(0).modality, Modality::Text);
  EXPECT_EQ(c.at(0).text_tokens, (std::vector<int>{3, 7, 7}));
}

TEST(LoadCatalog, DuplicateItemIdIsRejected) {
  TempDir dir("catalog");
  write_lines(dir / "c.jsonl", {R"({"item_id":"a1","modality":"text","text_tokens":[1]})",
                                R"({"item_id":"a1","modality":"id"})"});
  EXPECT_EQ(error_of([&] { load_catalog(dir / "c.jsonl"); }), ErrorCode::DuplicateItemId);
}

TEST(LoadCatalog, TokenAtVocabSizeIsOutOfRange) {
  CatalogLimits limits;
  limits.vocab_size = 8;
  EXPECT_EQ(error_of([&] {
              parse_item_record(R"({"item_id":"a","modality":"text","text_tokens":[1,8]})", 1, limits);
            }),
            ErrorCode::TokenOutOfRange);
  EXPECT_NO_THROW(parse_item_record(R"({"item_id":"a","modality":"text","text_tokens":[1,7]})", 1, limits));
}

TEST(LoadCatalog, MalformedAndBadShapeRecords) {
  EXPECT_EQ(error_of([] { parse_item_record("{not json", 4, {}); }), ErrorCode::MalformedRecord);
  EXPECT_EQ(error_of([] { parse_item_record(R"({"item_id":"a","modality":"audio"})", 1, {}); }),
            ErrorCode::MalformedRecord);
  // Ragged rows.
  EXPECT_EQ(error_of([] {
              parse_item_record(R"({"item_id":"a","modality":"vision","image":[[[1,2],[3]]]})", 1, {});
            }),
            ErrorCode::BadImageShape);
  CatalogLimits limits;
  limits.image_shape = ImageShape{1, 2, 2};
  EXPECT_EQ(error_of([&] {
              parse_item_record(R"({"item_id":"a","modality":"vision","image":[[[1,2,3],[4,5,6]]]})", 1, limits);
            }),
            ErrorCode::BadImageShape);
  const Item ok =
      parse_item_record(R"({"item_id":"a","modality":"vision","image":[[[1,2],[3,4]]]})", 1, limits);
  EXPECT_EQ(ok.image, (std::vector<std::uint8_t>{1, 2, 3, 4}));
}

TEST(LoadCatalog, MalformedRecordNamesLine) {
  TempDir dir("catalog");
  write_lines(dir / "c.jsonl", {R"({"item_id":"a1","modality":"id"})", "garbage"});
  try {
    load_catalog(dir / "c.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
}

TEST(LoadCatalog, RecordRoundTrip) {
  Item it;
  it.item_id = "v";
  it.modality = Modality::Vision;
  it.image_shape = {2, 1, 3};
  it.image = {0, 255, 7, 8, 9, 10};
  it.features = {{"category", 3}};
  const Item back = parse_item_record(item_record(it), 1, {});
  EXPECT_EQ(back.image, it.image);
  EXPECT_EQ(back.image_shape, it.image_shape);
  EXPECT_EQ(back.features, it.features);
}

TEST(LoadInteractions, KeepsMostRecentTwentyFive) {
  TempDir dir("inter");
  auto catalog = text_catalog(40);
  std::string items;
  for (int i = 0; i < 30; ++i) items += std::string(i ? "," : "") + "\"i" + std::to_string(i) + "\"";
  write_lines(dir / "u.jsonl", {R"({"user_id":"u","items":[)" + items + "]}"});
  const Dataset ds = load_interactions(dir / "u.jsonl", catalog, 25, "d");
  ASSERT_EQ(ds.users.size(), 1u);
  ASSERT_EQ(ds.users[0].items.size(), 25u);
  for (int t = 0; t < 25; ++t) EXPECT_EQ(ds.users[0].items[t], t + 5);
}

TEST(LoadInteractions, ShortUsersAreDroppedAndCounted) {
  TempDir dir("inter");
  write_lines(dir / "u.jsonl", {R"({"user_id":"a","items":["i0","i1"]})",
                                R"({"user_id":"b","items":["i0","i1","i2"]})"});
  const Dataset ds = load_interactions(dir / "u.jsonl", text_catalog(3), 25, "d");
  EXPECT_EQ(ds.users.size(), 1u);
  EXPECT_EQ(ds.dropped_users, 1u);
  EXPECT_EQ(ds.users[0].user_id, "b");
}

TEST(LoadInteractions, UnknownItemAndEmptyDataset) {
  TempDir dir("inter");
  write_lines(dir / "u.jsonl", {R"({"user_id":"a","items":["i0","zz","i1"]})"});
  EXPECT_EQ(error_of([&] { load_interactions(dir / "u.jsonl", text_catalog(3), 25, "d"); }),
            ErrorCode::UnknownItemRef);
  write_lines(dir / "e.jsonl", {R"({"user_id":"a","items":["i0"]})"});
  EXPECT_EQ(error_of([&] { load_interactions(dir / "e.jsonl", text_catalog(3), 25, "d"); }),
            ErrorCode::EmptyDataset);
}

TEST(LoadInteractions, TruncationKeepsExactSuffixProperty) {
  std::mt19937_64 rng(17);
  auto catalog = text_catalog(30);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t max_len = 3 + rng() % 10;
    std::vector<InteractionSequence> users;
    std::vector<std::vector<int>> raw;
    for (int u = 0; u < 6; ++u) {
      std::vector<int> s(3 + rng() % 20);
      for (int& v : s) v = static_cast<int>(rng() % 30);
      raw.push_back(s);
      users.push_back(user("u" + std::to_string(u), s));
    }
    const Dataset ds = make_dataset("d", catalog, users, max_len);
    ASSERT_EQ(ds.users.size(), raw.size());
    for (std::size_t u = 0; u < raw.size(); ++u) {
      const std::size_t keep = std::min(raw[u].size(), max_len);
      EXPECT_EQ(ds.users[u].items, std::vector<int>(raw[u].end() - static_cast<long>(keep), raw[u].end()));
    }
  }
}

TEST(LeaveOneOut, FiveItemExample) {
  const Dataset ds = make_dataset("d", text_catalog(6), {user("u", {1, 2, 3, 4, 5})}, 25);
  const SplitView v = leave_one_out_split(ds);
  ASSERT_EQ(v.users.size(), 1u);
  EXPECT_EQ(v.users[0].train, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(v.users[0].valid.target, 4);
  EXPECT_EQ(v.users[0].test.target, 5);
  EXPECT_EQ(v.users[0].valid.context, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(v.users[0].test.context, (std::vector<int>{1, 2, 3, 4}));
}

TEST(LeaveOneOut, MinimalAndTooShort) {
  const SplitView v = leave_one_out_split(make_dataset("d", text_catalog(4), {user("u", {1, 2, 3})}, 25));
  EXPECT_EQ(v.users[0].train, (std::vector<int>{1}));
  EXPECT_EQ(v.users[0].valid.target, 2);
  EXPECT_EQ(v.users[0].test.target, 3);

  Dataset bad;
  bad.catalog = text_catalog(4);
  bad.users.push_back(user("short", {1, 2}));
  EXPECT_EQ(error_of([&] { leave_one_out_split(bad); }), ErrorCode::SequenceTooShort);
}

TEST(LeaveOneOut, ConcatenationReconstructsSequenceProperty) {
  std::mt19937_64 rng(23);
  auto catalog = text_catalog(50);
  std::vector<InteractionSequence> users;
  for (int u = 0; u < 60; ++u) {
    std::vector<int> s(3 + rng() % 22);
    for (int& v : s) v = static_cast<int>(rng() % 50);
    users.push_back(user("u" + std::to_string(u), s));
  }
  const Dataset ds = make_dataset("d", catalog, users, 25);
  const SplitView v = leave_one_out_split(ds);
  ASSERT_EQ(v.users.size(), ds.users.size());
  for (const auto& s : v.users) {
    std::vector<int> joined = s.train;
    joined.push_back(s.valid.target);
    joined.push_back(s.test.target);
    EXPECT_EQ(joined, ds.users[s.user].items);
  }
  // Deterministic.
  const SplitView again = leave_one_out_split(ds);
  for (std::size_t i = 0; i < v.users.size(); ++i) EXPECT_EQ(again.users[i].train, v.users[i].train);
}

Dataset many_users(std::size_t n) {
  std::vector<InteractionSequence> users;
  for (std::size_t u = 0; u < n; ++u) users.push_back(user("u" + std::to_string(u), {0, 1, 2}));
  return make_dataset("d", text_catalog(3), users, 25);
}

std::set<std::string> ids(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto& u : ds.users) out.insert(u.user_id);
  return out;
}

TEST(Subsample, FractionExamples) {
  const Dataset ds = many_users(1000);
  EXPECT_EQ(subsample(ds, 0.2, 5).users.size(), 200u);
  EXPECT_EQ(ids(subsample(ds, 1.0, 5)), ids(ds));
  EXPECT_EQ(subsample(ds, 0.2, 5).catalog, ds.catalog);
  EXPECT_EQ(error_of([&] { subsample(ds, 0.0, 5); }), ErrorCode::BadFraction);
  EXPECT_EQ(error_of([&] { subsample(ds, 1.5, 5); }), ErrorCode::BadFraction);
}

TEST(Subsample, DeterministicAndNestedProperty) {
  std::mt19937_64 rng(29);
  const Dataset ds = many_users(137);
  for (int trial = 0; trial < 30; ++trial) {
    const std::uint64_t seed = rng();
    double f1 = (1 + rng() % 100) / 100.0, f2 = (1 + rng() % 100) / 100.0;
    if (f1 > f2) std::swap(f1, f2);
    const auto small = ids(subsample(ds, f1, seed));
    const auto large = ids(subsample(ds, f2, seed));
    EXPECT_EQ(small, ids(subsample(ds, f1, seed)));
    EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end()));
    EXPECT_EQ(small.size(), static_cast<std::size_t>(std::llround(f1 * 137)));
  }
}

}  // namespace
}  // namespace transrec::corpus
