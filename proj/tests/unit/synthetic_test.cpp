#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "test_support.hpp"
#include "transrec/error.hpp"
#include "transrec/io.hpp"
#include "transrec/synthetic.hpp"

namespace transrec::corpus {
namespace {

SyntheticWorldConfig small_config() {
  SyntheticWorldConfig cfg;
  cfg.n_source_users = 150;
  cfg.n_target_users = 100;
  cfg.n_source_items = 120;
  cfg.n_target_items = 100;
  cfg.seed = 11;
  return cfg;
}

// Brute-force HR@10 of ranking every item by the true preference, on the
// test target of the first `users` users.
double oracle_hr(const SyntheticDomain& dom, std::size_t users) {
  const SplitView view = leave_one_out_split(dom.dataset);
  std::size_t hits = 0, n = 0;
  for (const auto& s : view.users) {
    if (n == users) break;
    const auto scores = dom.oracle.scores(s.user);
    const double t = scores[static_cast<std::size_t>(s.test.target)];
    std::size_t better = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] > t || (scores[i] == t && static_cast<int>(i) < s.test.target)) ++better;
    }
    hits += better < 10 ? 1 : 0;
    ++n;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<const SyntheticDomain*> domains(const SyntheticWorld& w) {
  std::vector<const SyntheticDomain*> out{&w.source};
  for (const auto& t : w.targets) out.push_back(&t);
  return out;
}

TEST(Synthetic, SameConfigGivesByteIdenticalFiles) {
  const auto cfg = small_config();
  testing::TempDir a("world_a"), b("world_b");
  write_world(generate_synthetic_world(cfg), a.path());
  write_world(generate_synthetic_world(cfg), b.path());
  for (const char* domain : {"source", "mixed", "vision", "text_features", "shifted"}) {
    for (const char* file : {"catalog.jsonl", "interactions.jsonl", "oracle.jsonl"}) {
      const auto rel = std::filesystem::path(domain) / file;
      EXPECT_EQ(io::read_file(a.path() / rel), io::read_file(b.path() / rel)) << rel;
    }
  }
}

TEST(Synthetic, TargetsMirrorTheFourRoles) {
  const auto w = generate_synthetic_world(small_config());
  ASSERT_EQ(w.targets.size(), 4u);
  auto count = [](const Dataset& ds, Modality m) {
    return std::count_if(ds.catalog->items().begin(), ds.catalog->items().end(),
                         [&](const Item& i) { return i.modality == m; });
  };
  const auto& mixed = w.target("mixed").dataset;
  EXPECT_GT(count(mixed, Modality::Text), 0);
  EXPECT_GT(count(mixed, Modality::Vision), 0);
  EXPECT_EQ(count(w.target("vision").dataset, Modality::Text), 0);
  const auto& tf = w.target("text_features").dataset;
  EXPECT_EQ(count(tf, Modality::Vision), 0);
  EXPECT_FALSE(tf.catalog->at(0).features.empty());
  EXPECT_FALSE(tf.users[0].user_features.empty());
  const auto& shifted = w.target("shifted").dataset;
  ASSERT_TRUE(shifted.catalog->image_shape().has_value());
  EXPECT_NE(*shifted.catalog->image_shape(), *w.target("vision").dataset.catalog->image_shape());
  EXPECT_EQ(*shifted.catalog->image_shape(), small_config().shifted_image_shape);
}

TEST(Synthetic, ItemIdsAreDisjointAcrossDomains) {
  const auto w = generate_synthetic_world(small_config());
  std::set<std::string> source;
  for (const auto& it : w.source.dataset.catalog->items()) source.insert(it.item_id);
  for (const auto& t : w.targets) {
    for (const auto& it : t.dataset.catalog->items()) EXPECT_EQ(source.count(it.item_id), 0u) << it.item_id;
  }
}

TEST(Synthetic, ColdTemperatureMakesOracleNearPerfect) {
  auto cfg = small_config();
  cfg.noise_temperature = 0.01;
  cfg.modality_mix = 1.0;
  const auto w = generate_synthetic_world(cfg);
  EXPECT_GT(oracle_hr(w.target("vision"), 100), 0.9);
  EXPECT_GT(oracle_hr(w.target("text_features"), 100), 0.9);
  EXPECT_GT(oracle_hr(w.source, 100), 0.9);
}

TEST(Synthetic, OracleBeatsRandomTwentyfoldAtLowTemperature) {
  // Random HR@10 is 10/|items|, so a twentyfold margin needs more than 200 items.
  auto cfg = small_config();
  cfg.n_source_items = 1000;
  cfg.n_target_items = 1000;
  cfg.noise_temperature = 0.1;
  const auto w = generate_synthetic_world(cfg);
  for (const auto* dom : domains(w)) {
    const double random_hr = 10.0 / static_cast<double>(dom->dataset.catalog->size());
    EXPECT_GE(oracle_hr(*dom, dom->dataset.users.size()), 20 * random_hr) << dom->dataset.domain_name;
  }
}

TEST(Synthetic, InvalidConfigIsRejected) {
  auto cfg = small_config();
  cfg.noise_temperature = 0.0;
  EXPECT_THROW(generate_synthetic_world(cfg), Error);
  cfg = small_config();
  cfg.min_seq_len = 2;
  try {
    generate_synthetic_world(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
  }
}

TEST(Synthetic, SequencesRespectLengthBounds) {
  const auto cfg = small_config();
  const auto w = generate_synthetic_world(cfg);
  for (const auto* dom : domains(w)) {
    for (const auto& u : dom->dataset.users) {
      EXPECT_GE(u.items.size(), cfg.min_seq_len);
      EXPECT_LE(u.items.size(), cfg.max_seq_len);
    }
  }
}

}  // namespace
}  // namespace transrec::corpus
