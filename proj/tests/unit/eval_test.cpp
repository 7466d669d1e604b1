#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "transrec/error.hpp"
#include "transrec/eval.hpp"
#include "transrec/pipeline/model.hpp"
#include "transrec/synthetic.hpp"

namespace transrec::eval {
namespace {

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

// Scores are a deterministic function of (context, item).
class FunctionScores : public ScoreSource {
 public:
  using Fn = std::function<double(const std::vector<int>&, std::size_t)>;
  explicit FunctionScores(Fn fn) : fn_(std::move(fn)) {}
  Matrix score(const corpus::Catalog& catalog, std::span<const Query> queries) const override {
    Matrix out(queries.size(), catalog.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
      for (std::size_t i = 0; i < catalog.size(); ++i) out(q, i) = fn_(*queries[q].context, i);
    }
    return out;
  }

 private:
  Fn fn_;
};

double hashed_score(const std::vector<int>& ctx, std::size_t item) {
  std::uint64_t h = 1469598103934665603ull;
  for (int v : ctx) h = (h ^ static_cast<std::uint64_t>(v + 7)) * 1099511628211ull;
  h = (h ^ (item + 1)) * 1099511628211ull;
  h ^= h >> 29;
  return static_cast<double>(h % 1000003) / 1000003.0;
}

corpus::Dataset toy_dataset(std::size_t items, std::size_t users, std::uint64_t seed) {
  std::vector<corpus::Item> cat;
  for (std::size_t i = 0; i < items; ++i) cat.push_back({"i" + std::to_string(i), corpus::Modality::Id, {}, {}, {}, {}});
  std::mt19937_64 rng(seed);
  std::vector<corpus::InteractionSequence> seqs;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<int> s(3 + rng() % 8);
    for (int& v : s) v = static_cast<int>(rng() % items);
    seqs.push_back({"u" + std::to_string(u), s, {}});
  }
  return corpus::make_dataset("toy", std::make_shared<const corpus::Catalog>(std::move(cat)), seqs, 25);
}

TEST(RankFull, Examples) {
  const std::vector<double> top{0.1, 0.9, 0.3};
  EXPECT_EQ(rank_full(top, 1), 1u);
  const std::vector<double> flat(5, 0.25);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(rank_full(flat, t), static_cast<std::size_t>(t) + 1);
}

TEST(RankFull, MatchesCountingOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(50);
    // Coarse values so ties actually occur.
    for (double& v : s) v = static_cast<double>(rng() % 12);
    const int target = static_cast<int>(rng() % 50);
    std::size_t higher = 0, tied_before = 0;
    for (int i = 0; i < 50; ++i) {
      if (s[i] > s[target]) ++higher;
      if (s[i] == s[target] && i < target) ++tied_before;
    }
    EXPECT_EQ(rank_full(s, target), higher + tied_before + 1);
  }
}

TEST(RankFull, ConstantShiftLeavesRanksUnchangedProperty) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = testing::random_vector(rng, 30);
    const int target = static_cast<int>(rng() % 30);
    const std::size_t before = rank_full(s, target);
    const double c = 0.5 + static_cast<double>(rng() % 100);
    for (double& v : s) v += c;
    EXPECT_EQ(rank_full(s, target), before);
  }
}

TEST(RankFull, ExcludedItemsLeaveCandidatesButNeverTheTarget) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  const std::vector<int> excluded{0, 1, 2};
  EXPECT_EQ(rank_full(s, 3), 4u);
  EXPECT_EQ(rank_full(s, 3, excluded), 1u);
  EXPECT_EQ(rank_full(s, 2, excluded), 1u);
}

TEST(Metrics, HitRatioBoundaries) {
  EXPECT_EQ(hr_at_k(1, 10), 1);
  EXPECT_EQ(hr_at_k(11, 10), 0);
  EXPECT_EQ(hr_at_k(10, 10), 1);
}

TEST(Metrics, NdcgValues) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(1, 10), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(3, 10), 0.5);
  EXPECT_EQ(ndcg_at_k(12, 10), 0.0);
}

TEST(Metrics, BoundsAndMonotoneInKProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t rank = 1 + rng() % 200;
    double prev_hr = 0, prev_ndcg = 0;
    for (std::size_t k = 1; k <= 60; ++k) {
      const double hr = hr_at_k(rank, k), nd = ndcg_at_k(rank, k);
      EXPECT_GE(nd, 0.0);
      EXPECT_LE(nd, hr);
      EXPECT_GE(hr, prev_hr);
      EXPECT_GE(nd, prev_ndcg);
      prev_hr = hr;
      prev_ndcg = nd;
    }
  }
}

TEST(Summarize, TwoUserHandArithmetic) {
  const std::vector<RankingResult> ranks{{"a", 0, 1}, {"b", 1, 3}};
  const auto r = summarize(ranks, 10);
  EXPECT_DOUBLE_EQ(r.hr, 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg, 0.75);
  EXPECT_EQ(r.n_users, 2u);
}

TEST(Evaluate, EmptySplitIsRejected) {
  const auto ds = toy_dataset(10, 4, 1);
  corpus::SplitView empty{ds.catalog, {}};
  FunctionScores model(hashed_score);
  EXPECT_EQ(error_of([&] { evaluate(model, ds, empty, corpus::Split::Test); }), ErrorCode::EmptySplit);
}

TEST(Evaluate, UserBlockSizeNeverChangesResults) {
  const auto ds = toy_dataset(40, 37, 2);
  const auto view = corpus::leave_one_out_split(ds);
  FunctionScores model(hashed_score);
  EvalOptions one, many;
  one.user_block = 1;
  many.user_block = 1000;
  const auto a = rank_split(model, ds, view, corpus::Split::Test, one);
  const auto b = rank_split(model, ds, view, corpus::Split::Test, many);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].rank, b[i].rank);
}

TEST(Evaluate, ContextMatchesSplitDefinition) {
  const auto ds = toy_dataset(20, 5, 3);
  const auto view = corpus::leave_one_out_split(ds);
  std::vector<std::vector<int>> seen;
  FunctionScores spy([&](const std::vector<int>& ctx, std::size_t item) {
    if (item == 0) seen.push_back(ctx);
    return 0.0;
  });
  rank_split(spy, ds, view, corpus::Split::Valid);
  ASSERT_EQ(seen.size(), 5u);
  for (std::size_t u = 0; u < 5; ++u) EXPECT_EQ(seen[u], view.users[u].train);
  seen.clear();
  rank_split(spy, ds, view, corpus::Split::Test);
  for (std::size_t u = 0; u < 5; ++u) EXPECT_EQ(seen[u], view.users[u].test.context);
}

TEST(Evaluate, MetricsWithinBoundsAndNdcgBelowHr) {
  const auto ds = toy_dataset(30, 80, 4);
  const auto view = corpus::leave_one_out_split(ds);
  FunctionScores model(hashed_score);
  for (std::size_t k : {1u, 5u, 10u, 30u}) {
    EvalOptions opt;
    opt.k = k;
    const auto r = evaluate(model, ds, view, corpus::Split::Test, opt);
    EXPECT_GE(r.hr, 0.0);
    EXPECT_LE(r.hr, 1.0);
    EXPECT_LE(r.ndcg, r.hr);
  }
}

TEST(Evaluate, SampledNegativesOverstateFullRanking) {
  const auto ds = toy_dataset(300, 200, 5);
  const auto view = corpus::leave_one_out_split(ds);
  FunctionScores model(hashed_score);
  const auto full = evaluate(model, ds, view, corpus::Split::Test);
  const auto sampled = evaluate_sampled(model, ds, view, corpus::Split::Test, 99, 7);
  EXPECT_GE(sampled.hr, full.hr);
  EXPECT_GT(sampled.hr, 2 * full.hr);
}

TEST(Evaluate, RandomParameterModelSitsInBinomialBand) {
  // Uniform streams without repeats over ID items: nothing a random model
  // could exploit, so HR@10 should be 10/100 up to sampling noise.
  std::mt19937_64 rng(21);
  std::vector<corpus::Item> cat;
  for (int i = 0; i < 100; ++i) cat.push_back({"i" + std::to_string(i), corpus::Modality::Id, {}, {}, {}, {}});
  std::vector<corpus::InteractionSequence> seqs;
  for (int u = 0; u < 600; ++u) {
    std::vector<int> all(100);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(3 + rng() % 10);
    seqs.push_back({"u" + std::to_string(u), all, {}});
  }
  const auto ds = corpus::make_dataset("uniform", std::make_shared<const corpus::Catalog>(std::move(cat)), seqs, 16);
  pipeline::ModelConfig mc;
  mc.item.representation = encoders::ItemRepresentation::Id;
  mc.item.id_vocab = 100;
  pipeline::TransRecModel model(mc);
  model.init(99);
  const auto view = corpus::leave_one_out_split(ds);
  const auto r = evaluate(model, ds, view, corpus::Split::Test);
  ASSERT_GE(r.n_users, 500u);
  const double p = 0.1, sigma = std::sqrt(p * (1 - p) / static_cast<double>(r.n_users));
  EXPECT_NEAR(r.hr, p, 3 * sigma);
}

TEST(Compare, TableExampleAndGuards) {
  MetricsReport a{"a", "mixed", "test", 10, 0.0428, 0.02, 100, 1, 0};
  MetricsReport b{"b", "mixed", "test", 10, 0.0485, 0.02, 100, 1, 0};
  const auto imp = compare(a, b);
  ASSERT_EQ(imp.size(), 2u);
  EXPECT_EQ(imp[0].metric, "HR@10");
  EXPECT_EQ(format_percent(imp[0].relative), "+13.32%");
  EXPECT_EQ(format_percent(compare(a, a)[0].relative), "+0.00%");
  MetricsReport zero = a;
  zero.hr = 0.0;
  EXPECT_EQ(error_of([&] { compare(zero, b); }), ErrorCode::ZeroBaseline);
  MetricsReport other = b;
  other.split = "valid";
  EXPECT_EQ(error_of([&] { compare(a, other); }), ErrorCode::MismatchedReports);
  other = b;
  other.k = 20;
  EXPECT_EQ(error_of([&] { compare(a, other); }), ErrorCode::MismatchedReports);
  EXPECT_NE(improvement_table(a, b).find("+13.32%"), std::string::npos);
}

TEST(Reports, CsvRoundTrip) {
  testing::TempDir dir("reports");
  const std::vector<MetricsReport> reports{{"run1", "vision", "valid", 10, 0.123456789, 0.05, 77, 0xdeadbeefcafe, 1.5},
                                           {"run1", "vision", "test", 10, 0.25, 0.125, 77, 0xdeadbeefcafe, 1.5}};
  write_reports(reports, dir / "m.csv");
  const auto back = read_reports(dir / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].hr, reports[0].hr);
  EXPECT_EQ(back[1].ndcg, reports[1].ndcg);
  EXPECT_EQ(back[0].config_hash, reports[0].config_hash);
  EXPECT_EQ(back[1].split, "test");
  EXPECT_EQ(hash_hex(0xdeadbeefcafe), "0000deadbeefcafe");
  EXPECT_EQ(csv_header(), "run_id,domain,split,K,hr,ndcg,n_users,config_hash");
}

}  // namespace
}  // namespace transrec::eval
