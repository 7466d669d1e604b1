#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "transrec/error.hpp"
#include "transrec/user_model.hpp"

namespace transrec::user_model {
namespace {

using nn::Tape;
using testing::random_matrix;

UserEncoderConfig small_config(std::size_t d = 8) {
  UserEncoderConfig cfg;
  cfg.d_model = d;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_positions = 6;
  return cfg;
}

struct Fixture {
  UserTower tower;
  ParameterStore store;

  explicit Fixture(UserEncoderConfig cfg, std::vector<nn::FeatureSpec> features = {}, double spread = 0.3)
      : tower(cfg, std::move(features)) {
    ParameterStore::Rng rng(3);
    tower.init(store, rng);
    std::mt19937_64 r(4);
    std::normal_distribution<double> n(0.0, spread);
    store.for_each([&](nn::Parameter& p) {
      for (double& v : p.value.values()) v += n(r);
    });
  }

  Matrix hidden(const Matrix& items, const SequenceLayout& layout, bool causal) {
    Tape t(false);
    nn::Binder bind{t, store};
    return tower.encode(bind, tower.add_positions(bind, t.constant(items), layout), layout, causal).value();
  }
};

std::vector<std::size_t> lengths_of(std::initializer_list<std::size_t> l) { return l; }

TEST(AddPositions, ZeroTableIsIdentity) {
  Fixture f(small_config());
  f.store.at("user_encoder.pos").value.fill(0.0);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(rng, 4, 8);
  const auto layout = padded_layout(lengths_of({4}));
  Tape t(false);
  EXPECT_EQ(f.tower.add_positions({t, f.store}, t.constant(x), layout).value(), x);
}

TEST(AddPositions, ZeroInputYieldsLeadingTableRows) {
  Fixture f(small_config());
  const auto layout = padded_layout(lengths_of({4}));
  Tape t(false);
  const Matrix y = f.tower.add_positions({t, f.store}, t.constant(Matrix(4, 8)), layout).value();
  const Matrix& table = f.store.at("user_encoder.pos").value;
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y(p, c), table(p, c));
  }
}

TEST(AddPositions, SwappingRowsChangesTheEncoding) {
  Fixture f(small_config());
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(rng, 4, 8);
  Matrix swapped = x;
  for (std::size_t c = 0; c < 8; ++c) std::swap(swapped(1, c), swapped(2, c));
  const auto layout = padded_layout(lengths_of({4}));
  const Matrix a = f.hidden(x, layout, false), b = f.hidden(swapped, layout, false);
  // Without positions, bidirectional attention would make rows 1 and 2 simply trade places.
  double diff = 0.0;
  for (std::size_t c = 0; c < 8; ++c) diff += std::abs(a(1, c) - b(2, c)) + std::abs(a(3, c) - b(3, c));
  EXPECT_GT(diff, 1e-6);
}

TEST(AddPositions, TooLongSequenceIsRejected) {
  Fixture f(small_config());
  const auto layout = padded_layout(lengths_of({7}));
  Tape t(false);
  try {
    f.tower.add_positions({t, f.store}, t.constant(Matrix(7, 8)), layout);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SequenceTooLong);
  }
}

TEST(EncodeUser, SinglePositionIsMaskIndependent) {
  Fixture f(small_config());
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(rng, 1, 8);
  const auto layout = padded_layout(lengths_of({1}));
  EXPECT_EQ(f.hidden(x, layout, true), f.hidden(x, layout, false));
}

TEST(EncodeUser, CausalPrefixIsBitwiseStableUnderSuffixChangesProperty) {
  Fixture f(small_config());
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 5;
    const std::size_t cut = rng() % n;
    const Matrix x = random_matrix(rng, n, 8);
    Matrix y = x;
    for (std::size_t r = cut + 1; r < n; ++r) {
      for (std::size_t c = 0; c < 8; ++c) y(r, c) += 3.0 * (static_cast<double>(rng() % 1000) / 1000.0 - 0.5);
    }
    const std::vector<std::size_t> len{n};
    const auto layout = padded_layout(len);
    const Matrix a = f.hidden(x, layout, true), b = f.hidden(y, layout, true);
    for (std::size_t r = 0; r <= cut; ++r) {
      for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(a(r, c), b(r, c)) << "row " << r;
    }
  }
}

TEST(EncodeUser, CausalJacobianAboveDiagonalIsExactlyZero) {
  Fixture f(small_config());
  std::mt19937_64 rng(7);
  Matrix x = random_matrix(rng, 4, 8);
  const auto layout = padded_layout(lengths_of({4}));
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t later = t + 1; later < 4; ++later) {
      for (std::size_t c = 0; c < 8; ++c) {
        const double orig = x(later, c);
        x(later, c) = orig + 1e-5;
        const Matrix up = f.hidden(x, layout, true);
        x(later, c) = orig - 1e-5;
        const Matrix down = f.hidden(x, layout, true);
        x(later, c) = orig;
        for (std::size_t k = 0; k < 8; ++k) ASSERT_EQ(up(t, k) - down(t, k), 0.0);
      }
    }
  }
}

TEST(EncodeUser, PaddedTailLeavesRealPositionsUnchanged) {
  Fixture f(small_config());
  std::mt19937_64 rng(8);
  for (bool causal : {false, true}) {
    const Matrix x = random_matrix(rng, 3, 8);
    Matrix padded(5, 8);
    const Matrix junk = random_matrix(rng, 2, 8, 5.0);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 8; ++c) padded(r, c) = r < 3 ? x(r, c) : junk(r - 3, c);
    }
    const SequenceLayout tight = padded_layout(lengths_of({3}));
    const SequenceLayout loose{1, 5, {1, 1, 1, 0, 0}};
    const Matrix a = f.hidden(x, tight, causal), b = f.hidden(padded, loose, causal);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_LT(testing::max_abs_diff(a.row(r), b.row(r)), 1e-6);
  }
}

TEST(EncodeUser, BatchingMatchesIndividualRuns) {
  Fixture f(small_config());
  std::mt19937_64 rng(9);
  const Matrix a = random_matrix(rng, 2, 8), b = random_matrix(rng, 4, 8);
  Matrix both(8, 8);
  for (std::size_t c = 0; c < 8; ++c) {
    both(0, c) = a(0, c);
    both(1, c) = a(1, c);
    for (std::size_t r = 0; r < 4; ++r) both(4 + r, c) = b(r, c);
  }
  const auto layout = padded_layout(lengths_of({2, 4}));
  const Matrix h = f.hidden(both, layout, false);
  const Matrix ha = f.hidden(a, padded_layout(lengths_of({2})), false);
  const Matrix hb = f.hidden(b, padded_layout(lengths_of({4})), false);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_LT(testing::max_abs_diff(h.row(r), ha.row(r)), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_LT(testing::max_abs_diff(h.row(4 + r), hb.row(r)), 1e-12);
}

TEST(EncodeUser, MaskShapeMismatch) {
  Fixture f(small_config());
  Tape t(false);
  const SequenceLayout bad{1, 3, {1, 1}};
  try {
    f.tower.encode({t, f.store}, t.constant(Matrix(3, 8)), bad, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MaskShapeMismatch);
  }
}

TEST(Summarize, PicksLastRealSlot) {
  Fixture f(small_config());
  std::mt19937_64 rng(10);
  const Matrix h = random_matrix(rng, 8, 8);
  const auto layout = padded_layout(lengths_of({2, 4}));
  Tape t(false);
  const Matrix s = f.tower.summarize(t.constant(h), layout).value();
  EXPECT_EQ(std::vector<double>(s.row(0).begin(), s.row(0).end()), std::vector<double>(h.row(1).begin(), h.row(1).end()));
  EXPECT_EQ(std::vector<double>(s.row(1).begin(), s.row(1).end()), std::vector<double>(h.row(7).begin(), h.row(7).end()));
}

TEST(UserFeatures, NoFeaturesIsIdentity) {
  Fixture f(small_config());
  std::mt19937_64 rng(11);
  const Matrix s = random_matrix(rng, 2, 8);
  const std::map<std::string, int> none;
  Tape t(false);
  EXPECT_EQ(f.tower.apply_features({t, f.store}, t.constant(s), {&none, &none}).value(), s);
}

TEST(UserFeatures, GenderAndAgeProjectTwentyFourToSixteen) {
  Fixture f(small_config(16), {{"gender", 2, 4}, {"age", 5, 4}});
  const Matrix& w = f.store.at("user_features.proj.w").value;
  EXPECT_EQ(w.rows(), 24u);
  EXPECT_EQ(w.cols(), 16u);
  std::mt19937_64 rng(12);
  const Matrix s = random_matrix(rng, 1, 16);
  Matrix both(2, 16);
  for (std::size_t c = 0; c < 16; ++c) both(0, c) = both(1, c) = s(0, c);
  const std::map<std::string, int> young{{"gender", 1}, {"age", 0}}, old{{"gender", 1}, {"age", 4}};
  Tape t(false);
  const Matrix out = f.tower.apply_features({t, f.store}, t.constant(both), {&young, &old}).value();
  EXPECT_GT(testing::max_abs_diff(out.row(0), out.row(1)), 1e-9);

  const std::map<std::string, int> no_age{{"gender", 0}};
  try {
    f.tower.apply_features({t, f.store}, t.constant(s), {&no_age});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownFeature);
  }
}

TEST(Relevance, OrthogonalAndUnitVectors) {
  Matrix cands(2, 3, std::vector<double>{0, 1, 0, 0.6, 0, 0.8});
  const std::vector<double> user{0.6, 0, 0.8};
  const auto s = relevance(user, cands);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], 1.0, 1e-15);
}

TEST(Relevance, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(13);
  const Matrix cands = random_matrix(rng, 20, 8);
  const auto user = testing::random_vector(rng, 8);
  const auto s = relevance(user, cands);
  Tape t(false);
  const Matrix batched = relevance(t.constant(Matrix(1, 8, user)), t.constant(cands)).value();
  for (std::size_t j = 0; j < 20; ++j) {
    double dot = 0.0;
    for (std::size_t k = 0; k < 8; ++k) dot += user[k] * cands(j, k);
    EXPECT_NEAR(s[j], dot, 1e-12);
    EXPECT_NEAR(batched(0, j), dot, 1e-12);
  }
  const std::vector<double> short_user(7, 1.0);
  try {
    relevance(short_user, cands);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(Relevance, PositiveScalingPreservesRankingProperty) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix cands = random_matrix(rng, 15, 6);
    auto user = testing::random_vector(rng, 6);
    const double c = std::exp(testing::random_vector(rng, 1)[0] * 2);
    const auto s = relevance(user, cands);
    for (double& v : user) v *= c;
    const auto scaled = relevance(user, cands);
    std::vector<std::size_t> a(15), b(15);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::stable_sort(a.begin(), a.end(), [&](auto x, auto y) { return s[x] > s[y]; });
    std::stable_sort(b.begin(), b.end(), [&](auto x, auto y) { return scaled[x] > scaled[y]; });
    EXPECT_EQ(a, b);
    for (std::size_t j = 0; j < 15; ++j) EXPECT_NEAR(scaled[j], c * s[j], 1e-9 * std::max(1.0, std::abs(c * s[j])));
  }
}

TEST(UserEncoderConfig, HeadsMustDivideModelDimension) {
  auto cfg = small_config();
  cfg.n_heads = 3;
  try {
    cfg.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
  }
}

}  // namespace
}  // namespace transrec::user_model
