#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/nn/matrix.hpp"

namespace transrec::eval {

using nn::Matrix;

/// One user to score: the interactions seen so far and the user's features.
struct Query {
  const std::vector<int>* context = nullptr;
  const corpus::FeatureMap* user_features = nullptr;
};

/// Anything that scores the whole catalog for a batch of users.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;
  /// queries.size() x catalog.size() relevance scores.
  virtual Matrix score(const corpus::Catalog& catalog, std::span<const Query> queries) const = 0;
  /// Hash of the configuration that produced the scores (0 if unknown).
  virtual std::uint64_t config_hash() const { return 0; }
};

struct RankingResult {
  std::string user_id;
  int target = -1;
  std::size_t rank = 0;  // 1-based
};

/// 1-based rank of `target` among all scores, ordering by descending score
/// and then ascending item index. `excluded` items are removed from the
/// candidate list (the target never is).
std::size_t rank_full(std::span<const double> scores, int target, std::span<const int> excluded = {});

/// 1 iff rank <= k.
int hr_at_k(std::size_t rank, std::size_t k);
/// 1 / log2(rank + 1) inside the top k, else 0.
double ndcg_at_k(std::size_t rank, std::size_t k);

struct MetricsReport {
  std::string run_id;
  std::string domain;
  std::string split;
  std::size_t k = 10;
  double hr = 0.0;
  double ndcg = 0.0;
  std::size_t n_users = 0;
  std::uint64_t config_hash = 0;
  double wall_seconds = 0.0;
};

struct EvalOptions {
  std::size_t k = 10;
  /// Removes context items (other than the target) from the candidates.
  bool mask_history = false;
  std::size_t user_block = 256;
  std::string run_id;
};

/// Leave-one-out ranking of every user's held-out item. Validation uses the
/// train prefix as context; test additionally appends the validation item.
std::vector<RankingResult> rank_split(const ScoreSource& model, const corpus::Dataset& dataset,
                                      const corpus::SplitView& view, corpus::Split split,
                                      const EvalOptions& options = {});

/// Full-catalog HR@K and NDCG@K. Throws EmptySplit when the view has no users.
MetricsReport evaluate(const ScoreSource& model, const corpus::Dataset& dataset, const corpus::SplitView& view,
                       corpus::Split split, const EvalOptions& options = {});

/// Same metrics against the target plus `negatives` uniformly sampled
/// non-interacted items. Biased upwards; kept to show the gap.
MetricsReport evaluate_sampled(const ScoreSource& model, const corpus::Dataset& dataset,
                               const corpus::SplitView& view, corpus::Split split, std::size_t negatives,
                               std::uint64_t seed, const EvalOptions& options = {});

/// Aggregates per-user ranks into a report.
MetricsReport summarize(std::span<const RankingResult> ranks, std::size_t k);

struct Improvement {
  std::string metric;
  double baseline = 0.0;
  double candidate = 0.0;
  double relative = 0.0;  // (candidate - baseline) / baseline
};

/// Relative improvement of b over a for HR and NDCG. Throws
/// MismatchedReports (domain, split or K differ) and ZeroBaseline.
std::vector<Improvement> compare(const MetricsReport& a, const MetricsReport& b);

/// "+13.32%" style, two decimals.
std::string format_percent(double relative);
/// Markdown table of compare(a, b).
std::string improvement_table(const MetricsReport& a, const MetricsReport& b);

std::string hash_hex(std::uint64_t hash);
std::string csv_header();
std::string csv_row(const MetricsReport& report);
void write_reports(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);
/// Parses a CSV written by write_reports. Throws MalformedRecord.
std::vector<MetricsReport> read_reports(const std::filesystem::path& path);

}  // namespace transrec::eval
