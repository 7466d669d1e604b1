#include "transrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "transrec/error.hpp"
#include "transrec/io.hpp"

namespace transrec::eval {

namespace {

struct HeldOutQuery {
  std::vector<int> context;
  int target = -1;
  std::size_t user = 0;
};

std::vector<HeldOutQuery> held_out(const corpus::SplitView& view, corpus::Split split) {
  std::vector<HeldOutQuery> out;
  out.reserve(view.users.size());
  for (const corpus::UserSplit& u : view.users) {
    const corpus::HeldOut& h = split == corpus::Split::Valid ? u.valid : u.test;
    out.push_back({h.context, h.target, u.user});
  }
  return out;
}

// Rank inside an explicit candidate list (target included) by the global rule.
std::size_t rank_among(std::span<const double> scores, int target, std::vector<int> candidates) {
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  auto it = std::find(candidates.begin(), candidates.end(), target);
  return static_cast<std::size_t>(it - candidates.begin()) + 1;
}

template <typename RankFn>
MetricsReport run(const ScoreSource& model, const corpus::Dataset& dataset, const corpus::SplitView& view,
                  corpus::Split split, const EvalOptions& options, RankFn&& rank_fn) {
  if (view.users.empty()) throw Error(ErrorCode::EmptySplit, "no users in the " + to_string(split) + " split");
  const auto start = std::chrono::steady_clock::now();
  const auto queries = held_out(view, split);
  std::vector<RankingResult> ranks;
  ranks.reserve(queries.size());
  const std::size_t block = std::max<std::size_t>(1, options.user_block);
  for (std::size_t lo = 0; lo < queries.size(); lo += block) {
    const std::size_t hi = std::min(queries.size(), lo + block);
    std::vector<Query> batch;
    for (std::size_t i = lo; i < hi; ++i) {
      batch.push_back({&queries[i].context, &dataset.users.at(queries[i].user).user_features});
    }
    const Matrix scores = model.score(*view.catalog, batch);
    for (std::size_t i = lo; i < hi; ++i) {
      const HeldOutQuery& q = queries[i];
      ranks.push_back({dataset.users[q.user].user_id, q.target, rank_fn(scores.row(i - lo), q)});
    }
  }
  MetricsReport report = summarize(ranks, options.k);
  report.run_id = options.run_id;
  report.domain = dataset.domain_name;
  report.split = to_string(split);
  report.config_hash = model.config_hash();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::size_t rank_full(std::span<const double> scores, int target, std::span<const int> excluded) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "target " + std::to_string(target) + " outside the catalog");
  }
  std::vector<char> drop(scores.size(), 0);
  for (int e : excluded) {
    if (e >= 0 && static_cast<std::size_t>(e) < scores.size() && e != target) drop[static_cast<std::size_t>(e)] = 1;
  }
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!drop[i]) candidates.push_back(static_cast<int>(i));
  }
  return rank_among(scores, target, std::move(candidates));
}

int hr_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1 : 0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

std::vector<RankingResult> rank_split(const ScoreSource& model, const corpus::Dataset& dataset,
                                      const corpus::SplitView& view, corpus::Split split,
                                      const EvalOptions& options) {
  std::vector<RankingResult> out;
  const auto queries = held_out(view, split);
  for (std::size_t lo = 0; lo < queries.size(); lo += options.user_block) {
    const std::size_t hi = std::min(queries.size(), lo + options.user_block);
    std::vector<Query> batch;
    for (std::size_t i = lo; i < hi; ++i) {
      batch.push_back({&queries[i].context, &dataset.users.at(queries[i].user).user_features});
    }
    const Matrix scores = model.score(*view.catalog, batch);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& q = queries[i];
      const std::span<const int> excluded =
          options.mask_history ? std::span<const int>(q.context) : std::span<const int>();
      out.push_back({dataset.users[q.user].user_id, q.target, rank_full(scores.row(i - lo), q.target, excluded)});
    }
  }
  return out;
}

MetricsReport evaluate(const ScoreSource& model, const corpus::Dataset& dataset, const corpus::SplitView& view,
                       corpus::Split split, const EvalOptions& options) {
  return run(model, dataset, view, split, options, [&](std::span<const double> scores, const HeldOutQuery& q) {
    const std::span<const int> excluded =
        options.mask_history ? std::span<const int>(q.context) : std::span<const int>();
    return rank_full(scores, q.target, excluded);
  });
}

MetricsReport evaluate_sampled(const ScoreSource& model, const corpus::Dataset& dataset,
                               const corpus::SplitView& view, corpus::Split split, std::size_t negatives,
                               std::uint64_t seed, const EvalOptions& options) {
  std::mt19937_64 rng(seed);
  const std::size_t n_items = view.catalog->size();
  return run(model, dataset, view, split, options, [&](std::span<const double> scores, const HeldOutQuery& q) {
    const auto& seq = dataset.users[q.user].items;
    std::unordered_set<int> seen(seq.begin(), seq.end());
    std::vector<int> pool;
    for (std::size_t i = 0; i < n_items; ++i) {
      if (!seen.count(static_cast<int>(i))) pool.push_back(static_cast<int>(i));
    }
    const std::size_t take = std::min(negatives, pool.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
    }
    pool.resize(take);
    pool.push_back(q.target);
    return rank_among(scores, q.target, std::move(pool));
  });
}

MetricsReport summarize(std::span<const RankingResult> ranks, std::size_t k) {
  MetricsReport r;
  r.k = k;
  r.n_users = ranks.size();
  if (ranks.empty()) return r;
  double hr = 0.0, ndcg = 0.0;
  for (const RankingResult& x : ranks) {
    hr += hr_at_k(x.rank, k);
    ndcg += ndcg_at_k(x.rank, k);
  }
  r.hr = hr / static_cast<double>(ranks.size());
  r.ndcg = ndcg / static_cast<double>(ranks.size());
  return r;
}

std::vector<Improvement> compare(const MetricsReport& a, const MetricsReport& b) {
  if (a.domain != b.domain || a.split != b.split || a.k != b.k) {
    throw Error(ErrorCode::MismatchedReports, "cannot compare " + a.domain + "/" + a.split + "@" +
                                                  std::to_string(a.k) + " with " + b.domain + "/" + b.split + "@" +
                                                  std::to_string(b.k));
  }
  std::vector<Improvement> out;
  for (auto [name, x, y] : {std::tuple{"HR", a.hr, b.hr}, std::tuple{"NDCG", a.ndcg, b.ndcg}}) {
    if (x == 0.0) throw Error(ErrorCode::ZeroBaseline, std::string(name) + " baseline is zero");
    out.push_back({std::string(name) + "@" + std::to_string(a.k), x, y, (y - x) / x});
  }
  return out;
}

std::string format_percent(double relative) {
  char buf[64];
  double pct = relative * 100.0;
  if (std::abs(pct) < 0.005) pct = 0.0;
  std::snprintf(buf, sizeof buf, "%+.2f%%", pct);
  return buf;
}

std::string improvement_table(const MetricsReport& a, const MetricsReport& b) {
  const auto rows = compare(a, b);
  std::ostringstream out;
  const std::string la = a.run_id.empty() ? "baseline" : a.run_id;
  const std::string lb = b.run_id.empty() ? "candidate" : b.run_id;
  out << "| domain | metric | " << la << " | " << lb << " | improvement |\n";
  out << "|---|---|---|---|---|\n";
  char buf[256];
  for (const Improvement& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %s | %.4f | %.4f | %s |\n", a.domain.c_str(), r.metric.c_str(),
                  r.baseline, r.candidate, format_percent(r.relative).c_str());
    out << buf;
  }
  return out.str();
}

std::string hash_hex(std::uint64_t hash) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string csv_header() { return "run_id,domain,split,K,hr,ndcg,n_users,config_hash"; }

std::string csv_row(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%s,%zu,%.17g,%.17g,%zu,%s", r.run_id.c_str(), r.domain.c_str(),
                r.split.c_str(), r.k, r.hr, r.ndcg, r.n_users, hash_hex(r.config_hash).c_str());
  return buf;
}

void write_reports(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
  std::string text = csv_header() + "\n";
  for (const MetricsReport& r : reports) text += csv_row(r) + "\n";
  io::atomic_write(path, text);
}

std::vector<MetricsReport> read_reports(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::vector<MetricsReport> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != csv_header()) {
        throw Error(ErrorCode::MalformedRecord, path.string() + ":1: unexpected header '" + line + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 8) {
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": expected 8 columns");
    }
    try {
      MetricsReport r;
      r.run_id = cells[0];
      r.domain = cells[1];
      r.split = cells[2];
      r.k = std::stoul(cells[3]);
      r.hr = std::stod(cells[4]);
      r.ndcg = std::stod(cells[5]);
      r.n_users = std::stoul(cells[6]);
      r.config_hash = std::stoull(cells[7], nullptr, 16);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return out;
}

}  // namespace transrec::eval
