#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "transrec/eval.hpp"
#include "transrec/nn/ops.hpp"
#include "transrec/pipeline.hpp"
#include "transrec/synthetic.hpp"

namespace {

using namespace transrec;

nn::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

// Forward and backward through one multi-head attention block, batch 64.
void BM_SelfAttention(benchmark::State& state) {
  const std::size_t batch = 64, seq = static_cast<std::size_t>(state.range(0)), d = 32;
  const nn::Matrix qkv = random_matrix(batch * seq, 3 * d, 1);
  nn::SequenceLayout layout{batch, seq, std::vector<std::uint8_t>(batch * seq, 1)};
  const nn::AttentionOptions opt{2, state.range(1) != 0};
  for (auto _ : state) {
    nn::Tape tape;
    nn::Var x = tape.leaf(qkv);
    tape.backward(nn::sum(nn::self_attention(x, layout, opt)));
    benchmark::DoNotOptimize(tape.grad(x).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_SelfAttention)->Args({12, 0})->Args({12, 1})->Args({50, 0});

const corpus::SyntheticWorld& world() {
  static const corpus::SyntheticWorld w = [] {
    corpus::SyntheticWorldConfig c;
    c.n_source_users = 400;
    c.n_target_users = 200;
    return corpus::generate_synthetic_world(c);
  }();
  return w;
}

pipeline::TransRecModel& model() {
  static pipeline::TransRecModel m = [] {
    pipeline::TransRecModel x(pipeline::ModelConfig{});
    x.init(1);
    return x;
  }();
  return m;
}

// Inference-time embedding of the whole 200-item mixed catalog.
void BM_EmbedCatalog(benchmark::State& state) {
  const auto& catalog = *world().source.dataset.catalog;
  for (auto _ : state) benchmark::DoNotOptimize(model().item_embeddings(catalog).data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(catalog.size()));
}
BENCHMARK(BM_EmbedCatalog)->Unit(benchmark::kMillisecond);

// Full-catalog scoring and ranking of every test user.
void BM_FullRankingEvaluation(benchmark::State& state) {
  const auto& ds = world().source.dataset;
  const auto view = corpus::leave_one_out_split(ds);
  for (auto _ : state) {
    const auto r = eval::evaluate(model(), ds, view, corpus::Split::Test);
    benchmark::DoNotOptimize(r.hr);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(view.users.size()));
}
BENCHMARK(BM_FullRankingEvaluation)->Unit(benchmark::kMillisecond);

void BM_RankFull(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const nn::Matrix scores = random_matrix(1, n, 3);
  int target = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::rank_full(scores.values(), target));
    target = (target + 7) % static_cast<int>(n);
  }
}
BENCHMARK(BM_RankFull)->Arg(200)->Arg(50000);

// One contrastive training epoch over the 400-user source.
void BM_TrainEpoch(benchmark::State& state) {
  const auto& ds = world().source.dataset;
  pipeline::TrainConfig cfg;
  cfg.max_epochs = 1;
  for (auto _ : state) {
    pipeline::TransRecModel m(pipeline::ModelConfig{});
    benchmark::DoNotOptimize(pipeline::train_end_to_end(m, ds, cfg).steps);
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
