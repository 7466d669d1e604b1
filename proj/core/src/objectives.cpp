#include "transrec/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "transrec/error.hpp"

namespace transrec::objectives {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t vocab) {
  if (labels.size() != rows) {
    throw Error(ErrorCode::DimMismatch, std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                                            " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= vocab) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " outside [0, " +
                                                  std::to_string(vocab) + ")");
    }
  }
}

// Row-wise log-softmax into `out`; returns the summed loss.
double log_softmax_ce(const Matrix& z, std::span<const int> labels, Matrix* probs) {
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    loss += lse - row[static_cast<std::size_t>(labels[r])];
    if (probs) {
      for (std::size_t c = 0; c < z.cols(); ++c) (*probs)(r, c) = std::exp(row[c] - lse);
    }
  }
  return loss;
}

}  // namespace

ContextTarget split_context_target(std::span<const int> seq, std::size_t l) {
  if (l == 0 || seq.size() < l + 1) {
    throw Error(ErrorCode::SequenceTooShort, "sequence of " + std::to_string(seq.size()) +
                                                 " items cannot hold a context and " + std::to_string(l) +
                                                 " targets");
  }
  const auto cut = static_cast<std::ptrdiff_t>(seq.size() - l);
  return {{seq.begin(), seq.begin() + cut}, {seq.begin() + cut, seq.end()}};
}

std::vector<int> sample_negatives(std::span<const int> user_seq, std::size_t catalog_size, std::size_t j,
                                  std::mt19937_64& rng) {
  const std::unordered_set<int> own(user_seq.begin(), user_seq.end());
  std::vector<int> eligible;
  eligible.reserve(catalog_size);
  for (std::size_t i = 0; i < catalog_size; ++i) {
    if (!own.count(static_cast<int>(i))) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.size() < j) {
    throw Error(ErrorCode::CatalogExhausted, "need " + std::to_string(j) + " negatives, only " +
                                                 std::to_string(eligible.size()) + " eligible items");
  }
  for (std::size_t k = 0; k < j; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
    std::swap(eligible[k], eligible[pick(rng)]);
  }
  eligible.resize(j);
  return eligible;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  check_labels(labels, z.rows(), z.cols());
  Matrix probs(z.rows(), z.cols());
  const double loss = log_softmax_ce(z, labels, &probs);
  std::vector<int> y(labels.begin(), labels.end());
  Tape& t = *logits.tape;
  const int id = static_cast<int>(t.size());
  return t.record(Matrix(1, 1, loss), {logits}, [&t, id, logits, probs = std::move(probs), y = std::move(y)]() {
    const double g = t.grad(Var{&t, id})(0, 0);
    Matrix& gz = t.grad(logits);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      for (std::size_t c = 0; c < probs.cols(); ++c) gz(r, c) += g * probs(r, c);
      gz(r, static_cast<std::size_t>(y[r])) -= g;
    }
  });
}

void add_uep_head(nn::ParameterStore& store, std::size_t d, std::size_t vocab, nn::ParameterStore::Rng& rng) {
  nn::add_linear(store, kUepHeadPrefix, d, vocab, rng);
}

Var uep_logits(const nn::Binder& bind, Var hidden) { return nn::linear(bind, kUepHeadPrefix, hidden); }

Var uep_loss(const nn::Binder& bind, Var hidden, std::span<const int> labels, bool relu) {
  Var z = uep_logits(bind, hidden);
  if (relu) z = nn::relu(z);
  return softmax_cross_entropy(z, labels);
}

Var cpc_loss(Var pos_scores, Var neg_scores) {
  const Matrix& p = pos_scores.value();
  const Matrix& n = neg_scores.value();
  const double loss = cpc_loss_value(p.values(), n.values());
  Tape& t = *pos_scores.tape;
  const int id = static_cast<int>(t.size());
  return t.record(Matrix(1, 1, loss), {pos_scores, neg_scores}, [&t, id, pos_scores, neg_scores]() {
    const double g = t.grad(Var{&t, id})(0, 0);
    if (pos_scores.requires_grad()) {
      const Matrix& pv = pos_scores.value();
      Matrix& gp = t.grad(pos_scores);
      for (std::size_t i = 0; i < pv.size(); ++i) gp.data()[i] += g * (sigmoid(pv.data()[i]) - 1.0);
    }
    if (neg_scores.requires_grad()) {
      const Matrix& nv = neg_scores.value();
      Matrix& gn = t.grad(neg_scores);
      for (std::size_t i = 0; i < nv.size(); ++i) gn.data()[i] += g * sigmoid(nv.data()[i]);
    }
  });
}

double log_sigmoid(double x) { return -softplus(-x); }

double cpc_loss_value(std::span<const double> pos, std::span<const double> neg) {
  double loss = 0.0;
  for (double r : pos) loss += softplus(-r);
  for (double r : neg) loss += softplus(r);
  return loss;
}

double uep_loss_value(const Matrix& hidden, const Matrix& w, const Matrix& b, std::span<const int> labels,
                      bool relu) {
  if (hidden.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw Error(ErrorCode::DimMismatch, "softmax head does not match hidden width");
  }
  check_labels(labels, hidden.rows(), w.cols());
  Matrix z(hidden.rows(), w.cols());
  nn::gemm_acc(hidden, w, z);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) {
      z(r, c) += b(0, c);
      if (relu) z(r, c) = std::max(z(r, c), 0.0);
    }
  }
  return log_softmax_ce(z, labels, nullptr);
}

}  // namespace transrec::objectives
