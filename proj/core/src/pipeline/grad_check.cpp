#include "transrec/pipeline/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "transrec/encoders.hpp"
#include "transrec/error.hpp"
#include "transrec/objectives.hpp"
#include "transrec/user_model.hpp"

namespace transrec::pipeline {

using nn::Matrix;
using nn::ParameterStore;
using nn::Tape;
using nn::Var;

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckReport check_gradients(ParameterStore& store, const LossFn& loss, double eps) {
  if (nn::precision_from_env() != nn::Precision::F64) {
    throw Error(ErrorCode::ConfigInvalid, "grad-check needs TRANSREC_PRECISION=f64");
  }
  store.zero_grad();
  {
    Tape tape(true);
    tape.backward(loss(tape, store));
  }
  std::map<std::string, Matrix> analytic;
  store.for_each([&](const nn::Parameter& p) {
    if (p.trainable) analytic.emplace(p.name, p.grad);
  });
  auto value = [&] {
    Tape tape(false);
    return loss(tape, store).value()(0, 0);
  };
  // Roundoff in the central difference grows with |loss|, so the floor does too.
  const double floor = 1e-5 * std::max(1.0, std::abs(value()));
  GradCheckReport report;
  for (auto& [name, grad] : analytic) {
    Matrix& w = store.at(name).value;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + eps;
      const double up = value();
      w.data()[i] = orig - eps;
      const double down = value();
      w.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad.data()[i];
      const double err = relative_error(a, numeric, floor);
      ++report.n_params;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(ParameterStore& store, const LossFn& loss, double eps, double tolerance,
                           const std::string& fragment) {
  GradCheckReport r = check_gradients(store, loss, eps);
  r.fragment = fragment;
  if (r.max_rel_error >= tolerance) {
    throw Error(ErrorCode::ToleranceExceeded,
                (fragment.empty() ? std::string() : fragment + ": ") + "'" + r.worst_param + "'[" +
                    std::to_string(r.worst_index) + "] relative error " + std::to_string(r.max_rel_error) +
                    " (analytic " + std::to_string(r.analytic) + ", numeric " + std::to_string(r.numeric) + ")");
  }
  return r;
}

namespace {

// Moves every tensor away from its structured init (ones, zeros, identity)
// so the check exercises generic values.
void spread(ParameterStore& store, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  store.for_each([&](nn::Parameter& p) {
    for (double& v : p.value.values()) v += n(rng);
  });
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

// Scalar probe of a matrix-valued output: sum(out .* weights).
Var probe(Tape& tape, Var out, const Matrix& weights) { return nn::sum(nn::dot_rows(out, tape.constant(weights))); }

GradCheckFragment text_fragment(std::mt19937_64& rng) {
  encoders::ItemTowerConfig cfg;
  cfg.d_model = 8;
  cfg.vision_enabled = false;
  cfg.text = {12, 5, 8, 1, 2, 2, 0.0};
  auto tower = std::make_shared<encoders::ItemTower>(cfg);
  GradCheckFragment f{"text_encoder", {}, {}};
  tower->init(f.store, rng);
  spread(f.store, rng, 0.3);
  auto tokens = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{3, 1, 4, 1}, {5, 9}, {2, 6, 5, 3, 5}});
  const Matrix w = random_matrix(tokens->size(), 8, rng);
  f.loss = [tower, tokens, w](Tape& tape, ParameterStore& store) {
    std::vector<std::span<const int>> lists(tokens->begin(), tokens->end());
    return probe(tape, tower->encode_text(nn::Binder{tape, store, false}, lists), w);
  };
  return f;
}

GradCheckFragment image_fragment(std::mt19937_64& rng) {
  encoders::ItemTowerConfig cfg;
  cfg.d_model = 8;
  cfg.text_enabled = false;
  cfg.vision = {3, 6, 6, {{4, 1}, {6, 2}}, {8, 8}};
  auto tower = std::make_shared<encoders::ItemTower>(cfg);
  GradCheckFragment f{"image_encoder", {}, {}};
  tower->init(f.store, rng);
  spread(f.store, rng, 0.1);
  const corpus::ImageShape shape{3, 6, 6};
  auto images = std::make_shared<std::vector<std::vector<std::uint8_t>>>(2, std::vector<std::uint8_t>(shape.pixels()));
  std::uniform_int_distribution<int> px(0, 255);
  for (auto& img : *images) {
    for (auto& p : img) p = static_cast<std::uint8_t>(px(rng));
  }
  const Matrix w = random_matrix(images->size(), 8, rng);
  f.loss = [tower, images, w, shape](Tape& tape, ParameterStore& store) {
    std::vector<std::span<const std::uint8_t>> views(images->begin(), images->end());
    return probe(tape, tower->encode_image(nn::Binder{tape, store, false}, views, shape), w);
  };
  return f;
}

GradCheckFragment user_fragment(std::mt19937_64& rng, bool causal) {
  user_model::UserEncoderConfig cfg{8, 2, 2, 2, 6, causal, 0.0};
  auto tower = std::make_shared<user_model::UserTower>(cfg);
  GradCheckFragment f{causal ? "user_encoder_causal" : "user_encoder_bidirectional", {}, {}};
  tower->init(f.store, rng);
  f.store.add("fragment.items", random_matrix(2 * 5, 8, rng));
  spread(f.store, rng, 0.3);
  const std::vector<std::size_t> lengths{5, 3};
  const nn::SequenceLayout layout = user_model::padded_layout(lengths);
  const Matrix wh = random_matrix(10, 8, rng), ws = random_matrix(2, 8, rng);
  f.loss = [tower, layout, wh, ws, causal](Tape& tape, ParameterStore& store) {
    const nn::Binder bind{tape, store, false};
    Var x = tower->add_positions(bind, bind("fragment.items"), layout);
    Var h = tower->encode(bind, x, layout, causal);
    return nn::add(probe(tape, h, wh), probe(tape, tower->summarize(h, layout), ws));
  };
  return f;
}

GradCheckFragment uep_fragment(std::mt19937_64& rng) {
  GradCheckFragment f{"uep_loss", {}, {}};
  objectives::add_uep_head(f.store, 8, 20, rng);
  f.store.add("fragment.hidden", random_matrix(6, 8, rng));
  spread(f.store, rng, 0.3);
  std::uniform_int_distribution<int> label(0, 19);
  std::vector<int> labels(6);
  for (int& y : labels) y = label(rng);
  f.loss = [labels](Tape& tape, ParameterStore& store) {
    const nn::Binder bind{tape, store, false};
    return objectives::uep_loss(bind, bind("fragment.hidden"), labels, true);
  };
  return f;
}

GradCheckFragment cpc_fragment(std::mt19937_64& rng) {
  user_model::UserEncoderConfig cfg{8, 2, 2, 2, 6, false, 0.0};
  auto tower = std::make_shared<user_model::UserTower>(cfg);
  GradCheckFragment f{"cpc_loss", {}, {}};
  tower->init(f.store, rng);
  f.store.add("fragment.item_table", random_matrix(20, 8, rng));
  spread(f.store, rng, 0.3);
  const std::vector<std::vector<int>> seqs{{1, 4, 7, 9, 2}, {3, 5, 11}, {0, 6, 8, 12}};
  std::vector<std::vector<int>> contexts;
  std::vector<int> pu, pi, nu, ni;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto ct = objectives::split_context_target(seqs[b], 2);
    contexts.push_back(ct.context);
    for (int t : ct.target) {
      pu.push_back(static_cast<int>(b));
      pi.push_back(t);
    }
    for (int n : objectives::sample_negatives(seqs[b], 20, 3, rng)) {
      nu.push_back(static_cast<int>(b));
      ni.push_back(n);
    }
  }
  std::vector<std::size_t> lengths;
  std::vector<int> rows;
  for (const auto& c : contexts) lengths.push_back(c.size());
  const nn::SequenceLayout layout = user_model::padded_layout(lengths);
  rows.assign(layout.batch * layout.seq, -1);
  for (std::size_t b = 0; b < contexts.size(); ++b) {
    for (std::size_t t = 0; t < contexts[b].size(); ++t) rows[b * layout.seq + t] = contexts[b][t];
  }
  f.loss = [tower, layout, rows, pu, pi, nu, ni](Tape& tape, ParameterStore& store) {
    const nn::Binder bind{tape, store, false};
    Var table = bind("fragment.item_table");
    Var u = tower->represent(bind, nn::gather_rows(table, rows), layout, false, {});
    Var pos = nn::dot_rows(nn::gather_rows(u, pu), nn::gather_rows(table, pi));
    Var neg = nn::dot_rows(nn::gather_rows(u, nu), nn::gather_rows(table, ni));
    return objectives::cpc_loss(pos, neg);
  };
  return f;
}

}  // namespace

std::vector<GradCheckFragment> standard_fragments(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckFragment> out;
  out.push_back(text_fragment(rng));
  out.push_back(image_fragment(rng));
  out.push_back(user_fragment(rng, true));
  out.push_back(user_fragment(rng, false));
  out.push_back(uep_fragment(rng));
  out.push_back(cpc_fragment(rng));
  return out;
}

}  // namespace transrec::pipeline
