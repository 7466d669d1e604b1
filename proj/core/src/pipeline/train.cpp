#include "transrec/pipeline/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "transrec/error.hpp"
#include "transrec/io.hpp"
#include "transrec/log.hpp"
#include "transrec/objectives.hpp"

namespace transrec::pipeline {

void Adam::step(ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  store.for_each([&](nn::Parameter& p) {
    if (!p.trainable || p.grad.empty()) return;
    Moments& mo = moments_[p.name];
    if (mo.m.empty()) {
      mo.m = Matrix(p.value.rows(), p.value.cols());
      mo.v = Matrix(p.value.rows(), p.value.cols());
    }
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = mo.m.data();
    double* v = mo.v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  });
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  store.for_each([&](const nn::Parameter& p) {
    if (!p.trainable || p.grad.empty()) return;
    for (double g : p.grad.values()) sq += g * g;
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    store.for_each([&](nn::Parameter& p) {
      if (!p.trainable || p.grad.empty()) return;
      for (double& g : p.grad.values()) g *= s;
    });
  }
  return norm;
}

std::string to_string(Stage s) { return s == Stage::UserPretrain ? "user_pretrain" : "end_to_end"; }

std::string to_string(TransferMode m) {
  switch (m) {
    case TransferMode::Scratch: return "scratch";
    case TransferMode::FinetuneFull: return "finetune";
    case TransferMode::FrozenFeatures: return "frozen";
  }
  return "?";
}

TransferMode transfer_mode_from_string(const std::string& s) {
  if (s == "scratch") return TransferMode::Scratch;
  if (s == "finetune") return TransferMode::FinetuneFull;
  if (s == "frozen") return TransferMode::FrozenFeatures;
  throw Error(ErrorCode::ConfigInvalid, "mode: expected scratch|finetune|frozen, got '" + s + "'");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& f, const std::string& why) {
    throw Error(ErrorCode::ConfigInvalid, "train." + f + ": " + why);
  };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate", "must be finite and >= 0");
  if (batch_size == 0) bad("batch_size", "must be positive");
  if (patience == 0) bad("patience", "must be positive");
  if (cpc_targets == 0) bad("cpc_targets", "must be positive");
  if (negatives == 0) bad("negatives", "must be positive");
  if (!(clip_norm >= 0.0)) bad("clip_norm", "must be >= 0");
  if (eval_k == 0) bad("eval_k", "must be positive");
  if (freeze_items && stage != Stage::UserPretrain) bad("freeze_items", "only applies to user pretraining");
}

std::string history_header() { return "epoch,split,loss,hr@10,ndcg@10"; }

namespace {

const std::string* first_non_finite(const ParameterStore& store, bool grads) {
  const std::string* bad = nullptr;
  store.for_each([&](const nn::Parameter& p) {
    if (bad) return;
    const Matrix& m = grads ? p.grad : p.value;
    for (double v : m.values()) {
      if (!std::isfinite(v)) {
        bad = &p.name;
        return;
      }
    }
  });
  return bad;
}

class Fitter {
 public:
  Fitter(TransRecModel& model, const corpus::Dataset& ds, const TrainConfig& cfg, bool freeze_items)
      : model_(model),
        ds_(ds),
        cfg_(cfg),
        freeze_(freeze_items),
        view_(corpus::leave_one_out_split(ds)),
        rng_(cfg.seed * 0x9E3779B97F4A7C15ULL + 0x5EED),
        dropout_rng_(cfg.seed ^ 0xD809D809ULL) {}

  TrainResult run(const std::string& stage_tag, LoadReport load) {
    const auto& catalog = *ds_.catalog;
    for (std::size_t k = 0; k < view_.users.size(); ++k) {
      if (view_.users[k].train.size() >= 2) eligible_.push_back(k);
    }
    if (eligible_.empty()) {
      throw Error(ErrorCode::DataTooSmall, ds_.domain_name + ": no user has two training interactions");
    }
    if (cfg_.stage == Stage::EndToEnd && catalog.size() < ds_.max_seq_len + cfg_.negatives) {
      throw Error(ErrorCode::DataTooSmall, ds_.domain_name + ": catalog of " + std::to_string(catalog.size()) +
                                               " items cannot supply " + std::to_string(cfg_.negatives) +
                                               " negatives per user");
    }
    if (cfg_.stage == Stage::UserPretrain) {
      if (model_.config().uep_vocab != catalog.size()) {
        throw Error(ErrorCode::ShapeMismatch, "uep_head: sized for " + std::to_string(model_.config().uep_vocab) +
                                                  " items, source catalog has " + std::to_string(catalog.size()));
      }
      model_.set_score_mode(ScoreMode::UepHead);
    } else {
      model_.set_score_mode(ScoreMode::TwoTower);
    }
    auto& store = model_.params();
    precision_ = nn::precision_from_env();
    nn::apply_precision(store, precision_);
    if (freeze_) {
      store.set_trainable(encoders::kItemEncoderPrefix, false);
      cache_ = model_.item_embeddings(catalog, false);
    }

    TrainResult result;
    result.load = std::move(load);
    eval::EvalOptions eopt;
    eopt.k = cfg_.eval_k;
    eopt.run_id = cfg_.run_id;
    auto valid = eval::evaluate(model_, ds_, view_, corpus::Split::Valid, eopt);
    result.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), valid.hr, valid.ndcg});
    result.best_valid_hr = valid.hr;
    result.best = snapshot(model_, stage_tag, ds_.domain_name, 0);
    set_metrics(result.best, 0, valid);
    write_history(result.history);

    Adam adam(cfg_.learning_rate);
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
      std::shuffle(eligible_.begin(), eligible_.end(), rng_);
      double loss_sum = 0.0, loss_count = 0.0;
      for (std::size_t lo = 0; lo < eligible_.size(); lo += cfg_.batch_size) {
        const std::size_t hi = std::min(eligible_.size(), lo + cfg_.batch_size);
        const std::span<const std::size_t> batch(eligible_.data() + lo, hi - lo);
        store.zero_grad();
        Tape tape(true);
        double raw = 0.0, units = 0.0;
        Var loss = cfg_.stage == Stage::UserPretrain ? uep_batch(tape, batch, raw, units)
                                                     : cpc_batch(tape, batch, raw, units);
        if (!std::isfinite(loss.value()(0, 0))) {
          const std::string* p = first_non_finite(store, false);
          throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                                   std::to_string(adam.steps() + 1) +
                                                   (p ? "; parameter '" + *p + "' holds NaN/Inf" : std::string()));
        }
        tape.backward(loss);
        if (const std::string* g = first_non_finite(store, true)) {
          throw Error(ErrorCode::DivergedLoss, "non-finite gradient for '" + *g + "' at epoch " +
                                                   std::to_string(epoch));
        }
        clip_grad_norm(store, cfg_.clip_norm);
        adam.step(store);
        nn::apply_precision(store, precision_);
        if (const std::string* p = first_non_finite(store, false)) {
          throw Error(ErrorCode::DivergedLoss, "parameter '" + *p + "' became non-finite at epoch " +
                                                   std::to_string(epoch));
        }
        loss_sum += raw;
        loss_count += units;
      }
      valid = eval::evaluate(model_, ds_, view_, corpus::Split::Valid, eopt);
      const double mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
      result.history.push_back({epoch, mean_loss, valid.hr, valid.ndcg});
      write_history(result.history);
      log::debug("epoch " + std::to_string(epoch) + " loss " + std::to_string(mean_loss) + " valid hr " +
                 std::to_string(valid.hr));
      if (valid.hr > result.best_valid_hr) {
        result.best_valid_hr = valid.hr;
        result.best_epoch = epoch;
        result.best = snapshot(model_, stage_tag, ds_.domain_name, adam.steps());
        set_metrics(result.best, epoch, valid);
        since_best = 0;
      } else if (++since_best >= cfg_.patience) {
        break;
      }
    }
    result.steps = adam.steps();
    for (const auto& [name, m] : result.best.tensors) store.at(name).value = m;
    store.zero_grad();
    return result;
  }

 private:
  void set_metrics(Checkpoint& c, std::size_t epoch, const eval::MetricsReport& r) const {
    c.metrics["epoch"] = static_cast<double>(epoch);
    c.metrics["valid_hr@" + std::to_string(r.k)] = r.hr;
    c.metrics["valid_ndcg@" + std::to_string(r.k)] = r.ndcg;
  }

  void write_history(const std::vector<EpochRecord>& history) const {
    if (cfg_.history_path.empty()) return;
    std::ostringstream s;
    s.precision(10);
    s << history_header() << "\n";
    for (const EpochRecord& e : history) {
      if (e.epoch == 0) continue;
      s << e.epoch << ",train," << e.train_loss << ",,\n";
      s << e.epoch << ",valid,," << e.valid_hr << "," << e.valid_ndcg << "\n";
    }
    io::atomic_write(cfg_.history_path, s.str());
  }

  // Encodes every distinct item of the batch once; slot_of maps catalog
  // index to its row in the returned block.
  Var encode_unique(Tape& tape, std::vector<int> items) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    slot_of_.assign(ds_.catalog->size(), -1);
    for (std::size_t i = 0; i < items.size(); ++i) slot_of_[static_cast<std::size_t>(items[i])] = static_cast<int>(i);
    return model_.item_rows(tape, *ds_.catalog, items, freeze_, cache_ ? &*cache_ : nullptr, &dropout_rng_);
  }

  std::vector<const corpus::FeatureMap*> feature_rows(std::span<const std::size_t> batch) const {
    std::vector<const corpus::FeatureMap*> rows;
    for (std::size_t k : batch) rows.push_back(&ds_.users[view_.users[k].user].user_features);
    return rows;
  }

  Var cpc_batch(Tape& tape, std::span<const std::size_t> batch, double& raw, double& units) {
    std::vector<objectives::ContextTarget> parts;
    std::vector<std::vector<int>> negatives;
    std::vector<int> all;
    for (std::size_t k : batch) {
      const auto& train = view_.users[k].train;
      const std::size_t l = std::min(cfg_.cpc_targets, train.size() - 1);
      parts.push_back(objectives::split_context_target(train, l));
      negatives.push_back(objectives::sample_negatives(ds_.users[view_.users[k].user].items, ds_.catalog->size(),
                                                       cfg_.negatives, rng_));
      all.insert(all.end(), train.begin(), train.end());
      all.insert(all.end(), negatives.back().begin(), negatives.back().end());
    }
    Var items = encode_unique(tape, std::move(all));
    std::vector<std::span<const int>> contexts;
    for (const auto& p : parts) contexts.emplace_back(p.context);
    const SequenceBlock block = sequence_block(contexts, slot_of_);
    const nn::Binder bind{tape, model_.params(), false};
    Var x = nn::gather_rows(items, block.rows);
    Var users = model_.users().represent(bind, x, block.layout, false, feature_rows(batch), &dropout_rng_);
    std::vector<int> pu, pi, nu, ni;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (int t : parts[b].target) {
        pu.push_back(static_cast<int>(b));
        pi.push_back(slot_of_[static_cast<std::size_t>(t)]);
      }
      for (int n : negatives[b]) {
        nu.push_back(static_cast<int>(b));
        ni.push_back(slot_of_[static_cast<std::size_t>(n)]);
      }
    }
    Var pos = nn::dot_rows(nn::gather_rows(users, pu), nn::gather_rows(items, pi));
    Var neg = nn::dot_rows(nn::gather_rows(users, nu), nn::gather_rows(items, ni));
    Var loss = objectives::cpc_loss(pos, neg);
    raw = loss.value()(0, 0);
    units = static_cast<double>(batch.size());
    return nn::scale(loss, 1.0 / static_cast<double>(batch.size()));
  }

  Var uep_batch(Tape& tape, std::span<const std::size_t> batch, double& raw, double& units) {
    std::vector<std::span<const int>> inputs;
    std::vector<int> all;
    for (std::size_t k : batch) {
      const auto& train = view_.users[k].train;
      inputs.emplace_back(train.data(), train.size() - 1);
      all.insert(all.end(), train.begin(), train.end() - 1);
    }
    Var items = encode_unique(tape, std::move(all));
    const SequenceBlock block = sequence_block(inputs, slot_of_);
    const nn::Binder bind{tape, model_.params(), false};
    Var x = nn::gather_rows(items, block.rows);
    const auto& users = model_.users();
    Var h = users.encode(bind, users.add_positions(bind, x, block.layout), block.layout, true, &dropout_rng_);
    std::vector<int> rows, labels;
    const std::size_t S = block.layout.seq;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& train = view_.users[batch[b]].train;
      for (std::size_t t = 0; t + 1 < train.size(); ++t) {
        rows.push_back(static_cast<int>(b * S + t));
        labels.push_back(train[t + 1]);
      }
    }
    Var loss = objectives::uep_loss(bind, nn::gather_rows(h, rows), labels, model_.config().uep_relu);
    raw = loss.value()(0, 0);
    units = static_cast<double>(labels.size());
    return nn::scale(loss, 1.0 / static_cast<double>(batch.size()));
  }

  TransRecModel& model_;
  const corpus::Dataset& ds_;
  const TrainConfig& cfg_;
  bool freeze_;
  corpus::SplitView view_;
  std::mt19937_64 rng_;
  std::mt19937_64 dropout_rng_;
  std::vector<std::size_t> eligible_;
  std::vector<int> slot_of_;
  std::optional<Matrix> cache_;
  nn::Precision precision_ = nn::Precision::F64;
};

}  // namespace

TrainResult pretrain_user_encoder(TransRecModel& model, const corpus::Dataset& source, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::UserPretrain) {
    throw Error(ErrorCode::ConfigInvalid, "train.stage: user pretraining needs stage user_pretrain");
  }
  model.init(cfg.seed);
  return Fitter(model, source, cfg, cfg.freeze_items).run(to_string(Stage::UserPretrain), {});
}

TrainResult train_end_to_end(TransRecModel& model, const corpus::Dataset& source, const TrainConfig& cfg,
                             const Checkpoint* init) {
  cfg.validate();
  if (cfg.stage != Stage::EndToEnd) {
    throw Error(ErrorCode::ConfigInvalid, "train.stage: end-to-end training needs stage end_to_end");
  }
  model.init(cfg.seed);
  LoadReport load;
  if (init) load = load_parameters(model, *init, cfg.force_compat);
  return Fitter(model, source, cfg, false).run(to_string(Stage::EndToEnd), std::move(load));
}

TrainResult adapt_to_target(TransRecModel& model, const corpus::Dataset& target, TransferMode mode,
                            const TrainConfig& cfg, const Checkpoint* pretrained) {
  cfg.validate();
  if (cfg.stage != Stage::EndToEnd) {
    throw Error(ErrorCode::ConfigInvalid, "train.stage: adaptation trains with stage end_to_end");
  }
  model.init(cfg.seed);
  LoadReport load;
  if (mode == TransferMode::Scratch) {
    if (pretrained) log::warn("adapt: scratch mode ignores the supplied checkpoint");
  } else {
    if (!pretrained) {
      throw Error(ErrorCode::MissingCheckpoint, "mode " + to_string(mode) + " needs --from-checkpoint");
    }
    load = load_parameters(model, *pretrained, cfg.force_compat);
    for (const std::string& name : load.fresh) log::info("adapt: '" + name + "' not in checkpoint, freshly initialised");
  }
  return Fitter(model, target, cfg, mode == TransferMode::FrozenFeatures).run("adapt_" + to_string(mode),
                                                                                std::move(load));
}

}  // namespace transrec::pipeline
