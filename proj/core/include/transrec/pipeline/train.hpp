#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/pipeline/checkpoint.hpp"
#include "transrec/pipeline/model.hpp"

namespace transrec::pipeline {

/// Adam with bias correction. Moments are keyed by parameter name; frozen
/// (non-trainable) tensors are skipped.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParameterStore& store);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Scales trainable gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

enum class Stage { UserPretrain, EndToEnd };
enum class TransferMode { Scratch, FinetuneFull, FrozenFeatures };

std::string to_string(Stage s);
std::string to_string(TransferMode m);
/// Accepts scratch | finetune | frozen. Throws ConfigInvalid.
TransferMode transfer_mode_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::EndToEnd;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 20;
  /// Epochs without a validation HR improvement before stopping.
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  /// CPC target length l and negatives per user j.
  std::size_t cpc_targets = 2;
  std::size_t negatives = 4;
  double clip_norm = 5.0;
  std::size_t eval_k = 10;
  /// Stage 1 only: keep the item encoders fixed while pretraining.
  bool freeze_items = false;
  bool force_compat = false;
  /// When set, per-epoch rows are appended here (rewritten atomically).
  std::filesystem::path history_path;
  std::string run_id;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per user (stage 2) or per labelled position (stage 1)
  double valid_hr = 0.0;
  double valid_ndcg = 0.0;
};

struct TrainResult {
  /// Best-validation parameters; the model holds the same values on return.
  Checkpoint best;
  std::size_t best_epoch = 0;
  double best_valid_hr = 0.0;
  /// Epoch 0 is the evaluation before any update.
  std::vector<EpochRecord> history;
  LoadReport load;
  std::uint64_t steps = 0;
};

/// Stage 1: next-item softmax objective under a causal user mask. The model
/// needs a head sized to the source catalog. Throws DataTooSmall, DivergedLoss.
TrainResult pretrain_user_encoder(TransRecModel& model, const corpus::Dataset& source, const TrainConfig& cfg);

/// Stage 2: contrastive objective over context/target splits with sampled
/// negatives and a bidirectional mask, optionally starting from `init`.
TrainResult train_end_to_end(TransRecModel& model, const corpus::Dataset& source, const TrainConfig& cfg,
                             const Checkpoint* init = nullptr);

/// Target-domain training. Scratch ignores `pretrained`; the other modes
/// require it (MissingCheckpoint). FrozenFeatures fixes every item_encoder.*
/// tensor and trains the rest.
TrainResult adapt_to_target(TransRecModel& model, const corpus::Dataset& target, TransferMode mode,
                            const TrainConfig& cfg, const Checkpoint* pretrained);

/// Columns of the per-epoch history file.
std::string history_header();

}  // namespace transrec::pipeline
