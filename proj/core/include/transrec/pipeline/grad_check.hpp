#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transrec/nn/layers.hpp"

namespace transrec::pipeline {

/// Builds a scalar loss on `tape` from parameters bound out of `store`.
using LossFn = std::function<nn::Var(nn::Tape& tape, nn::ParameterStore& store)>;

struct GradCheckReport {
  std::string fragment;
  std::size_t n_params = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// near-zero gradients from amplifying finite-difference round-off.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// 64-bit precision (ConfigInvalid otherwise). The relative-error floor is
/// 1e-6 * max(1, |loss|). Never throws on tolerance.
GradCheckReport check_gradients(nn::ParameterStore& store, const LossFn& loss, double eps = 1e-5);

/// check_gradients that throws ToleranceExceeded naming the worst tensor.
GradCheckReport grad_check(nn::ParameterStore& store, const LossFn& loss, double eps = 1e-5,
                           double tolerance = 1e-4, const std::string& fragment = "");

struct GradCheckFragment {
  std::string name;
  nn::ParameterStore store;
  LossFn loss;
};

/// Small (< 2k scalar) instances of every differentiable component: text
/// encoder, image encoder, user encoder under both masks, the next-item
/// softmax loss and the contrastive loss through a user tower.
std::vector<GradCheckFragment> standard_fragments(std::uint64_t seed);

}  // namespace transrec::pipeline
