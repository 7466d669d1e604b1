#include "transrec/nn/parameters.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "transrec/error.hpp"

namespace transrec::nn {

double truncated_normal(ParameterStore::Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double x = normal(rng);
    if (x >= -2.0 && x <= 2.0) return x * stddev;
  }
}

void init_matrix(Matrix& m, Init init, ParameterStore::Rng& rng, double stddev) {
  switch (init) {
    case Init::TruncatedNormal:
      for (double& v : m.values()) v = truncated_normal(rng, stddev);
      break;
    case Init::Zeros:
      m.fill(0.0);
      break;
    case Init::Ones:
      m.fill(1.0);
      break;
    case Init::Identity:
      m.fill(0.0);
      for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) m(i, i) = 1.0;
      break;
  }
}

Parameter& ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                               Init init, Rng& rng, double stddev) {
  Matrix value(rows, cols);
  init_matrix(value, init, rng, stddev);
  return add(name, std::move(value));
}

Parameter& ParameterStore::add(const std::string& name, Matrix value) {
  if (params_.contains(name)) {
    throw std::invalid_argument("ParameterStore: duplicate tensor name '" + name + "'");
  }
  Parameter p;
  p.name = name;
  p.grad = Matrix(value.rows(), value.cols());
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Parameter& ParameterStore::at(std::string_view name) {
  auto* p = find(name);
  if (!p) throw Error(ErrorCode::IndexOutOfRange, "no tensor named '" + std::string(name) + "'");
  return *p;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw Error(ErrorCode::IndexOutOfRange, "no tensor named '" + std::string(name) + "'");
  return *p;
}

Parameter* ParameterStore::find(std::string_view name) {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : &it->second;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : &it->second;
}

void ParameterStore::erase(std::string_view name) {
  auto it = params_.find(name);
  if (it != params_.end()) params_.erase(it);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::size_t ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
  std::size_t n = 0;
  for (auto& [name, p] : params_) {
    if (name.starts_with(prefix)) {
      p.trainable = trainable;
      ++n;
    }
  }
  return n;
}

void ParameterStore::for_each(const std::function<void(Parameter&)>& fn) {
  for (auto& [_, p] : params_) fn(p);
}

void ParameterStore::for_each(const std::function<void(const Parameter&)>& fn) const {
  for (const auto& [_, p] : params_) fn(p);
}

Precision precision_from_env() {
  const char* env = std::getenv("TRANSREC_PRECISION");
  if (!env || std::string(env).empty() || std::string(env) == "f64") return Precision::F64;
  if (std::string(env) == "f32") return Precision::F32;
  throw Error(ErrorCode::ConfigInvalid,
              "TRANSREC_PRECISION must be f32 or f64, got '" + std::string(env) + "'");
}

void apply_precision(Matrix& m, Precision precision) {
  if (precision == Precision::F64) return;
  for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
}

void apply_precision(ParameterStore& store, Precision precision) {
  if (precision == Precision::F64) return;
  store.for_each([&](Parameter& p) { apply_precision(p.value, precision); });
}

}  // namespace transrec::nn
