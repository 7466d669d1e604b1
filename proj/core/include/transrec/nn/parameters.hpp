#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "transrec/nn/matrix.hpp"

namespace transrec::nn {

enum class Init { TruncatedNormal, Zeros, Ones, Identity };

/// Default init scale for embeddings and linear weights.
inline constexpr double kInitStd = 0.02;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

/// Named tensor store. Iteration order is lexicographic by name, so any loop
/// over the store (optimizer, checkpoint, grad-check) is deterministic.
class ParameterStore {
 public:
  using Rng = std::mt19937_64;

  Parameter& add(const std::string& name, std::size_t rows, std::size_t cols, Init init,
                 Rng& rng, double stddev = kInitStd);
  /// Adds a tensor with explicit values (checkpoint load, tests).
  Parameter& add(const std::string& name, Matrix value);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  void erase(std::string_view name);

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;

  void zero_grad();
  /// Marks every tensor whose name starts with `prefix` as (non-)trainable.
  std::size_t set_trainable(std::string_view prefix, bool trainable);

  void for_each(const std::function<void(Parameter&)>& fn);
  void for_each(const std::function<void(const Parameter&)>& fn) const;

 private:
  std::map<std::string, Parameter, std::less<>> params_;
};

/// Truncated normal at two standard deviations.
double truncated_normal(ParameterStore::Rng& rng, double stddev);
void init_matrix(Matrix& m, Init init, ParameterStore::Rng& rng, double stddev = kInitStd);

enum class Precision { F64, F32 };

/// Reads TRANSREC_PRECISION (f32|f64, default f64).
Precision precision_from_env();
/// Rounds every value to the nearest float when precision is F32. Storage-width
/// emulation: arithmetic stays in double, parameters stay float-representable.
void apply_precision(Matrix& m, Precision precision);
void apply_precision(ParameterStore& store, Precision precision);

}  // namespace transrec::nn
