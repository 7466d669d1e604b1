#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "transrec/pipeline/model.hpp"

namespace transrec::pipeline {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus the metadata needed to resume or transfer them.
///
/// File layout (little-endian): "TRNSRECK", u32 version, u64 config hash,
/// str stage, str domain, u64 step, u32 dtype width (4 or 8), u32 metric
/// count then (str, f64) pairs, u32 tensor count then (str name, u64 rows,
/// u64 cols) manifest entries, then row-major payloads in manifest order.
/// Strings are a u32 byte length followed by the bytes.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::string stage;
  std::string domain;
  std::uint64_t step = 0;
  std::uint32_t dtype_width = 8;
  std::map<std::string, double> metrics;
  std::map<std::string, Matrix> tensors;
};

/// Copies every parameter of `model`.
Checkpoint snapshot(const TransRecModel& model, std::string stage, std::string domain, std::uint64_t step);

/// Atomic: written to a temp file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IoFailure (with the byte offset for truncated files) and VersionUnsupported.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One line per tensor: name, dtype width, shape.
std::string manifest_text(const Checkpoint& ckpt);

struct LoadReport {
  std::vector<std::string> loaded;
  /// Model tensors absent from the checkpoint; they keep their fresh init.
  std::vector<std::string> fresh;
  /// Checkpoint tensors the model does not have.
  std::vector<std::string> ignored;
  /// Position tables whose row count differed: overlap copied, rest fresh.
  std::vector<std::string> resized;
};

/// Loads tensors by name into the model's store. Throws ConfigHashMismatch
/// unless `force_compat`, and ShapeMismatch naming the offending tensor.
LoadReport load_parameters(TransRecModel& model, const Checkpoint& ckpt, bool force_compat = false);

}  // namespace transrec::pipeline
