#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transrec/corpus.hpp"
#include "transrec/nn/matrix.hpp"

namespace transrec::corpus {

/// Latent-factor world used to exercise transfer at desk scale. Every item
/// has a latent vector z; its text or pixels are a fixed rendering of z that
/// is shared by all domains. Users hold a taste vector and sample their
/// streams from softmax(taste . z / (sqrt(latent_dim) * noise_temperature)).
struct SyntheticWorldConfig {
  std::size_t n_source_users = 2000;
  std::size_t n_target_users = 1000;
  std::size_t n_source_items = 200;
  std::size_t n_target_items = 200;
  std::size_t latent_dim = 8;
  std::size_t text_vocab = 64;
  std::size_t text_len = 8;
  ImageShape image_shape{3, 8, 8};
  /// Image shape of the shifted vision target.
  ImageShape shifted_image_shape{3, 12, 12};
  /// Probability that an interaction in a mixed stream is a vision item.
  double modality_mix = 0.5;
  double noise_temperature = 0.35;
  std::size_t min_seq_len = 5;
  std::size_t max_gen_len = 14;
  /// Truncation applied to the generated datasets.
  std::size_t max_seq_len = 12;
  double pixel_noise = 8.0;
  std::uint64_t seed = 7;

  /// Throws ConfigInvalid naming the first bad field.
  void validate() const;
};

/// Ground-truth latents of one generated domain.
struct DomainOracle {
  nn::Matrix user_latents;  // users x latent_dim, aligned with Dataset::users
  nn::Matrix item_latents;  // items x latent_dim, aligned with catalog indices

  /// True preference of a user for a catalog item.
  double score(std::size_t user, std::size_t item) const;
  std::vector<double> scores(std::size_t user) const;
};

struct SyntheticDomain {
  Dataset dataset;
  DomainOracle oracle;
};

/// Target roles, in the order they appear in SyntheticWorld::targets.
inline constexpr const char* kTargetNames[] = {"mixed", "vision", "text_features", "shifted"};

struct SyntheticWorld {
  SyntheticDomain source;
  std::vector<SyntheticDomain> targets;

  const SyntheticDomain& target(const std::string& name) const;
};

/// Pure function of the config (including its seed).
SyntheticWorld generate_synthetic_world(const SyntheticWorldConfig& cfg);

/// Writes catalog.jsonl, interactions.jsonl and oracle.jsonl under `dir`.
void write_domain(const SyntheticDomain& domain, const std::filesystem::path& dir);
void write_world(const SyntheticWorld& world, const std::filesystem::path& dir);

}  // namespace transrec::corpus
