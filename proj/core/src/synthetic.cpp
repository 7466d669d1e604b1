#include "transrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "transrec/error.hpp"

namespace transrec::corpus {
namespace {

using nn::Matrix;
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng stream(std::uint64_t seed, std::uint64_t tag) { return Rng(splitmix64(seed ^ splitmix64(tag))); }

struct Texture {
  double fx = 0.0, fy = 0.0, phase = 0.0;
  std::vector<double> color;
};

// Content rendering shared by every domain: this is what makes content-based
// transfer possible while item IDs carry nothing across domains.
struct Rendering {
  Matrix token_vectors;           // vocab x latent
  Matrix dc;                      // latent x channels
  std::vector<Texture> textures;  // 2 per latent dim: positive and negative part
};

constexpr double kTextSharpness = 2.5;
constexpr double kDcAmplitude = 40.0;
constexpr double kTextureAmplitude = 60.0;

Rendering make_rendering(const SyntheticWorldConfig& cfg) {
  Rng rng = stream(cfg.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t L = cfg.latent_dim, C = cfg.image_shape.channels;
  Rendering r;
  r.token_vectors = Matrix(cfg.text_vocab, L);
  for (double& v : r.token_vectors.values()) v = normal(rng);
  r.dc = Matrix(L, C);
  for (double& v : r.dc.values()) v = normal(rng);
  for (std::size_t k = 0; k < L; ++k) {
    for (int sign = 0; sign < 2; ++sign) {
      Texture t;
      const double theta = std::numbers::pi * (static_cast<double>(k) + 0.5 * sign) / static_cast<double>(L);
      const double freq = sign == 0 ? 0.22 : 0.36;
      t.fx = freq * std::cos(theta);
      t.fy = freq * std::sin(theta);
      t.phase = 2.0 * std::numbers::pi * unit(rng);
      double norm = 0.0;
      t.color.resize(C);
      for (double& c : t.color) {
        c = normal(rng);
        norm += c * c;
      }
      for (double& c : t.color) c /= std::sqrt(norm);
      r.textures.push_back(std::move(t));
    }
  }
  return r;
}

std::vector<int> render_text(std::span<const double> z, const Rendering& r, const SyntheticWorldConfig& cfg,
                             Rng& rng) {
  const std::size_t V = r.token_vectors.rows(), L = z.size();
  std::vector<double> w(V);
  double mx = -1e300;
  for (std::size_t v = 0; v < V; ++v) {
    double dot = 0.0;
    for (std::size_t k = 0; k < L; ++k) dot += r.token_vectors(v, k) * z[k];
    w[v] = kTextSharpness * dot / std::sqrt(static_cast<double>(L));
    mx = std::max(mx, w[v]);
  }
  for (double& x : w) x = std::exp(x - mx);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::vector<int> tokens(cfg.text_len);
  for (int& t : tokens) t = pick(rng);
  return tokens;
}

std::vector<std::uint8_t> render_image(std::span<const double> z, const Rendering& r, const ImageShape& shape,
                                       const SyntheticWorldConfig& cfg, Rng& rng) {
  const std::size_t L = z.size();
  const double sl = std::sqrt(static_cast<double>(L));
  std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
  std::vector<std::uint8_t> px(shape.pixels());
  for (std::size_t c = 0; c < shape.channels; ++c) {
    const std::size_t cc = c % r.dc.cols();
    double base = 128.0;
    for (std::size_t k = 0; k < L; ++k) base += kDcAmplitude * r.dc(k, cc) * z[k] / sl;
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        double v = base;
        for (std::size_t k = 0; k < L; ++k) {
          const double amp[2] = {std::max(z[k], 0.0), std::max(-z[k], 0.0)};
          for (int s = 0; s < 2; ++s) {
            if (amp[s] == 0.0) continue;
            const Texture& t = r.textures[2 * k + s];
            const double wave = std::cos(2.0 * std::numbers::pi * (t.fx * static_cast<double>(x) +
                                                                    t.fy * static_cast<double>(y)) +
                                         t.phase);
            v += kTextureAmplitude / sl * amp[s] * t.color[cc] * wave;
          }
        }
        v += noise(rng);
        px[(c * shape.height + y) * shape.width + x] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return px;
}

enum class Mix { Mixed, VisionOnly, TextOnly };

struct DomainSpec {
  std::string name;
  std::string prefix;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  Mix mix = Mix::Mixed;
  ImageShape image_shape;
  std::vector<double> taste_scale;  // per latent dim std of user tastes
  std::vector<double> latent_mean;
  double latent_scale = 1.0;
  bool with_features = false;
  std::uint64_t tag = 0;
};

int category_of(std::span<const double> z) {
  const std::size_t n = std::min<std::size_t>(4, z.size());
  return static_cast<int>(std::max_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(n)) - z.begin());
}

int age_bin(double v) {
  static constexpr double kCuts[] = {-0.84, -0.25, 0.25, 0.84};
  int bin = 0;
  for (double c : kCuts) bin += v > c ? 1 : 0;
  return bin;
}

std::string padded(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

SyntheticDomain make_domain(const DomainSpec& spec, const Rendering& rendering, const SyntheticWorldConfig& cfg) {
  const std::size_t L = cfg.latent_dim;
  Rng item_rng = stream(cfg.seed, spec.tag * 16 + 2);
  Rng render_rng = stream(cfg.seed, spec.tag * 16 + 3);
  Rng user_rng = stream(cfg.seed, spec.tag * 16 + 4);
  Rng stream_rng = stream(cfg.seed, spec.tag * 16 + 5);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticDomain dom;
  dom.oracle.item_latents = Matrix(spec.n_items, L);
  std::vector<Item> items(spec.n_items);
  std::vector<std::size_t> text_items, vision_items;
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    auto z = dom.oracle.item_latents.row(i);
    for (std::size_t k = 0; k < L; ++k) z[k] = spec.latent_mean[k] + spec.latent_scale * normal(item_rng);
    Item& item = items[i];
    item.item_id = spec.prefix + "-i" + padded(i);
    const bool vision = spec.mix == Mix::VisionOnly || (spec.mix == Mix::Mixed && i % 2 == 1);
    if (vision) {
      item.modality = Modality::Vision;
      item.image_shape = spec.image_shape;
      item.image = render_image(z, rendering, spec.image_shape, cfg, render_rng);
      vision_items.push_back(i);
    } else {
      item.modality = Modality::Text;
      item.text_tokens = render_text(z, rendering, cfg, render_rng);
      text_items.push_back(i);
    }
    if (spec.with_features) item.features["category"] = category_of(z);
  }
  auto catalog = std::make_shared<const Catalog>(std::move(items));

  const double denom = std::sqrt(static_cast<double>(L)) * cfg.noise_temperature;
  std::uniform_int_distribution<std::size_t> length(cfg.min_seq_len, cfg.max_gen_len);
  std::bernoulli_distribution pick_vision(cfg.modality_mix);
  dom.oracle.user_latents = Matrix(spec.n_users, L);
  std::vector<InteractionSequence> users(spec.n_users);
  std::vector<double> w;
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    auto taste = dom.oracle.user_latents.row(u);
    for (std::size_t k = 0; k < L; ++k) taste[k] = spec.taste_scale[k] * normal(user_rng);
    InteractionSequence& seq = users[u];
    seq.user_id = spec.prefix + "-u" + padded(u);
    if (spec.with_features) {
      seq.user_features["gender"] = taste[0] > 0.0 ? 1 : 0;
      seq.user_features["age"] = age_bin(taste[1] / spec.taste_scale[1]);
    }
    auto distribution_over = [&](const std::vector<std::size_t>& pool) {
      w.assign(pool.size(), 0.0);
      double mx = -1e300;
      for (std::size_t p = 0; p < pool.size(); ++p) {
        w[p] = dom.oracle.score(u, pool[p]) / denom;
        mx = std::max(mx, w[p]);
      }
      for (double& x : w) x = std::exp(x - mx);
      return std::discrete_distribution<std::size_t>(w.begin(), w.end());
    };
    auto text_dist = distribution_over(text_items);
    auto vision_dist = distribution_over(vision_items);
    const std::size_t n = length(stream_rng);
    for (std::size_t t = 0; t < n; ++t) {
      bool vision = !vision_items.empty();
      if (!vision_items.empty() && !text_items.empty()) vision = pick_vision(stream_rng);
      const std::size_t item = vision ? vision_items[vision_dist(stream_rng)] : text_items[text_dist(stream_rng)];
      seq.items.push_back(static_cast<int>(item));
    }
  }
  dom.dataset = make_dataset(spec.name, catalog, std::move(users), cfg.max_seq_len);
  return dom;
}

}  // namespace

void SyntheticWorldConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::ConfigInvalid, "synthetic." + field + ": " + why);
  };
  if (n_source_users == 0) fail("n_source_users", "must be positive");
  if (n_target_users == 0) fail("n_target_users", "must be positive");
  if (n_source_items < 2) fail("n_source_items", "must be at least 2");
  if (n_target_items < 2) fail("n_target_items", "must be at least 2");
  if (latent_dim < 2) fail("latent_dim", "must be at least 2");
  if (text_vocab == 0) fail("text_vocab", "must be positive");
  if (text_len == 0) fail("text_len", "must be positive");
  if (image_shape.pixels() == 0) fail("image_shape", "all dimensions must be positive");
  if (shifted_image_shape.pixels() == 0) fail("shifted_image_shape", "all dimensions must be positive");
  if (shifted_image_shape.channels != image_shape.channels) {
    fail("shifted_image_shape", "must keep the channel count");
  }
  if (!(modality_mix >= 0.0 && modality_mix <= 1.0)) fail("modality_mix", "must be in [0, 1]");
  if (!(noise_temperature > 0.0) || !std::isfinite(noise_temperature)) fail("noise_temperature", "must be positive");
  if (min_seq_len < kMinSequenceLength) fail("min_seq_len", "must be at least 3");
  if (max_gen_len < min_seq_len) fail("max_gen_len", "must be >= min_seq_len");
  if (max_seq_len < kMinSequenceLength) fail("max_seq_len", "must be at least 3");
  if (pixel_noise < 0.0) fail("pixel_noise", "must be non-negative");
}

double DomainOracle::score(std::size_t user, std::size_t item) const {
  auto t = user_latents.row(user);
  auto z = item_latents.row(item);
  double s = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) s += t[k] * z[k];
  return s;
}

std::vector<double> DomainOracle::scores(std::size_t user) const {
  std::vector<double> out(item_latents.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = score(user, i);
  return out;
}

const SyntheticDomain& SyntheticWorld::target(const std::string& name) const {
  for (const auto& t : targets) {
    if (t.dataset.domain_name == name) return t;
  }
  throw Error(ErrorCode::ConfigInvalid, "no synthetic target named '" + name + "'");
}

SyntheticWorld generate_synthetic_world(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  const Rendering rendering = make_rendering(cfg);
  const std::size_t L = cfg.latent_dim;

  // Source tastes lean on the first half of the latent space; targets weigh
  // every dimension, so a frozen source item tower under-serves them.
  std::vector<double> source_taste(L, 1.0), target_taste(L, 1.0);
  for (std::size_t k = L / 2; k < L; ++k) source_taste[k] = 0.5;
  const std::vector<double> zero_mean(L, 0.0);

  std::vector<double> shifted_mean(L, 0.0);
  {
    Rng rng = stream(cfg.seed, 99);
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    for (double& v : shifted_mean) {
      v = normal(rng);
      norm += v * v;
    }
    for (double& v : shifted_mean) v *= 0.6 / std::sqrt(norm);
  }

  SyntheticWorld world;
  world.source = make_domain({"source", "src", cfg.n_source_users, cfg.n_source_items, Mix::Mixed, cfg.image_shape,
                              source_taste, zero_mean, 1.0, false, 1},
                             rendering, cfg);
  world.targets.push_back(make_domain({"mixed", "mix", cfg.n_target_users, cfg.n_target_items, Mix::Mixed,
                                       cfg.image_shape, target_taste, zero_mean, 1.0, false, 2},
                                      rendering, cfg));
  world.targets.push_back(make_domain({"vision", "vis", cfg.n_target_users, cfg.n_target_items, Mix::VisionOnly,
                                       cfg.image_shape, target_taste, zero_mean, 1.0, false, 3},
                                      rendering, cfg));
  world.targets.push_back(make_domain({"text_features", "txt", cfg.n_target_users, cfg.n_target_items,
                                       Mix::TextOnly, cfg.image_shape, target_taste, zero_mean, 1.0, true, 4},
                                      rendering, cfg));
  world.targets.push_back(make_domain({"shifted", "shf", cfg.n_target_users, cfg.n_target_items, Mix::VisionOnly,
                                       cfg.shifted_image_shape, target_taste, shifted_mean, 0.8, false, 5},
                                      rendering, cfg));
  return world;
}

void write_domain(const SyntheticDomain& domain, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_catalog(*domain.dataset.catalog, dir / "catalog.jsonl");
  write_interactions(domain.dataset, dir / "interactions.jsonl");
  std::ofstream out(dir / "oracle.jsonl", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "oracle.jsonl").string());
  auto emit = [&](const char* kind, const std::string& id, std::span<const double> latent) {
    nlohmann::json j;
    j["kind"] = kind;
    j["id"] = id;
    j["latent"] = std::vector<double>(latent.begin(), latent.end());
    out << j.dump() << '\n';
  };
  for (std::size_t u = 0; u < domain.dataset.users.size(); ++u) {
    emit("user", domain.dataset.users[u].user_id, domain.oracle.user_latents.row(u));
  }
  for (std::size_t i = 0; i < domain.dataset.catalog->size(); ++i) {
    emit("item", domain.dataset.catalog->at(i).item_id, domain.oracle.item_latents.row(i));
  }
}

void write_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  write_domain(world.source, dir / world.source.dataset.domain_name);
  for (const auto& t : world.targets) write_domain(t, dir / t.dataset.domain_name);
}

}  // namespace transrec::corpus
