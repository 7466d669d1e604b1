#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "test_support.hpp"
#include "transrec/error.hpp"
#include "transrec/io.hpp"
#include "transrec/pipeline.hpp"

namespace transrec::pipeline {
namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ModelConfig tiny(std::size_t d = 16, std::size_t layers = 2) {
  ModelConfig m;
  m.item.d_model = d;
  m.item.text.d_model = d;
  m.item.vision.mlp_dims = {24, d};
  m.user.d_model = d;
  m.user.n_layers = layers;
  return m;
}

Checkpoint sample(std::uint64_t seed = 5) {
  TransRecModel model(tiny());
  model.init(seed);
  auto c = snapshot(model, "end_to_end", "source", 123);
  c.metrics["valid_hr@10"] = 0.3125;
  // Values that stress an exact round trip.
  auto& m = c.tensors.begin()->second;
  m.data()[0] = std::numeric_limits<double>::denorm_min();
  if (m.size() > 2) {
    m.data()[1] = -0.0;
    m.data()[2] = 1.0 / 3.0;
  }
  return c;
}

std::string slurp(const std::filesystem::path& p) { return io::read_file(p); }

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

ErrorCode load_error(const std::filesystem::path& p, std::string* message = nullptr) {
  try {
    load_checkpoint(p);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::ConfigInvalid;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  const auto c = sample();
  save_checkpoint(c, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.version, kCheckpointVersion);
  EXPECT_EQ(back.config_hash, c.config_hash);
  EXPECT_EQ(back.stage, "end_to_end");
  EXPECT_EQ(back.domain, "source");
  EXPECT_EQ(back.step, 123u);
  EXPECT_EQ(back.metrics, c.metrics);
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (const auto& [name, m] : c.tensors) EXPECT_TRUE(bitwise_equal(back.tensors.at(name), m)) << name;
  // Re-saving the loaded checkpoint reproduces the file byte for byte.
  save_checkpoint(back, dir / "b.ckpt");
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, RoundTripPropertyOverRandomTensors) {
  testing::TempDir dir("ckpt_prop");
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    Checkpoint c;
    c.config_hash = rng();
    c.stage = "s" + std::to_string(trial);
    c.step = rng();
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int t = 0; t < n; ++t) {
      c.tensors["t" + std::to_string(t)] =
          testing::random_matrix(rng, 1 + rng() % 4, 1 + rng() % 6, std::pow(10.0, static_cast<double>(rng() % 40) - 20));
    }
    save_checkpoint(c, dir / "p.ckpt");
    const auto back = load_checkpoint(dir / "p.ckpt");
    EXPECT_EQ(back.config_hash, c.config_hash);
    EXPECT_EQ(back.step, c.step);
    for (const auto& [name, m] : c.tensors) ASSERT_TRUE(bitwise_equal(back.tensors.at(name), m)) << trial;
  }
}

TEST(Checkpoint, FloatWidthStoresRoundedValues) {
  testing::TempDir dir("ckpt32");
  auto c = sample();
  c.dtype_width = 4;
  save_checkpoint(c, dir / "f.ckpt");
  const auto back = load_checkpoint(dir / "f.ckpt");
  EXPECT_EQ(back.dtype_width, 4u);
  for (const auto& [name, m] : c.tensors) {
    const auto& got = back.tensors.at(name);
    for (std::size_t i = 0; i < m.size(); ++i) {
      ASSERT_EQ(got.data()[i], static_cast<double>(static_cast<float>(m.data()[i]))) << name;
    }
  }
  save_checkpoint(sample(), dir / "d.ckpt");
  EXPECT_LT(std::filesystem::file_size(dir / "f.ckpt"), std::filesystem::file_size(dir / "d.ckpt"));
  c.dtype_width = 2;
  EXPECT_THROW(save_checkpoint(c, dir / "g.ckpt"), Error);
}

TEST(Checkpoint, EveryTruncationIsAnIoFailureWithOffset) {
  testing::TempDir dir("ckpt_trunc");
  Checkpoint c;
  c.stage = "x";
  c.tensors["w"] = Matrix(2, 3, 1.5);
  save_checkpoint(c, dir / "full.ckpt");
  const std::string bytes = slurp(dir / "full.ckpt");
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    dump(dir / "cut.ckpt", bytes.substr(0, len));
    std::string msg;
    ASSERT_EQ(load_error(dir / "cut.ckpt", &msg), ErrorCode::IoFailure) << len;
    ASSERT_NE(msg.find("offset"), std::string::npos) << msg;
  }
  dump(dir / "long.ckpt", bytes + "x");
  EXPECT_EQ(load_error(dir / "long.ckpt"), ErrorCode::IoFailure);
}

TEST(Checkpoint, TruncatedPayloadReportsWhereItStopped) {
  testing::TempDir dir("ckpt_payload");
  Checkpoint c;
  c.tensors["w"] = Matrix(4, 4, 2.0);
  save_checkpoint(c, dir / "full.ckpt");
  const std::string bytes = slurp(dir / "full.ckpt");
  const std::size_t cut = bytes.size() - 8 * 3 - 4;
  dump(dir / "cut.ckpt", bytes.substr(0, cut));
  std::string msg;
  EXPECT_EQ(load_error(dir / "cut.ckpt", &msg), ErrorCode::IoFailure);
  EXPECT_NE(msg.find("offset " + std::to_string(bytes.size() - 8 * 4)), std::string::npos) << msg;
}

TEST(Checkpoint, BadMagicAndVersion) {
  testing::TempDir dir("ckpt_hdr");
  save_checkpoint(sample(), dir / "a.ckpt");
  std::string bytes = slurp(dir / "a.ckpt");
  std::string bad = bytes;
  bad[0] = 'X';
  dump(dir / "magic.ckpt", bad);
  EXPECT_EQ(load_error(dir / "magic.ckpt"), ErrorCode::IoFailure);
  bad = bytes;
  bad[8] = static_cast<char>(kCheckpointVersion + 1);
  dump(dir / "version.ckpt", bad);
  EXPECT_EQ(load_error(dir / "version.ckpt"), ErrorCode::VersionUnsupported);
  EXPECT_EQ(load_error(dir / "missing.ckpt"), ErrorCode::IoFailure);
}

TEST(Checkpoint, AtomicWriteLeavesNoTemporaries) {
  testing::TempDir dir("ckpt_atomic");
  save_checkpoint(sample(1), dir / "a.ckpt");
  save_checkpoint(sample(2), dir / "a.ckpt");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
  const auto back = load_checkpoint(dir / "a.ckpt");
  const auto want = sample(2);
  for (const auto& [name, m] : want.tensors) EXPECT_TRUE(bitwise_equal(back.tensors.at(name), m)) << name;
}

TEST(Checkpoint, ManifestListsEveryTensor) {
  auto c = sample();
  const std::string text = manifest_text(c);
  EXPECT_EQ(text.rfind("# version 1 hash ", 0), 0u);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  EXPECT_EQ(lines, c.tensors.size() + 1);
  const auto& [name, m] = *c.tensors.begin();
  EXPECT_NE(text.find(name + "\tf64\t" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "\n"),
            std::string::npos);
  c.dtype_width = 4;
  EXPECT_NE(manifest_text(c).find("\tf32\t"), std::string::npos);
}

TEST(LoadParameters, LoadsByNameAndReports) {
  TransRecModel src(tiny());
  src.init(1);
  const auto c = snapshot(src, "end_to_end", "source", 0);
  auto with_head = tiny();
  with_head.uep_vocab = 30;
  TransRecModel dst(with_head);
  dst.init(2);
  const auto report = load_parameters(dst, c);
  EXPECT_EQ(report.loaded.size(), c.tensors.size());
  ASSERT_FALSE(report.fresh.empty());
  for (const auto& n : report.fresh) EXPECT_EQ(n.rfind("uep_head", 0), 0u) << n;
  for (const auto& [name, m] : c.tensors) EXPECT_TRUE(bitwise_equal(dst.params().at(name).value, m)) << name;

  // The reverse direction ignores the head.
  TransRecModel plain(tiny());
  plain.init(3);
  const auto back = load_parameters(plain, snapshot(dst, "user_pretrain", "source", 0));
  EXPECT_EQ(back.ignored, report.fresh);
  EXPECT_TRUE(back.fresh.empty());
}

TEST(LoadParameters, WidthChangeNamesTheTensor) {
  TransRecModel src(tiny(16));
  src.init(1);
  TransRecModel dst(tiny(8));
  dst.init(1);
  try {
    load_parameters(dst, snapshot(src, "end_to_end", "source", 0), true);
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("tensor '"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos) << e.what();
  }
}

TEST(LoadParameters, ArchitectureHashMismatchUnlessForced) {
  TransRecModel src(tiny(16, 2));
  src.init(1);
  const auto c = snapshot(src, "end_to_end", "source", 0);
  TransRecModel deeper(tiny(16, 3));
  deeper.init(2);
  EXPECT_NE(c.config_hash, deeper.config_hash());
  try {
    load_parameters(deeper, c);
    FAIL() << "expected ConfigHashMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigHashMismatch);
  }
  const auto report = load_parameters(deeper, c, true);
  EXPECT_FALSE(report.fresh.empty());
  for (const auto& n : report.fresh) EXPECT_NE(n.find("layer2"), std::string::npos) << n;
}

TEST(LoadParameters, PositionTableResizesByRows) {
  auto small = tiny();
  small.user.max_positions = 8;
  auto large = tiny();
  large.user.max_positions = 20;
  EXPECT_EQ(config_hash(small), config_hash(large));
  TransRecModel src(small);
  src.init(1);
  TransRecModel dst(large);
  dst.init(2);
  const Matrix fresh = dst.params().at("user_encoder.pos").value;
  const auto report = load_parameters(dst, snapshot(src, "end_to_end", "source", 0));
  ASSERT_EQ(report.resized, std::vector<std::string>{"user_encoder.pos"});
  const Matrix& got = dst.params().at("user_encoder.pos").value;
  const Matrix& old = src.params().at("user_encoder.pos").value;
  for (std::size_t r = 0; r < 20; ++r) {
    for (std::size_t c = 0; c < got.cols(); ++c) {
      EXPECT_EQ(got(r, c), r < 8 ? old(r, c) : fresh(r, c));
    }
  }
}

TEST(LoadParameters, ModelRoundTripThroughFileScoresIdentically) {
  testing::TempDir dir("ckpt_model");
  TransRecModel a(tiny());
  a.init(9);
  save_checkpoint(snapshot(a, "end_to_end", "source", 0), dir / "m.ckpt");
  TransRecModel b(tiny());
  b.init(10);
  load_parameters(b, load_checkpoint(dir / "m.ckpt"));
  a.params().for_each([&](const nn::Parameter& p) {
    EXPECT_TRUE(bitwise_equal(p.value, b.params().at(p.name).value)) << p.name;
  });
}

}  // namespace
}  // namespace transrec::pipeline
