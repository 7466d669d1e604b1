#include "transrec/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "transrec/error.hpp"
#include "transrec/io.hpp"
#include "transrec/log.hpp"

namespace transrec::pipeline {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'N', 'S', 'R', 'E', 'C', 'K'};
const std::string kPositionTable = std::string(user_model::kUserEncoderPrefix) + ".pos";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return out_; }

 private:
  void uint(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

  const char* take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::IoFailure, source_ + ": truncated at offset " + std::to_string(pos_) + " reading " +
                                            what + " (need " + std::to_string(n) + " bytes, " +
                                            std::to_string(data_.size() - pos_) + " left)");
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(int n, const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(static_cast<std::size_t>(n), what));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    const char* p = take(n, what);
    return {p, n};
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint snapshot(const TransRecModel& model, std::string stage, std::string domain, std::uint64_t step) {
  Checkpoint c;
  c.config_hash = model.config_hash();
  c.stage = std::move(stage);
  c.domain = std::move(domain);
  c.step = step;
  c.dtype_width = nn::precision_from_env() == nn::Precision::F32 ? 4 : 8;
  model.params().for_each([&](const nn::Parameter& p) { c.tensors.emplace(p.name, p.value); });
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.dtype_width != 4 && ckpt.dtype_width != 8) {
    throw Error(ErrorCode::ConfigInvalid, "checkpoint dtype width must be 4 or 8");
  }
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(ckpt.version);
  w.u64(ckpt.config_hash);
  w.str(ckpt.stage);
  w.str(ckpt.domain);
  w.u64(ckpt.step);
  w.u32(ckpt.dtype_width);
  w.u32(static_cast<std::uint32_t>(ckpt.metrics.size()));
  for (const auto& [name, v] : ckpt.metrics) {
    w.str(name);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    w.str(name);
    w.u64(m.rows());
    w.u64(m.cols());
  }
  for (const auto& [name, m] : ckpt.tensors) {
    for (double v : m.values()) {
      if (ckpt.dtype_width == 4) {
        w.f32(static_cast<float>(v));
      } else {
        w.f64(v);
      }
    }
  }
  io::atomic_write(path, w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  Reader r(data, path.string());
  const char* magic = r.take(sizeof kMagic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::IoFailure, path.string() + ": not a checkpoint (bad magic at offset 0)");
  }
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionUnsupported, path.string() + ": format version " + std::to_string(c.version) +
                                                   ", this build reads " + std::to_string(kCheckpointVersion));
  }
  c.config_hash = r.u64("config hash");
  c.stage = r.str("stage");
  c.domain = r.str("domain");
  c.step = r.u64("step");
  c.dtype_width = r.u32("dtype width");
  if (c.dtype_width != 4 && c.dtype_width != 8) {
    throw Error(ErrorCode::IoFailure, path.string() + ": bad dtype width " + std::to_string(c.dtype_width) +
                                          " at offset " + std::to_string(r.offset() - 4));
  }
  const std::uint32_t n_metrics = r.u32("metric count");
  for (std::uint32_t i = 0; i < n_metrics; ++i) {
    std::string name = r.str("metric name");
    c.metrics[name] = r.f64("metric value");
  }
  const std::uint32_t n_tensors = r.u32("tensor count");
  std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> manifest;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str("tensor name");
    const std::uint64_t rows = r.u64("tensor rows");
    const std::uint64_t cols = r.u64("tensor cols");
    manifest.push_back({std::move(name), {rows, cols}});
  }
  for (const auto& [name, shape] : manifest) {
    Matrix m(shape.first, shape.second);
    for (double& v : m.values()) v = c.dtype_width == 4 ? static_cast<double>(r.f32("payload")) : r.f64("payload");
    c.tensors.emplace(name, std::move(m));
  }
  if (!r.done()) {
    throw Error(ErrorCode::IoFailure, path.string() + ": trailing bytes at offset " + std::to_string(r.offset()));
  }
  return c;
}

std::string manifest_text(const Checkpoint& ckpt) {
  std::ostringstream s;
  s << "# version " << ckpt.version << " hash " << eval::hash_hex(ckpt.config_hash) << " stage " << ckpt.stage
    << " domain " << ckpt.domain << " step " << ckpt.step << "\n";
  for (const auto& [name, m] : ckpt.tensors) {
    s << name << "\tf" << ckpt.dtype_width * 8 << "\t" << m.rows() << "x" << m.cols() << "\n";
  }
  return s.str();
}

LoadReport load_parameters(TransRecModel& model, const Checkpoint& ckpt, bool force_compat) {
  LoadReport report;
  auto& store = model.params();
  // Shapes first so a width change names the offending tensor.
  for (const std::string& name : store.names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) continue;
    const Matrix& have = store.at(name).value;
    const Matrix& got = it->second;
    if (have.same_shape(got)) continue;
    if (name == kPositionTable && have.cols() == got.cols()) continue;
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' is " + std::to_string(got.rows()) + "x" +
                                              std::to_string(got.cols()) + " in the checkpoint, model expects " +
                                              std::to_string(have.rows()) + "x" + std::to_string(have.cols()));
  }
  if (ckpt.config_hash != model.config_hash()) {
    if (!force_compat) {
      throw Error(ErrorCode::ConfigHashMismatch, "checkpoint architecture " + eval::hash_hex(ckpt.config_hash) +
                                                     " differs from model " + eval::hash_hex(model.config_hash()));
    }
    log::warn("checkpoint: loading across architectures " + eval::hash_hex(ckpt.config_hash) + " -> " +
                                eval::hash_hex(model.config_hash()) + " (forced)");
  }
  for (const std::string& name : store.names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      report.fresh.push_back(name);
      continue;
    }
    Matrix& have = store.at(name).value;
    const Matrix& got = it->second;
    if (have.same_shape(got)) {
      have = got;
      report.loaded.push_back(name);
      continue;
    }
    const std::size_t rows = std::min(have.rows(), got.rows());
    std::copy_n(got.data(), rows * got.cols(), have.data());
    report.resized.push_back(name);
    log::warn("checkpoint: '" + name + "' has " + std::to_string(got.rows()) + " rows, model needs " +
                                std::to_string(have.rows()) + "; copied " + std::to_string(rows) +
                                " rows, rest freshly initialised");
  }
  for (const auto& [name, m] : ckpt.tensors) {
    if (!store.contains(name)) report.ignored.push_back(name);
  }
  nn::apply_precision(store, nn::precision_from_env());
  return report;
}

}  // namespace transrec::pipeline
