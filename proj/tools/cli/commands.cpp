#include "commands.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "config.hpp"
#include "transrec/error.hpp"
#include "transrec/io.hpp"
#include "transrec/log.hpp"
#include "transrec/objectives.hpp"

namespace transrec::cli {

namespace fs = std::filesystem;

namespace {

class Session {
 public:
  Session(RunConfig cfg, std::ostream& out) : cfg_(std::move(cfg)), out_(out) {}

  const RunConfig& cfg() const { return cfg_; }
  std::ostream& out() { return out_; }
  fs::path output_dir() const { return cfg_.get("run.output_dir"); }

  fs::path prepare(const fs::path& dir) const {
    fs::create_directories(dir);
    io::atomic_write(dir / "config.ini", cfg_.resolved_text());
    return dir;
  }

  std::string run_id(const std::string& fallback) const {
    const std::string& id = cfg_.get("run.run_id");
    return id.empty() ? fallback : id;
  }

  const corpus::SyntheticWorld& world() {
    if (!world_) world_ = corpus::generate_synthetic_world(cfg_.synthetic());
    return *world_;
  }

  /// The named domain, from corpus.data_dir when set, else the synthetic world.
  corpus::Dataset dataset(const std::string& domain, double fraction) {
    corpus::Dataset ds;
    const std::string data_dir = cfg_.get("corpus.data_dir");
    if (!data_dir.empty()) {
      fs::path dir = fs::path(data_dir) / domain;
      if (!fs::exists(dir / "catalog.jsonl")) dir = data_dir;
      corpus::CatalogLimits limits;
      limits.vocab_size = cfg_.count("item.text_vocab_size");
      auto catalog = std::make_shared<const corpus::Catalog>(corpus::load_catalog(dir / "catalog.jsonl", limits));
      ds = corpus::load_interactions(dir / "interactions.jsonl", catalog, cfg_.count("corpus.max_seq_len"), domain);
    } else if (domain == "source") {
      ds = world().source.dataset;
    } else {
      ds = world().target(domain).dataset;
    }
    if (fraction < 1.0) ds = corpus::subsample(ds, fraction, cfg_.u64("run.seed"));
    return ds;
  }

 private:
  RunConfig cfg_;
  std::ostream& out_;
  std::optional<corpus::SyntheticWorld> world_;
};

std::vector<eval::MetricsReport> final_metrics(const pipeline::TransRecModel& model, const corpus::Dataset& ds,
                                               eval::EvalOptions opt, const std::string& run_id) {
  const auto view = corpus::leave_one_out_split(ds);
  opt.run_id = run_id;
  return {eval::evaluate(model, ds, view, corpus::Split::Valid, opt),
          eval::evaluate(model, ds, view, corpus::Split::Test, opt)};
}

void print_reports(std::ostream& out, const std::vector<eval::MetricsReport>& reports) {
  for (const auto& r : reports) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %-12s %-5s HR@%zu=%.4f NDCG@%zu=%.4f users=%zu\n", r.run_id.c_str(),
                  r.domain.c_str(), r.split.c_str(), r.k, r.hr, r.k, r.ndcg, r.n_users);
    out << buf;
  }
}

/// Writes checkpoint, manifest, metrics and the checkpoint listing of one run.
std::vector<eval::MetricsReport> finish_run(Session& s, const fs::path& dir, const std::string& run_id,
                                            const pipeline::TransRecModel& model, const corpus::Dataset& ds,
                                            pipeline::TrainResult& result, const std::string& ckpt_name) {
  auto reports = final_metrics(model, ds, s.cfg().eval_options(), run_id);
  for (const auto& r : reports) result.best.metrics[r.split + "_hr@" + std::to_string(r.k)] = r.hr;
  const fs::path ckpt = dir / ckpt_name;
  pipeline::save_checkpoint(result.best, ckpt);
  io::atomic_write(dir / "manifest.txt", pipeline::manifest_text(result.best));
  io::atomic_write(dir / "checkpoints.txt", fs::absolute(ckpt).string() + "\n");
  eval::write_reports(reports, dir / "metrics.csv");
  print_reports(s.out(), reports);
  s.out() << "checkpoint " << ckpt.string() << " (best epoch " << result.best_epoch << ", " << result.steps
          << " steps)\n";
  return reports;
}

std::optional<pipeline::Checkpoint> maybe_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return pipeline::load_checkpoint(path);
}

int cmd_gen_data(Session& s) {
  const fs::path dir = s.prepare(s.output_dir());
  corpus::write_world(s.world(), dir / "data");
  s.out() << "wrote synthetic world to " << (dir / "data").string() << "\n";
  return 0;
}

int cmd_pretrain(Session& s) {
  const auto& cfg = s.cfg();
  const corpus::Dataset ds = s.dataset(cfg.get("corpus.domain"), cfg.real("corpus.fraction"));
  const fs::path dir = s.prepare(s.output_dir());
  pipeline::TrainConfig tc = cfg.train("pretrain");
  tc.history_path = dir / "history.csv";
  tc.run_id = s.run_id("pretrain");
  pipeline::TransRecModel model(cfg.model_for(ds, ds.catalog->size()));
  auto result = pipeline::pretrain_user_encoder(model, ds, tc);
  finish_run(s, dir, tc.run_id, model, ds, result, "pretrain.ckpt");
  return 0;
}

int cmd_train(Session& s, const std::string& from) {
  const auto& cfg = s.cfg();
  const corpus::Dataset ds = s.dataset(cfg.get("corpus.domain"), cfg.real("corpus.fraction"));
  const auto init = maybe_checkpoint(from);
  const fs::path dir = s.prepare(s.output_dir());
  pipeline::TrainConfig tc = cfg.train("train");
  tc.history_path = dir / "history.csv";
  tc.run_id = s.run_id("train");
  pipeline::TransRecModel model(cfg.model_for(ds, ds.catalog->size()));
  auto result = pipeline::train_end_to_end(model, ds, tc, init ? &*init : nullptr);
  finish_run(s, dir, tc.run_id, model, ds, result, "train.ckpt");
  return 0;
}

pipeline::TrainResult adapt_run(Session& s, const corpus::Dataset& ds, pipeline::TransferMode mode,
                                const pipeline::Checkpoint* ckpt, const fs::path& dir, const std::string& run_id) {
  pipeline::TrainConfig tc = s.cfg().train("adapt");
  tc.history_path = dir / "history.csv";
  tc.run_id = run_id;
  pipeline::TransRecModel model(s.cfg().model_for(ds, 0));
  auto result = pipeline::adapt_to_target(model, ds, mode, tc, ckpt);
  finish_run(s, dir, run_id, model, ds, result, "adapt.ckpt");
  return result;
}

int cmd_adapt(Session& s, const std::string& from) {
  const auto& cfg = s.cfg();
  const auto mode = pipeline::transfer_mode_from_string(cfg.get("adapt.mode"));
  if (mode != pipeline::TransferMode::Scratch && from.empty()) {
    throw Error(ErrorCode::MissingCheckpoint, "--mode " + cfg.get("adapt.mode") + " requires --from-checkpoint");
  }
  const auto ckpt = maybe_checkpoint(from);
  const corpus::Dataset ds = s.dataset(cfg.get("corpus.domain"), cfg.real("corpus.fraction"));
  const fs::path dir = s.prepare(s.output_dir());
  adapt_run(s, ds, mode, ckpt ? &*ckpt : nullptr, dir, s.run_id("adapt_" + pipeline::to_string(mode)));
  return 0;
}

int cmd_eval(Session& s, const std::string& from) {
  if (from.empty()) throw Error(ErrorCode::MissingCheckpoint, "eval requires --from-checkpoint");
  const auto& cfg = s.cfg();
  const auto ckpt = pipeline::load_checkpoint(from);
  const corpus::Dataset ds = s.dataset(cfg.get("corpus.domain"), cfg.real("corpus.fraction"));
  std::size_t head = 0;
  if (auto it = ckpt.tensors.find(std::string(objectives::kUepHeadPrefix) + ".w"); it != ckpt.tensors.end()) {
    head = it->second.cols();
  }
  pipeline::TransRecModel model(cfg.model_for(ds, head));
  model.init(cfg.u64("run.seed"));
  const auto report = pipeline::load_parameters(model, ckpt, cfg.flag("train.force_compat"));
  for (const auto& name : report.fresh) log::warn("eval: '" + name + "' missing from checkpoint");
  if (ckpt.stage == pipeline::to_string(pipeline::Stage::UserPretrain)) model.set_score_mode(pipeline::ScoreMode::UepHead);
  const fs::path dir = s.prepare(s.output_dir());
  const auto reports = final_metrics(model, ds, cfg.eval_options(), s.run_id("eval"));
  eval::write_reports(reports, dir / "metrics.csv");
  print_reports(s.out(), reports);
  return 0;
}

int cmd_compare(Session& s, const std::vector<std::string>& files) {
  if (files.size() != 2) throw Error(ErrorCode::ConfigInvalid, "compare needs exactly two metrics files");
  const auto a = eval::read_reports(files[0]);
  const auto b = eval::read_reports(files[1]);
  std::string table;
  for (const auto& ra : a) {
    for (const auto& rb : b) {
      if (ra.domain == rb.domain && ra.split == rb.split && ra.k == rb.k) {
        table += "\n" + ra.split + ":\n\n" + eval::improvement_table(ra, rb);
      }
    }
  }
  if (table.empty()) {
    throw Error(ErrorCode::MismatchedReports, "no (domain, split, K) row is shared by " + files[0] + " and " +
                                                  files[1]);
  }
  const fs::path dir = s.prepare(s.output_dir());
  io::atomic_write(dir / "compare.md", table.substr(1));
  s.out() << table.substr(1);
  return 0;
}

int cmd_grad_check(Session& s, double eps, double tolerance) {
  bool ok = true;
  std::string failures;
  for (auto& f : pipeline::standard_fragments(s.cfg().u64("run.seed"))) {
    const auto r = pipeline::check_gradients(f.store, f.loss, eps);
    const bool pass = r.max_rel_error < tolerance;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s params=%-5zu max_rel_err=%.3e worst=%s[%zu] %s\n", f.name.c_str(),
                  r.n_params, r.max_rel_error, r.worst_param.c_str(), r.worst_index, pass ? "PASS" : "FAIL");
    s.out() << buf;
    if (!pass) {
      ok = false;
      failures += " " + f.name + ":" + r.worst_param;
    }
  }
  if (!ok) throw Error(ErrorCode::ToleranceExceeded, "gradient check failed for" + failures);
  return 0;
}

int cmd_experiment_matrix(Session& s) {
  const auto& cfg = s.cfg();
  const fs::path root = s.prepare(s.output_dir());
  const corpus::Dataset source = s.dataset("source", 1.0);
  std::optional<pipeline::Checkpoint> stage1;
  if (cfg.flag("experiment.use_pretrain")) {
    const fs::path dir = s.prepare(root / "source_pretrain");
    pipeline::TrainConfig tc = cfg.train("pretrain");
    tc.history_path = dir / "history.csv";
    tc.run_id = "source_pretrain";
    pipeline::TransRecModel model(cfg.model_for(source, source.catalog->size()));
    auto r = pipeline::pretrain_user_encoder(model, source, tc);
    finish_run(s, dir, tc.run_id, model, source, r, "pretrain.ckpt");
    stage1 = r.best;
  }
  pipeline::Checkpoint transferred;
  {
    const fs::path dir = s.prepare(root / "source_train");
    pipeline::TrainConfig tc = cfg.train("train");
    tc.history_path = dir / "history.csv";
    tc.run_id = "source_train";
    pipeline::TransRecModel model(cfg.model_for(source, source.catalog->size()));
    auto r = pipeline::train_end_to_end(model, source, tc, stage1 ? &*stage1 : nullptr);
    finish_run(s, dir, tc.run_id, model, source, r, "train.ckpt");
    transferred = r.best;
  }
  const auto modes = cfg.list("experiment.modes");
  std::vector<eval::MetricsReport> rows;
  std::ostringstream md;
  const std::size_t k = cfg.count("eval.k");
  md << "| target |";
  for (const auto& m : modes) md << " " << m << " HR@" << k << " | " << m << " NDCG@" << k << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < modes.size(); ++i) md << "---|---|";
  md << "\n";
  for (const std::string& target : cfg.list("experiment.targets")) {
    const corpus::Dataset ds = s.dataset(target, cfg.real("corpus.fraction"));
    md << "| " << target << " |";
    for (const std::string& m : modes) {
      const auto mode = pipeline::transfer_mode_from_string(m);
      const std::string id = target + "_" + m;
      const fs::path dir = s.prepare(root / id);
      const auto* ckpt = mode == pipeline::TransferMode::Scratch ? nullptr : &transferred;
      adapt_run(s, ds, mode, ckpt, dir, id);
      const auto reports = eval::read_reports(dir / "metrics.csv");
      const auto& test = reports.back();
      rows.push_back(test);
      char buf[64];
      std::snprintf(buf, sizeof buf, " %.4f | %.4f |", test.hr, test.ndcg);
      md << buf;
    }
    md << "\n";
  }
  eval::write_reports(rows, root / "matrix.csv");
  io::atomic_write(root / "matrix.md", md.str());
  s.out() << "\n" << md.str();
  return 0;
}

int cmd_convergence(Session& s, const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw Error(ErrorCode::ConfigInvalid, "convergence needs at least one run directory");
  std::string merged = "run_id,epoch,split,loss,hr@10,ndcg@10\n";
  for (const std::string& d : dirs) {
    const fs::path history = fs::path(d) / "history.csv";
    if (!fs::exists(history)) throw Error(ErrorCode::MissingHistory, "no history.csv in " + d);
    std::istringstream in(io::read_file(history));
    std::string line;
    std::getline(in, line);
    if (line != pipeline::history_header()) {
      throw Error(ErrorCode::MissingHistory, history.string() + ": unexpected header '" + line + "'");
    }
    const std::string id = fs::path(d).filename().empty() ? fs::path(d).parent_path().filename().string()
                                                          : fs::path(d).filename().string();
    while (std::getline(in, line)) {
      if (!line.empty()) merged += id + "," + line + "\n";
    }
  }
  const fs::path dir = s.prepare(s.output_dir());
  io::atomic_write(dir / "convergence.csv", merged);
  s.out() << merged;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transferable two-tower sequential recommendation: data, training, transfer and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, output_dir, data_dir, domain, mode, from;
  std::vector<std::string> sets, positional;
  std::uint64_t seed = 0;
  double fraction = 1.0, eps = 1e-5, tolerance = 1e-4;
  std::size_t k = 10;
  bool mask_history = false;

  auto* o_config = app.add_option("--config", config_path, "INI configuration file");
  auto* o_seed = app.add_option("--seed", seed, "global seed (data, init, sampling)");
  auto* o_out = app.add_option("--output-dir", output_dir, "directory for all run outputs");
  auto* o_fraction = app.add_option("--fraction", fraction, "fraction of users kept from the domain");
  auto* o_mode = app.add_option("--mode", mode, "adaptation mode: scratch|finetune|frozen");
  app.add_option("--from-checkpoint", from, "checkpoint to initialise from or evaluate");
  auto* o_k = app.add_option("--k", k, "cutoff for HR@K and NDCG@K");
  app.add_flag("--mask-history", mask_history, "exclude context items from the candidates");
  app.add_option("--set", sets, "override one key, section.key=value (repeatable)");
  auto* o_data = app.add_option("--data", data_dir, "directory with catalog.jsonl and interactions.jsonl");
  auto* o_domain = app.add_option("--domain", domain, "domain to use (source or a target name)");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic world");
  auto* pre = app.add_subcommand("pretrain-user", "stage 1: next-item pretraining of the user encoder");
  auto* train = app.add_subcommand("train", "stage 2: end-to-end contrastive training");
  auto* adapt = app.add_subcommand("adapt", "train on a target domain from scratch or from a checkpoint");
  auto* ev = app.add_subcommand("eval", "full-catalog evaluation of a checkpoint");
  auto* cmp = app.add_subcommand("compare", "relative improvement between two metrics files");
  cmp->add_option("files", positional, "baseline.csv candidate.csv")->expected(2);
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable component");
  gc->add_option("--eps", eps, "finite-difference step");
  gc->add_option("--tolerance", tolerance, "maximum relative error");
  auto* mat = app.add_subcommand("experiment-matrix", "source training then every target x adaptation mode");
  auto* conv = app.add_subcommand("convergence", "merge per-epoch histories into one plottable CSV");
  conv->add_option("runs", positional, "run directories")->expected(1, -1);

  std::vector<std::string> argv_store{"transrec"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg;
    if (*o_config) cfg.load_file(config_path);
    for (const auto& a : sets) cfg.set_assignment(a);
    if (*o_seed) cfg.set("run.seed", std::to_string(seed));
    if (*o_out) cfg.set("run.output_dir", output_dir);
    if (*o_data) cfg.set("corpus.data_dir", data_dir);
    if (*o_domain) cfg.set("corpus.domain", domain);
    if (*o_fraction) {
      std::ostringstream f;
      f.precision(17);
      f << fraction;
      cfg.set("corpus.fraction", f.str());
    }
    if (*o_k) cfg.set("eval.k", std::to_string(k));
    if (mask_history) cfg.set("eval.mask_history", "true");
    if (*o_mode) cfg.set("adapt.mode", mode);
    cfg.validate();

    Session s(std::move(cfg), out);
    if (*gen) return cmd_gen_data(s);
    if (*pre) return cmd_pretrain(s);
    if (*train) return cmd_train(s, from);
    if (*adapt) return cmd_adapt(s, from);
    if (*ev) return cmd_eval(s, from);
    if (*cmp) return cmd_compare(s, positional);
    if (*gc) return cmd_grad_check(s, eps, tolerance);
    if (*mat) return cmd_experiment_matrix(s);
    if (*conv) return cmd_convergence(s, positional);
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCategory::Data);
  }
}

}  // namespace transrec::cli
