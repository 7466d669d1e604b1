#include "config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <sstream>

#include "transrec/error.hpp"

namespace transrec::cli {

namespace {

[[noreturn]] void invalid(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::ConfigInvalid, key + ": " + why);
}

const std::vector<std::pair<std::string, std::string>>& schema() {
  static const std::vector<std::pair<std::string, std::string>> keys = [] {
    std::vector<std::pair<std::string, std::string>> k = {
        {"run.seed", "7"},
        {"run.output_dir", "runs/default"},
        {"run.run_id", ""},
        {"corpus.data_dir", ""},
        {"corpus.domain", "source"},
        {"corpus.max_seq_len", "12"},
        {"corpus.fraction", "1.0"},
        {"synthetic.n_source_users", "2000"},
        {"synthetic.n_target_users", "1000"},
        {"synthetic.n_source_items", "200"},
        {"synthetic.n_target_items", "200"},
        {"synthetic.latent_dim", "8"},
        {"synthetic.text_vocab", "64"},
        {"synthetic.text_len", "8"},
        {"synthetic.image_shape", "3x8x8"},
        {"synthetic.shifted_image_shape", "3x12x12"},
        {"synthetic.modality_mix", "0.5"},
        {"synthetic.noise_temperature", "0.35"},
        {"synthetic.min_seq_len", "5"},
        {"synthetic.max_gen_len", "14"},
        {"synthetic.pixel_noise", "8"},
        {"item.d_model", "32"},
        {"item.representation", "content"},
        {"item.text_enabled", "true"},
        {"item.text_vocab_size", "64"},
        {"item.text_max_tokens", "8"},
        {"item.text_layers", "1"},
        {"item.text_heads", "2"},
        {"item.text_ffn_mult", "2"},
        {"item.text_dropout", "0"},
        {"item.vision_enabled", "true"},
        {"item.vision_image_shape", "auto"},
        {"item.vision_conv_stages", "8/1,16/2"},
        {"item.vision_mlp_dims", "64,32"},
        {"item.id_vocab", "auto"},
        {"item.features", "auto"},
        {"item.feature_dim", "4"},
        {"user.n_layers", "2"},
        {"user.n_heads", "2"},
        {"user.ffn_mult", "2"},
        {"user.max_positions", "16"},
        {"user.dropout", "0"},
        {"user.features", "auto"},
        {"objectives.cpc_targets", "2"},
        {"objectives.negatives", "4"},
        {"objectives.uep_relu", "true"},
        {"pretrain.freeze_items", "false"},
        {"adapt.mode", "finetune"},
        {"eval.k", "10"},
        {"eval.mask_history", "false"},
        {"experiment.targets", "mixed,vision,text_features,shifted"},
        {"experiment.modes", "scratch,frozen,finetune"},
        {"experiment.use_pretrain", "true"},
    };
    for (const char* s : {"pretrain", "train", "adapt"}) {
      const std::string p = s;
      k.emplace_back(p + ".learning_rate", "1e-3");
      k.emplace_back(p + ".batch_size", "64");
      k.emplace_back(p + ".max_epochs", p == "adapt" ? "40" : "20");
      k.emplace_back(p + ".patience", p == "adapt" ? "5" : "3");
      k.emplace_back(p + ".clip_norm", "5");
      k.emplace_back(p + ".force_compat", "false");
    }
    return k;
  }();
  return keys;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(text);
  while (std::getline(ss, cell, sep)) {
    const auto b = cell.find_first_not_of(" \t");
    const auto e = cell.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cell.substr(b, e - b + 1));
  }
  return out;
}

std::size_t parse_count(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size() || v < 0) invalid(key, "expected a non-negative integer, got '" + text + "'");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    invalid(key, "expected a non-negative integer, got '" + text + "'");
  }
}

}  // namespace

corpus::ImageShape parse_image_shape(const std::string& text, const std::string& field) {
  const auto parts = split(text, 'x');
  if (parts.size() != 3) invalid(field, "expected CxHxW, got '" + text + "'");
  corpus::ImageShape s{parse_count(parts[0], field), parse_count(parts[1], field), parse_count(parts[2], field)};
  if (s.channels == 0 || s.height == 0 || s.width == 0) invalid(field, "dimensions must be positive");
  return s;
}

std::vector<nn::FeatureSpec> parse_features(const std::string& text, const std::string& field) {
  std::vector<nn::FeatureSpec> out;
  for (const std::string& f : split(text, ',')) {
    const auto parts = split(f, ':');
    if (parts.size() != 3) invalid(field, "expected name:cardinality:dim, got '" + f + "'");
    out.push_back({parts[0], parse_count(parts[1], field), parse_count(parts[2], field)});
  }
  return out;
}

std::vector<nn::FeatureSpec> infer_features(const std::vector<const corpus::FeatureMap*>& rows, std::size_t dim) {
  std::map<std::string, int> max_id;
  for (const corpus::FeatureMap* r : rows) {
    for (const auto& [name, id] : *r) max_id[name] = std::max(max_id.count(name) ? max_id[name] : 0, id);
  }
  std::vector<nn::FeatureSpec> out;
  for (const auto& [name, id] : max_id) out.push_back({name, static_cast<std::size_t>(id) + 1, dim});
  return out;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : schema()) values_[k] = v;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigInvalid, "config " + path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) invalid(section, "key outside any section in " + path.string());
    for (const auto& [key, node] : body) set(section + "." + key, node.data());
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) invalid(key, "unknown configuration key");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) invalid(assignment, "expected section.key=value");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) invalid(key, "unknown configuration key");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) invalid(key, "expected a number, got '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    invalid(key, "expected a number, got '" + text + "'");
  }
}

std::size_t RunConfig::count(const std::string& key) const { return parse_count(get(key), key); }

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') invalid(key, "expected an unsigned integer, got '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    invalid(key, "expected an unsigned integer, got '" + text + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  invalid(key, "expected true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const { return split(get(key), ','); }

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << value << "\n";
  }
  return out.str();
}

corpus::SyntheticWorldConfig RunConfig::synthetic() const {
  corpus::SyntheticWorldConfig c;
  c.n_source_users = count("synthetic.n_source_users");
  c.n_target_users = count("synthetic.n_target_users");
  c.n_source_items = count("synthetic.n_source_items");
  c.n_target_items = count("synthetic.n_target_items");
  c.latent_dim = count("synthetic.latent_dim");
  c.text_vocab = count("synthetic.text_vocab");
  c.text_len = count("synthetic.text_len");
  c.image_shape = parse_image_shape(get("synthetic.image_shape"), "synthetic.image_shape");
  c.shifted_image_shape = parse_image_shape(get("synthetic.shifted_image_shape"), "synthetic.shifted_image_shape");
  c.modality_mix = real("synthetic.modality_mix");
  c.noise_temperature = real("synthetic.noise_temperature");
  c.min_seq_len = count("synthetic.min_seq_len");
  c.max_gen_len = count("synthetic.max_gen_len");
  c.max_seq_len = count("corpus.max_seq_len");
  c.pixel_noise = real("synthetic.pixel_noise");
  c.seed = u64("run.seed");
  c.validate();
  return c;
}

pipeline::TrainConfig RunConfig::train(const std::string& section) const {
  pipeline::TrainConfig t;
  t.stage = section == "pretrain" ? pipeline::Stage::UserPretrain : pipeline::Stage::EndToEnd;
  t.learning_rate = real(section + ".learning_rate");
  t.batch_size = count(section + ".batch_size");
  t.max_epochs = count(section + ".max_epochs");
  t.patience = count(section + ".patience");
  t.clip_norm = real(section + ".clip_norm");
  t.force_compat = flag(section + ".force_compat");
  t.seed = u64("run.seed");
  t.cpc_targets = count("objectives.cpc_targets");
  t.negatives = count("objectives.negatives");
  t.eval_k = count("eval.k");
  if (section == "pretrain") t.freeze_items = flag("pretrain.freeze_items");
  t.run_id = get("run.run_id");
  t.validate();
  return t;
}

eval::EvalOptions RunConfig::eval_options() const {
  eval::EvalOptions o;
  o.k = count("eval.k");
  if (o.k == 0) invalid("eval.k", "must be positive");
  o.mask_history = flag("eval.mask_history");
  o.run_id = get("run.run_id");
  o.user_block = 1024;
  return o;
}

pipeline::ModelConfig RunConfig::model_for(const corpus::Dataset& dataset, std::size_t uep_vocab) const {
  pipeline::ModelConfig m;
  auto& it = m.item;
  it.d_model = count("item.d_model");
  const std::string repr = get("item.representation");
  if (repr == "content") {
    it.representation = encoders::ItemRepresentation::Content;
  } else if (repr == "id") {
    it.representation = encoders::ItemRepresentation::Id;
  } else {
    invalid("item.representation", "expected content or id, got '" + repr + "'");
  }
  it.text_enabled = flag("item.text_enabled");
  it.text.vocab_size = count("item.text_vocab_size");
  it.text.max_tokens = count("item.text_max_tokens");
  it.text.d_model = it.d_model;
  it.text.n_layers = count("item.text_layers");
  it.text.n_heads = count("item.text_heads");
  it.text.ffn_mult = count("item.text_ffn_mult");
  it.text.dropout = real("item.text_dropout");
  it.vision_enabled = flag("item.vision_enabled");
  const std::string shape = get("item.vision_image_shape");
  if (shape == "auto") {
    if (auto s = dataset.catalog ? dataset.catalog->image_shape() : std::nullopt) {
      it.vision.in_channels = s->channels;
      it.vision.image_h = s->height;
      it.vision.image_w = s->width;
    }
  } else {
    const auto s = parse_image_shape(shape, "item.vision_image_shape");
    it.vision.in_channels = s.channels;
    it.vision.image_h = s.height;
    it.vision.image_w = s.width;
  }
  it.vision.conv_stages.clear();
  for (const std::string& st : list("item.vision_conv_stages")) {
    const auto parts = split(st, '/');
    if (parts.size() != 2) invalid("item.vision_conv_stages", "expected channels/stride, got '" + st + "'");
    it.vision.conv_stages.push_back({parse_count(parts[0], "item.vision_conv_stages"),
                                     parse_count(parts[1], "item.vision_conv_stages")});
  }
  it.vision.mlp_dims.clear();
  for (const std::string& d : list("item.vision_mlp_dims")) {
    it.vision.mlp_dims.push_back(parse_count(d, "item.vision_mlp_dims"));
  }
  const std::string id_vocab = get("item.id_vocab");
  if (id_vocab == "auto") {
    bool has_id_items = false;
    if (dataset.catalog) {
      for (std::size_t i = 0; i < dataset.catalog->size(); ++i) {
        has_id_items |= dataset.catalog->at(i).modality == corpus::Modality::Id;
      }
    }
    const bool need = it.representation == encoders::ItemRepresentation::Id || has_id_items;
    // Without a catalog (validation probe) a one-row table stands in.
    it.id_vocab = need ? (dataset.catalog ? dataset.catalog->size() : 1) : 0;
  } else {
    it.id_vocab = parse_count(id_vocab, "item.id_vocab");
  }
  const std::size_t fdim = count("item.feature_dim");
  if (get("item.features") == "auto") {
    std::vector<const corpus::FeatureMap*> rows;
    if (dataset.catalog) {
      for (std::size_t i = 0; i < dataset.catalog->size(); ++i) rows.push_back(&dataset.catalog->at(i).features);
    }
    it.item_features = infer_features(rows, fdim);
  } else {
    it.item_features = parse_features(get("item.features"), "item.features");
  }
  auto& u = m.user;
  u.d_model = it.d_model;
  u.n_layers = count("user.n_layers");
  u.n_heads = count("user.n_heads");
  u.ffn_mult = count("user.ffn_mult");
  u.max_positions = count("user.max_positions");
  u.dropout = real("user.dropout");
  if (u.max_positions < dataset.max_seq_len) {
    invalid("user.max_positions", "must be at least corpus.max_seq_len (" + std::to_string(dataset.max_seq_len) +
                                      ")");
  }
  if (get("user.features") == "auto") {
    std::vector<const corpus::FeatureMap*> rows;
    for (const auto& user : dataset.users) rows.push_back(&user.user_features);
    m.user_features = infer_features(rows, fdim);
  } else {
    m.user_features = parse_features(get("user.features"), "user.features");
  }
  m.uep_vocab = uep_vocab;
  m.uep_relu = flag("objectives.uep_relu");
  m.validate();
  return m;
}

void RunConfig::validate() const {
  synthetic();
  for (const char* s : {"pretrain", "train", "adapt"}) train(s);
  eval_options();
  pipeline::transfer_mode_from_string(get("adapt.mode"));
  const double f = real("corpus.fraction");
  if (!(f > 0.0 && f <= 1.0)) invalid("corpus.fraction", "must be in (0, 1]");
  for (const std::string& m : list("experiment.modes")) pipeline::transfer_mode_from_string(m);
  for (const std::string& t : list("experiment.targets")) {
    bool known = false;
    for (const char* name : corpus::kTargetNames) known |= t == name;
    if (!known) invalid("experiment.targets", "unknown target '" + t + "'");
  }
  flag("experiment.use_pretrain");
  corpus::Dataset probe;
  probe.max_seq_len = count("corpus.max_seq_len");
  model_for(probe, 0);
}

}  // namespace transrec::cli
