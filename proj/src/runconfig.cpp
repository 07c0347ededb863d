#include "ipdfer/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "ipdfer/errors.hpp"

namespace ipdfer::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<std::uint64_t>(r);
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

}  // namespace

KeyValues KeyValues::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("config: empty key");
  entries_[key] = value;
}

void KeyValues::set_line(const std::string& kev) {
  const auto eq = kev.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kev + "'");
  set(trim(kev.substr(0, eq)), trim(kev.substr(eq + 1)));
}

const std::vector<KeySpec>& RunConfig::registry() {
  static const std::vector<KeySpec> keys = {
      {"data.n_identities", "20", "number of identities in the generated dataset"},
      {"data.yaws", "0,15,25,35,45", "yaw grid in degrees, each in [0,50]"},
      {"data.k_expressions", "4", "number of expression classes (class 0 is neutral)"},
      {"data.n_folds", "5", "identity-disjoint folds"},
      {"data.height", "32", "image height"},
      {"data.width", "32", "image width"},
      {"data.channels", "1", "1 (graymap) or 3 (pixmap)"},
      {"data.seed", "1", "dataset seed recorded in the file"},
      {"model.feature_dim", "64", "encoder output dimension"},
      {"model.widths", "16,32,64", "channel widths of the three conv blocks"},
      {"pretrain.epochs", "60", "identity pretraining epochs"},
      {"pretrain.lr", "0.005", "identity pretraining learning rate"},
      {"pretrain.batch_size", "32", "identity pretraining batch size"},
      {"pretrain.seed", "1", "identity pretraining seed"},
      {"train.mode", "ipd", "baseline | id-only | ipd"},
      {"train.batch_size", "32", "training batch size"},
      {"train.epochs", "30", "training epochs"},
      {"train.lr", "0.005", "base learning rate"},
      {"train.lr_decay", "0.1", "learning-rate decay factor"},
      {"train.lr_decay_every", "10", "epochs between decays"},
      {"train.seed", "1", "training seed (init + batch order)"},
      {"train.fold", "0", "held-out fold index"},
      {"train.lambda1", "0.001", "fake-neutral adversarial weight"},
      {"train.lambda2", "0.001", "fake-expressional adversarial weight"},
      {"train.lambda3", "1", "identity consistency weight"},
      {"train.lambda4", "10", "reconstruction weight"},
      {"train.beta1", "0.5", "feature orthogonality weight"},
      {"train.beta2", "1", "pose confusion weight"},
      {"dataset", "", "path to a dataset file"},
      {"id_checkpoint", "", "path to a pretrained identity encoder checkpoint"},
      {"checkpoint", "", "path to a trained model checkpoint"},
      {"checkpoints", "", "comma-separated checkpoints for multi-column eval"},
      {"eval.split", "test", "train | test | all"},
      {"synth.count", "8", "number of samples to synthesize panels for"},
  };
  return keys;
}

RunConfig RunConfig::resolve(const KeyValues& kv) {
  std::map<std::string, std::string> merged;
  for (const KeySpec& spec : registry()) merged[spec.key] = spec.default_value;
  for (const auto& [key, value] : kv.entries()) {
    if (merged.find(key) == merged.end()) throw ConfigError("config: unknown key '" + key + "'");
    merged[key] = value;
  }

  RunConfig cfg;
  auto geti = [&](const char* key) { return static_cast<int>(parse_int(key, merged[key])); };
  auto getd = [&](const char* key) { return parse_double(key, merged[key]); };

  cfg.data.n_identities = geti("data.n_identities");
  cfg.data.yaws.clear();
  for (const std::string& y : split(merged["data.yaws"], ','))
    cfg.data.yaws.push_back(parse_double("data.yaws", y));
  cfg.data.k_expressions = geti("data.k_expressions");
  cfg.data.n_folds = geti("data.n_folds");
  cfg.data.shape.height = geti("data.height");
  cfg.data.shape.width = geti("data.width");
  cfg.data.shape.channels = geti("data.channels");
  cfg.data.seed = parse_u64("data.seed", merged["data.seed"]);

  cfg.model.feature_dim = geti("model.feature_dim");
  {
    auto widths = split(merged["model.widths"], ',');
    if (widths.size() != 3) throw ConfigError("config: model.widths expects three comma-separated values");
    for (int i = 0; i < 3; ++i)
      cfg.model.widths[static_cast<std::size_t>(i)] = static_cast<int>(parse_int("model.widths", widths[static_cast<std::size_t>(i)]));
  }
  cfg.model.height = cfg.data.shape.height;
  cfg.model.width = cfg.data.shape.width;
  cfg.model.channels = cfg.data.shape.channels;
  cfg.model.k_expressions = cfg.data.k_expressions;
  cfg.model.k_pose = data::kPoseBuckets;

  cfg.pretrain.epochs = geti("pretrain.epochs");
  cfg.pretrain.lr = getd("pretrain.lr");
  cfg.pretrain.batch_size = geti("pretrain.batch_size");
  cfg.pretrain.seed = parse_u64("pretrain.seed", merged["pretrain.seed"]);

  cfg.train.mode = mode_from_name(merged["train.mode"]);
  cfg.train.batch_size = geti("train.batch_size");
  cfg.train.epochs = geti("train.epochs");
  cfg.train.lr = getd("train.lr");
  cfg.train.lr_decay = getd("train.lr_decay");
  cfg.train.lr_decay_every = geti("train.lr_decay_every");
  cfg.train.seed = parse_u64("train.seed", merged["train.seed"]);
  cfg.train.fold = geti("train.fold");
  cfg.pretrain.fold = cfg.train.fold;
  cfg.train.weights.lambda1 = getd("train.lambda1");
  cfg.train.weights.lambda2 = getd("train.lambda2");
  cfg.train.weights.lambda3 = getd("train.lambda3");
  cfg.train.weights.lambda4 = getd("train.lambda4");
  cfg.train.weights.beta1 = getd("train.beta1");
  cfg.train.weights.beta2 = getd("train.beta2");

  cfg.dataset_path = merged["dataset"];
  cfg.id_checkpoint = merged["id_checkpoint"];
  cfg.checkpoint = merged["checkpoint"];
  if (!merged["checkpoints"].empty()) cfg.checkpoints = split(merged["checkpoints"], ',');
  cfg.eval_split = merged["eval.split"];
  if (cfg.eval_split != "train" && cfg.eval_split != "test" && cfg.eval_split != "all")
    throw ConfigError("config: eval.split must be train, test, or all");
  cfg.synth_count = geti("synth.count");

  for (const KeySpec& spec : registry()) cfg.resolved_.emplace_back(spec.key, merged[spec.key]);
  return cfg;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& [key, value] : resolved_) os << key << " = " << value << "\n";
  return os.str();
}

}  // namespace ipdfer::config
