#include "nutrifuse/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

using nlohmann::json;

const json* find_path(const json& root, const std::string& dotted) {
  const json* cur = &root;
  size_t start = 0;
  while (start <= dotted.size()) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) return cur;
    start = dot + 1;
  }
  return nullptr;
}

std::string type_of(const json& v) { return v.type_name(); }

void collect_leaf_paths(const json& node, const std::string& prefix,
                        std::vector<std::string>& out) {
  if (node.is_object()) {
    if (node.empty() && !prefix.empty()) out.push_back(prefix);
    for (const auto& [k, v] : node.items())
      collect_leaf_paths(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (node.is_array()) {
    if (node.empty()) out.push_back(prefix);
    for (const auto& v : node) collect_leaf_paths(v, prefix + "[]", out);
  } else {
    out.push_back(prefix);
  }
}

const std::set<std::string> kGlobalKeys = {"out", "seed"};

const std::set<std::string> kVocabKeys = {"vocab.vocabulary", "vocab.plural_map",
                                          "vocab.vagueness_map"};

const std::set<std::string> kEncoderKeys = {"encoder.kind", "encoder.dim", "encoder.seed",
                                            "encoder.table", "encoder.cache"};

const std::set<std::string> kFusionKeys = {
    "fusion.backbone",       "fusion.injection_site", "fusion.input_resolution",
    "fusion.fuse_auxiliary", "fusion.embed_dim",      "fusion.l2_normalize_terms"};

const std::set<std::string> kTrainKeys = {
    "train.epochs",
    "train.batch_size",
    "train.init",
    "train.pretrained_weights",
    "train.train_manifest",
    "train.val_manifest",
    "train.optimizer.algorithm",
    "train.optimizer.lr",
    "train.optimizer.momentum",
    "train.optimizer.decay",
    "train.optimizer.epsilon",
    "train.robustness.p_synonym",
    "train.robustness.p_subset",
    "train.robustness.seed",
    "train.robustness.replacement_first"};

const std::set<std::string> kIngestKeys = {"ingest.input",      "ingest.unit_map",
                                           "ingest.output",     "ingest.split.train",
                                           "ingest.split.val",  "ingest.split.test",
                                           "ingest.split.seed", "ingest.split.prefix"};

const std::set<std::string> kNormalizeKeys = {"normalize.input", "normalize.output"};

const std::set<std::string> kEmbedKeys = {"embed_cache.manifest", "embed_cache.cache"};

const std::set<std::string> kEvalKeys = {"eval.checkpoint", "eval.manifest", "eval.protocol",
                                         "eval.stride"};

const std::set<std::string> kPredictKeys = {"predict.checkpoint", "predict.image",
                                            "predict.ingredients[]"};

const std::set<std::string> kVoteKeys = {"vote_infer.checkpoint",
                                         "vote_infer.image",
                                         "vote_infer.prompt",
                                         "vote_infer.strict",
                                         "vote_infer.client.kind",
                                         "vote_infer.client.ingredients[]",
                                         "vote_infer.client.distractors[]",
                                         "vote_infer.client.false_negative_rate",
                                         "vote_infer.client.false_positive_rate",
                                         "vote_infer.client.seed",
                                         "vote_infer.client.host",
                                         "vote_infer.client.port",
                                         "vote_infer.client.path",
                                         "vote_infer.client.token_env",
                                         "augmentation.seed",
                                         "augmentation.transforms[].kind",
                                         "augmentation.transforms[].degrees",
                                         "augmentation.transforms[].min_area",
                                         "vote.tau"};

const std::set<std::string> kDialogueKeys = {
    "dialogue.template", "dialogue.n_turns",       "dialogue.calories", "dialogue.fat",
    "dialogue.carbohydrates", "dialogue.protein", "dialogue.output"};

std::set<std::string> allowed_keys_for(const std::string& command) {
  std::set<std::string> keys = kGlobalKeys;
  auto merge = [&keys](const std::set<std::string>& more) { keys.insert(more.begin(), more.end()); };
  if (command == "ingest") {
    merge(kIngestKeys);
  } else if (command == "normalize") {
    merge(kVocabKeys);
    merge(kNormalizeKeys);
  } else if (command == "embed-cache") {
    merge(kEncoderKeys);
    merge(kEmbedKeys);
  } else if (command == "train") {
    merge(kVocabKeys);
    merge(kEncoderKeys);
    merge(kFusionKeys);
    merge(kTrainKeys);
  } else if (command == "eval") {
    merge(kEncoderKeys);
    merge(kEvalKeys);
  } else if (command == "predict") {
    merge(kVocabKeys);
    merge(kEncoderKeys);
    merge(kPredictKeys);
  } else if (command == "vote-infer") {
    merge(kVocabKeys);
    merge(kEncoderKeys);
    merge(kVoteKeys);
  } else if (command == "dialogue-template") {
    merge(kDialogueKeys);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  return keys;
}

}  // namespace

bool cfg_has(const nlohmann::json& root, const std::string& path) {
  return find_path(root, path) != nullptr;
}

std::string cfg_str(const nlohmann::json& root, const std::string& path) {
  const json* v = find_path(root, path);
  if (v == nullptr) throw ConfigError("missing config key '" + path + "'");
  if (!v->is_string())
    throw ConfigError("config key '" + path + "' must be a string, got " + type_of(*v));
  return v->get<std::string>();
}

std::string cfg_str_or(const nlohmann::json& root, const std::string& path,
                       const std::string& dflt) {
  return cfg_has(root, path) ? cfg_str(root, path) : dflt;
}

int64_t cfg_int(const nlohmann::json& root, const std::string& path) {
  const json* v = find_path(root, path);
  if (v == nullptr) throw ConfigError("missing config key '" + path + "'");
  if (!v->is_number_integer())
    throw ConfigError("config key '" + path + "' must be an integer, got " + type_of(*v));
  return v->get<int64_t>();
}

int64_t cfg_int_or(const nlohmann::json& root, const std::string& path, int64_t dflt) {
  return cfg_has(root, path) ? cfg_int(root, path) : dflt;
}

double cfg_num(const nlohmann::json& root, const std::string& path) {
  const json* v = find_path(root, path);
  if (v == nullptr) throw ConfigError("missing config key '" + path + "'");
  if (!v->is_number())
    throw ConfigError("config key '" + path + "' must be a number, got " + type_of(*v));
  return v->get<double>();
}

double cfg_num_or(const nlohmann::json& root, const std::string& path, double dflt) {
  return cfg_has(root, path) ? cfg_num(root, path) : dflt;
}

bool cfg_bool_or(const nlohmann::json& root, const std::string& path, bool dflt) {
  const json* v = find_path(root, path);
  if (v == nullptr) return dflt;
  if (!v->is_boolean())
    throw ConfigError("config key '" + path + "' must be a boolean, got " + type_of(*v));
  return v->get<bool>();
}

std::vector<std::string> cfg_str_list_or(const nlohmann::json& root, const std::string& path) {
  const json* v = find_path(root, path);
  if (v == nullptr) return {};
  if (!v->is_array())
    throw ConfigError("config key '" + path + "' must be an array, got " + type_of(*v));
  std::vector<std::string> out;
  for (const auto& e : *v) {
    if (!e.is_string()) throw ConfigError("config key '" + path + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

void apply_override(nlohmann::json& root, const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + spec + "' must look like key=value");
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* cur = &root;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override '" + spec + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    if (!cur->is_object())
      throw ConfigError("override '" + spec + "' descends into a non-object value");
    start = dot + 1;
  }
}

void check_allowed_keys(const nlohmann::json& root, const std::string& command) {
  if (!root.is_object()) throw ConfigError("config root must be an object");
  const auto allowed = allowed_keys_for(command);
  std::vector<std::string> leaves;
  collect_leaf_paths(root, "", leaves);
  for (const auto& leaf : leaves)
    if (allowed.count(leaf) == 0)
      throw ConfigError("unknown config key '" + leaf + "' for command '" + command + "'");
}

RunConfig load_run_config(const std::string& command, const std::string& config_path,
                          const std::vector<std::string>& overrides, const std::string& out_flag,
                          const std::optional<uint64_t>& seed_flag) {
  RunConfig cfg;
  cfg.command = command;
  cfg.root = json::object();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot read config file " + config_path);
    try {
      cfg.root = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + config_path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(cfg.root, o);
  if (!out_flag.empty()) cfg.root["out"] = out_flag;
  if (seed_flag.has_value()) cfg.root["seed"] = *seed_flag;
  check_allowed_keys(cfg.root, command);
  cfg.out_dir = cfg_str_or(cfg.root, "out", "nutrifuse_out");
  cfg.seed = static_cast<uint64_t>(cfg_int_or(cfg.root, "seed", 0));
  cfg.root["out"] = cfg.out_dir;
  cfg.root["seed"] = cfg.seed;
  return cfg;
}

void write_config_echo(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  json echo;
  echo["command"] = cfg.command;
  echo["config"] = cfg.root;
  std::ofstream os(cfg.out_dir + "/resolved_config.json");
  if (!os) throw IoError("cannot write resolved config echo");
  os << echo.dump(2) << "\n";
}

FusionConfig fusion_config_from(const nlohmann::json& root) {
  FusionConfig fc = FusionConfig::defaults(
      backbone_from_string(cfg_str_or(root, "fusion.backbone", "resnet50")),
      cfg_int_or(root, "fusion.embed_dim", 512));
  fc.injection_site = cfg_str_or(root, "fusion.injection_site", fc.injection_site);
  fc.input_resolution =
      static_cast<int>(cfg_int_or(root, "fusion.input_resolution", fc.input_resolution));
  fc.fuse_auxiliary = cfg_bool_or(root, "fusion.fuse_auxiliary", fc.fuse_auxiliary);
  fc.l2_normalize_terms = cfg_bool_or(root, "fusion.l2_normalize_terms", fc.l2_normalize_terms);
  fc.validate();
  return fc;
}

TrainConfig train_config_from(const nlohmann::json& root, uint64_t default_seed) {
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg_int_or(root, "train.epochs", tc.epochs));
  tc.batch_size = static_cast<int>(cfg_int_or(root, "train.batch_size", tc.batch_size));
  tc.init = init_mode_from_string(cfg_str_or(root, "train.init", "random"));
  tc.pretrained_weights = cfg_str_or(root, "train.pretrained_weights", "");
  tc.seed = default_seed;
  tc.optimizer.algorithm = cfg_str_or(root, "train.optimizer.algorithm", tc.optimizer.algorithm);
  tc.optimizer.lr = cfg_num_or(root, "train.optimizer.lr", tc.optimizer.lr);
  tc.optimizer.momentum = cfg_num_or(root, "train.optimizer.momentum", tc.optimizer.momentum);
  tc.optimizer.decay = cfg_num_or(root, "train.optimizer.decay", tc.optimizer.decay);
  tc.optimizer.epsilon = cfg_num_or(root, "train.optimizer.epsilon", tc.optimizer.epsilon);
  tc.robustness.p_synonym = cfg_num_or(root, "train.robustness.p_synonym", tc.robustness.p_synonym);
  tc.robustness.p_subset = cfg_num_or(root, "train.robustness.p_subset", tc.robustness.p_subset);
  tc.robustness.seed =
      static_cast<uint64_t>(cfg_int_or(root, "train.robustness.seed", static_cast<int64_t>(default_seed)));
  tc.robustness.replacement_first =
      cfg_bool_or(root, "train.robustness.replacement_first", tc.robustness.replacement_first);
  tc.validate();
  return tc;
}

AugmentationSpec augmentation_from(const nlohmann::json& root, uint64_t default_seed) {
  AugmentationSpec spec = AugmentationSpec::defaults(
      static_cast<uint64_t>(cfg_int_or(root, "augmentation.seed", static_cast<int64_t>(default_seed))));
  const json* transforms = find_path(root, "augmentation.transforms");
  if (transforms != nullptr) {
    if (!transforms->is_array())
      throw ConfigError("config key 'augmentation.transforms' must be an array");
    spec.transforms.clear();
    for (const auto& tj : *transforms) {
      Transform t;
      const std::string kind = tj.value("kind", "");
      if (kind == "identity") t.kind = Transform::Kind::identity;
      else if (kind == "rotation") t.kind = Transform::Kind::rotation;
      else if (kind == "horizontal_flip") t.kind = Transform::Kind::horizontal_flip;
      else if (kind == "random_crop") t.kind = Transform::Kind::random_crop;
      else if (kind == "grayscale") t.kind = Transform::Kind::grayscale;
      else throw ConfigError("unknown transform kind '" + kind + "'");
      t.degrees = tj.value("degrees", 15.0);
      t.min_area = tj.value("min_area", 0.7);
      spec.transforms.push_back(t);
    }
  }
  spec.validate();
  return spec;
}

VoteConfig vote_config_from(const nlohmann::json& root) {
  VoteConfig vc;
  vc.tau = static_cast<int>(cfg_int_or(root, "vote.tau", vc.tau));
  vc.validate();
  return vc;
}

bool has_vocabulary(const nlohmann::json& root) {
  return find_path(root, "vocab.vocabulary") != nullptr;
}

IngredientVocabulary vocabulary_from(const nlohmann::json& root) {
  return load_vocabulary(cfg_str(root, "vocab.vocabulary"), cfg_str(root, "vocab.plural_map"),
                         cfg_str(root, "vocab.vagueness_map"));
}

std::unique_ptr<TextEncoder> encoder_from(const nlohmann::json& root) {
  const std::string kind = cfg_str_or(root, "encoder.kind", "hash");
  if (kind == "hash") {
    const int64_t dim = cfg_int_or(root, "encoder.dim", 512);
    const uint64_t seed =
        static_cast<uint64_t>(cfg_int_or(root, "encoder.seed", 0x7e57e4c0deLL));
    return std::make_unique<HashStubEncoder>(dim, seed);
  }
  if (kind == "table") return std::make_unique<TableEncoder>(cfg_str(root, "encoder.table"));
  throw ConfigError("unknown encoder kind '" + kind + "'");
}

std::unique_ptr<EmbeddingCache> cache_from(const nlohmann::json& root, int64_t dim) {
  const std::string path = cfg_str_or(root, "encoder.cache", "");
  if (path.empty()) return nullptr;
  return std::make_unique<EmbeddingCache>(path, dim);
}

std::unique_ptr<LmmClient> client_from(const nlohmann::json& root, uint64_t default_seed) {
  const std::string kind = cfg_str_or(root, "vote_infer.client.kind", "oracle");
  if (kind == "oracle")
    return std::make_unique<OracleLmmClient>(cfg_str_list_or(root, "vote_infer.client.ingredients"));
  if (kind == "noisy") {
    return std::make_unique<NoisyOracleLmmClient>(
        cfg_str_list_or(root, "vote_infer.client.ingredients"),
        cfg_str_list_or(root, "vote_infer.client.distractors"),
        cfg_num_or(root, "vote_infer.client.false_negative_rate", 0.0),
        cfg_num_or(root, "vote_infer.client.false_positive_rate", 0.0),
        static_cast<uint64_t>(
            cfg_int_or(root, "vote_infer.client.seed", static_cast<int64_t>(default_seed))));
  }
  if (kind == "http") {
    return std::make_unique<HttpLmmClient>(
        cfg_str(root, "vote_infer.client.host"),
        static_cast<int>(cfg_int_or(root, "vote_infer.client.port", 80)),
        cfg_str_or(root, "vote_infer.client.path", "/"),
        cfg_str_or(root, "vote_infer.client.token_env", "NUTRIFUSE_LMM_TOKEN"));
  }
  throw ConfigError("unknown client kind '" + kind + "'");
}

}  // namespace nf
