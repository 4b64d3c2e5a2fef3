#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nutrifuse/augmented_inference.hpp"
#include "nutrifuse/fusion_config.hpp"
#include "nutrifuse/ingredient.hpp"
#include "nutrifuse/text_embedding.hpp"
#include "nutrifuse/training.hpp"

namespace nf {

// one structured config file shared by every command, with per-command
// sections; command-line overrides rewrite keys before validation
struct RunConfig {
  std::string command;
  nlohmann::json root;
  std::string out_dir;
  uint64_t seed = 0;
};

// "a.b.c=value"; the value is parsed as structured text when possible,
// otherwise taken as a string
void apply_override(nlohmann::json& root, const std::string& spec);

// rejects keys outside the command's schema, naming the offending key
void check_allowed_keys(const nlohmann::json& root, const std::string& command);

RunConfig load_run_config(const std::string& command, const std::string& config_path,
                          const std::vector<std::string>& overrides, const std::string& out_flag,
                          const std::optional<uint64_t>& seed_flag);

// <out>/resolved_config.json, sufficient to reproduce the run
void write_config_echo(const RunConfig& cfg);

// dotted-path accessors; missing required keys and wrong types -> ConfigError
bool cfg_has(const nlohmann::json& root, const std::string& path);
std::string cfg_str(const nlohmann::json& root, const std::string& path);
std::string cfg_str_or(const nlohmann::json& root, const std::string& path,
                       const std::string& dflt);
int64_t cfg_int(const nlohmann::json& root, const std::string& path);
int64_t cfg_int_or(const nlohmann::json& root, const std::string& path, int64_t dflt);
double cfg_num(const nlohmann::json& root, const std::string& path);
double cfg_num_or(const nlohmann::json& root, const std::string& path, double dflt);
bool cfg_bool_or(const nlohmann::json& root, const std::string& path, bool dflt);
std::vector<std::string> cfg_str_list_or(const nlohmann::json& root, const std::string& path);

// section builders; every accessor turns malformed values into ConfigError
FusionConfig fusion_config_from(const nlohmann::json& root);
TrainConfig train_config_from(const nlohmann::json& root, uint64_t default_seed);
AugmentationSpec augmentation_from(const nlohmann::json& root, uint64_t default_seed);
VoteConfig vote_config_from(const nlohmann::json& root);
IngredientVocabulary vocabulary_from(const nlohmann::json& root);
bool has_vocabulary(const nlohmann::json& root);
std::unique_ptr<TextEncoder> encoder_from(const nlohmann::json& root);
std::unique_ptr<EmbeddingCache> cache_from(const nlohmann::json& root, int64_t dim);
std::unique_ptr<LmmClient> client_from(const nlohmann::json& root, uint64_t default_seed);

}  // namespace nf
