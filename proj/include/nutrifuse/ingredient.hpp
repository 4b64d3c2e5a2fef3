#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "nutrifuse/data_model.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

struct IngredientVocabulary {
  static constexpr const char* kReject = "REJECT";

  std::set<std::string> canonical;
  std::map<std::string, std::vector<std::string>> synonyms;  // canonical -> synonym list
  std::map<std::string, std::string> plural_map;             // surface form -> canonical
  std::map<std::string, std::string> vagueness_map;          // vague term -> canonical or REJECT
  std::map<std::string, std::string> synonym_to_canonical;   // derived reverse index

  void validate_and_index();
  const std::vector<std::string>* synonyms_of(const std::string& name) const;
};

struct RobustnessConfig {
  double p_synonym = 0.5;
  double p_subset = 0.5;
  uint64_t seed = 0;
  bool replacement_first = true;  // order of the two transforms is not pinned by the method

  void validate() const;
};

IngredientVocabulary load_vocabulary(const std::string& vocab_path,
                                     const std::string& plural_path,
                                     const std::string& vagueness_path);

// lowercase, strip parentheticals, collapse whitespace, then map through
// plural and vagueness tables into the canonical vocabulary
std::string normalize_ingredient(const std::string& raw, const IngredientVocabulary& vocab);

std::vector<std::string> apply_synonym_replacement(const std::vector<std::string>& ingredients,
                                                   const IngredientVocabulary& vocab,
                                                   const RobustnessConfig& cfg, Rng& rng);

std::vector<std::string> sample_ingredient_subset(const std::vector<std::string>& ingredients,
                                                  const RobustnessConfig& cfg, Rng& rng);

std::vector<std::string> apply_robustness(const std::vector<std::string>& ingredients,
                                          const IngredientVocabulary& vocab,
                                          const RobustnessConfig& cfg, Rng& rng);

std::string build_dialogue_prompt(const NutritionVector& nutrition, int n_turns,
                                  const std::string& templ);

}  // namespace nf
