#include "nutrifuse/ingredient.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>

#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string clean_surface(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  int depth = 0;
  for (char ch : raw) {
    if (ch == '(') {
      ++depth;
    } else if (ch == ')') {
      if (depth > 0) --depth;
    } else if (depth == 0) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  // collapse runs of whitespace
  std::string collapsed;
  collapsed.reserve(out.size());
  bool in_space = false;
  for (char ch : out) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_space = true;
    } else {
      if (in_space && !collapsed.empty()) collapsed.push_back(' ');
      in_space = false;
      collapsed.push_back(ch);
    }
  }
  return collapsed;
}

bool is_clean(const std::string& s) {
  if (s.empty() || s != trim(s)) return false;
  if (s.find('(') != std::string::npos || s.find(')') != std::string::npos) return false;
  for (char ch : s)
    if (std::isupper(static_cast<unsigned char>(ch))) return false;
  return true;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(trim(line.substr(start)));
      return parts;
    }
    parts.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

void load_two_column(const std::string& path, std::map<std::string, std::string>& out) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open mapping file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": expected two tab-separated columns");
    const std::string key = trim(line.substr(0, tab));
    const std::string value = trim(line.substr(tab + 1));
    if (key.empty() || value.empty())
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": empty column");
    if (!out.emplace(key, value).second)
      throw VocabularyError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void IngredientVocabulary::validate_and_index() {
  synonym_to_canonical.clear();
  for (const std::string& c : canonical)
    if (!is_clean(c))
      throw VocabularyError("canonical term not lowercase/trimmed/parenthetical-free: '" + c + "'");
  for (const auto& [c, syns] : synonyms) {
    if (!canonical.count(c)) throw VocabularyError("synonyms listed for unknown canonical '" + c + "'");
    for (const std::string& s : syns) {
      if (s == c) throw VocabularyError("canonical '" + c + "' appears in its own synonym list");
      if (canonical.count(s))
        throw VocabularyError("synonym '" + s + "' is itself a canonical term");
      if (!synonym_to_canonical.emplace(s, c).second)
        throw VocabularyError("synonym '" + s + "' maps to more than one canonical");
    }
  }
  auto check_map = [&](const std::map<std::string, std::string>& m, bool allow_reject,
                       const char* label) {
    for (const auto& [key, value] : m) {
      if (canonical.count(key))
        throw VocabularyError(std::string(label) + " key '" + key + "' is already canonical");
      if (allow_reject && value == kReject) continue;
      if (!canonical.count(value))
        throw VocabularyError(std::string(label) + " value '" + value + "' is not canonical");
    }
  };
  check_map(plural_map, false, "plural_map");
  check_map(vagueness_map, true, "vagueness_map");
}

const std::vector<std::string>* IngredientVocabulary::synonyms_of(const std::string& name) const {
  auto it = synonyms.find(name);
  if (it == synonyms.end() || it->second.empty()) return nullptr;
  return &it->second;
}

void RobustnessConfig::validate() const {
  if (p_synonym < 0.0 || p_synonym > 1.0 || p_subset < 0.0 || p_subset > 1.0)
    throw ConfigError("robustness probabilities must lie in [0, 1]");
}

IngredientVocabulary load_vocabulary(const std::string& vocab_path, const std::string& plural_path,
                                     const std::string& vagueness_path) {
  IngredientVocabulary v;
  std::ifstream is(vocab_path);
  if (!is) throw IoError("cannot open vocabulary: " + vocab_path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::vector<std::string> parts = split(stripped, '|');
    const std::string& c = parts[0];
    if (c.empty()) throw VocabularyError(vocab_path + ":" + std::to_string(lineno) + ": empty canonical");
    if (!v.canonical.insert(c).second)
      throw VocabularyError(vocab_path + ":" + std::to_string(lineno) + ": duplicate canonical '" + c + "'");
    for (size_t i = 1; i < parts.size(); ++i)
      if (!parts[i].empty()) v.synonyms[c].push_back(parts[i]);
  }
  load_two_column(plural_path, v.plural_map);
  load_two_column(vagueness_path, v.vagueness_map);
  v.validate_and_index();
  return v;
}

std::string normalize_ingredient(const std::string& raw, const IngredientVocabulary& vocab) {
  if (trim(raw).empty()) throw PreconditionError("normalize_ingredient on empty string");
  std::string term = clean_surface(raw);
  if (term.empty()) throw UnmappableIngredientError("'" + raw + "' is empty after cleanup");

  if (auto it = vocab.plural_map.find(term); it != vocab.plural_map.end()) term = it->second;
  if (auto it = vocab.vagueness_map.find(term); it != vocab.vagueness_map.end()) {
    if (it->second == IngredientVocabulary::kReject)
      throw RejectedTermError("'" + term + "' is marked as a non-food term");
    term = it->second;
  }
  if (vocab.canonical.count(term)) return term;
  if (auto it = vocab.synonym_to_canonical.find(term); it != vocab.synonym_to_canonical.end())
    return it->second;
  throw UnmappableIngredientError("'" + term + "' is not in the ingredient vocabulary");
}

std::vector<std::string> apply_synonym_replacement(const std::vector<std::string>& ingredients,
                                                   const IngredientVocabulary& vocab,
                                                   const RobustnessConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<std::string> out;
  out.reserve(ingredients.size());
  for (const std::string& ing : ingredients) {
    const bool flip = rng.bernoulli(cfg.p_synonym);
    const std::vector<std::string>* syns = vocab.synonyms_of(ing);
    if (flip && syns) {
      out.push_back((*syns)[rng.uniform_int(static_cast<uint64_t>(syns->size()))]);
    } else {
      out.push_back(ing);
    }
  }
  return out;
}

std::vector<std::string> sample_ingredient_subset(const std::vector<std::string>& ingredients,
                                                  const RobustnessConfig& cfg, Rng& rng) {
  cfg.validate();
  if (ingredients.empty()) throw EmptyIngredientListError("cannot subsample an empty ingredient list");
  if (!rng.bernoulli(cfg.p_subset)) return ingredients;

  std::vector<bool> keep(ingredients.size(), false);
  for (;;) {
    bool any = false;
    for (size_t i = 0; i < ingredients.size(); ++i) {
      keep[i] = rng.bernoulli(0.5);
      any = any || keep[i];
    }
    if (any) break;
  }
  std::vector<std::string> out;
  for (size_t i = 0; i < ingredients.size(); ++i)
    if (keep[i]) out.push_back(ingredients[i]);
  return out;
}

std::vector<std::string> apply_robustness(const std::vector<std::string>& ingredients,
                                          const IngredientVocabulary& vocab,
                                          const RobustnessConfig& cfg, Rng& rng) {
  if (cfg.replacement_first) {
    std::vector<std::string> replaced = apply_synonym_replacement(ingredients, vocab, cfg, rng);
    return sample_ingredient_subset(replaced, cfg, rng);
  }
  std::vector<std::string> sampled = sample_ingredient_subset(ingredients, cfg, rng);
  return apply_synonym_replacement(sampled, vocab, cfg, rng);
}

std::string build_dialogue_prompt(const NutritionVector& nutrition, int n_turns,
                                  const std::string& templ) {
  if (n_turns < 2 || n_turns > 5)
    throw TurnRangeError("dialogue rounds must lie in [2, 5], got " + std::to_string(n_turns));
  const std::pair<std::string, std::string> subs[] = {
      {"{cal}", format_number(nutrition.calories)},
      {"{fat}", format_number(nutrition.fat)},
      {"{carb}", format_number(nutrition.carbohydrates)},
      {"{pro}", format_number(nutrition.protein)},
      {"{N}", std::to_string(n_turns)},
  };
  std::string out = templ;
  for (const auto& [token, value] : subs) {
    if (out.find(token) == std::string::npos)
      throw MissingPlaceholderError("template lacks placeholder " + token);
    for (size_t pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + value.size()))
      out.replace(pos, token.size(), value);
  }
  return out;
}

}  // namespace nf
