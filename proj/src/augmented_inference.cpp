#include "nutrifuse/augmented_inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

std::string Transform::name() const {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::rotation: return "rotation";
    case Kind::horizontal_flip: return "horizontal_flip";
    case Kind::random_crop: return "random_crop";
    case Kind::grayscale: return "grayscale";
  }
  throw ConfigError("unknown transform");
}

void AugmentationSpec::validate() const {
  if (transforms.empty()) throw ConfigError("augmentation spec needs at least one transform");
  for (const auto& t : transforms) {
    if (t.kind == Transform::Kind::rotation && (t.degrees <= 0.0 || t.degrees > 180.0))
      throw ConfigError("rotation degrees must be in (0, 180]");
    if (t.kind == Transform::Kind::random_crop && (t.min_area < 0.7 || t.min_area > 1.0))
      throw ConfigError("random_crop must keep at least 70% of the area");
  }
}

AugmentationSpec AugmentationSpec::defaults(uint64_t seed) {
  AugmentationSpec spec;
  spec.seed = seed;
  spec.transforms = {
      {Transform::Kind::identity, 0.0, 0.0},
      {Transform::Kind::rotation, 15.0, 0.0},
      {Transform::Kind::horizontal_flip, 0.0, 0.0},
      {Transform::Kind::random_crop, 0.0, 0.7},
      {Transform::Kind::grayscale, 0.0, 0.0},
  };
  return spec;
}

Image augment_image(const Image& image, int k, const AugmentationSpec& spec) {
  if (k < 1 || k > spec.k()) throw IndexError("augmentation index out of range");
  const Transform& t = spec.transforms[static_cast<size_t>(k - 1)];
  Rng rng = Rng::from_parts(spec.seed, static_cast<uint64_t>(k));
  switch (t.kind) {
    case Transform::Kind::identity:
      return image;
    case Transform::Kind::rotation:
      return rotate_bilinear(image, rng.uniform(-t.degrees, t.degrees));
    case Transform::Kind::horizontal_flip:
      return hflip(image);
    case Transform::Kind::random_crop: {
      const double area = rng.uniform(t.min_area, 1.0);
      const double side = std::sqrt(area);
      const int ch = std::min(image.h, static_cast<int>(std::ceil(image.h * side)));
      const int cw = std::min(image.w, static_cast<int>(std::ceil(image.w * side)));
      const int y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(image.h - ch + 1)));
      const int x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(image.w - cw + 1)));
      return resize_bilinear(crop(image, y, x, ch, cw), image.h, image.w);
    }
    case Transform::Kind::grayscale:
      return to_gray(image);
  }
  throw ConfigError("unknown transform");
}

void VoteConfig::validate() const {
  if (tau < 1) throw ConfigError("vote threshold must be >= 1");
}

IngredientPredictionSet IngredientPredictionSet::from_sets(
    std::vector<std::set<std::string>> sets) {
  IngredientPredictionSet p;
  p.per_augmentation = std::move(sets);
  for (const auto& s : p.per_augmentation)
    for (const auto& ing : s) ++p.counts[ing];
  return p;
}

void IngredientPredictionSet::validate() const {
  std::map<std::string, int> recount;
  for (const auto& s : per_augmentation)
    for (const auto& ing : s) ++recount[ing];
  if (recount != counts) throw PreconditionError("ingredient counts out of sync with sets");
  for (const auto& [ing, n] : counts)
    if (n < 1 || n > static_cast<int>(per_augmentation.size()))
      throw PreconditionError("ingredient count out of range for '" + ing + "'");
}

std::set<std::string> majority_vote(const IngredientPredictionSet& preds, const VoteConfig& cfg) {
  cfg.validate();
  if (preds.per_augmentation.empty())
    throw PreconditionError("majority vote over an empty prediction set");
  std::set<std::string> voted;
  for (const auto& [ing, n] : preds.counts)
    if (n >= cfg.tau) voted.insert(ing);
  if (!voted.empty() || preds.counts.empty()) return voted;
  int max_count = 0;
  for (const auto& [ing, n] : preds.counts) max_count = std::max(max_count, n);
  for (const auto& [ing, n] : preds.counts)
    if (n == max_count) voted.insert(ing);
  return voted;
}

namespace {

std::string join_terms(const std::vector<std::string>& terms) {
  std::string out;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (i > 0) out += ", ";
    out += terms[i];
  }
  return out;
}

}  // namespace

OracleLmmClient::OracleLmmClient(std::vector<std::string> ingredients)
    : ingredients_(std::move(ingredients)) {}

std::string OracleLmmClient::query(const Image&, const std::string&) {
  return join_terms(ingredients_);
}

NoisyOracleLmmClient::NoisyOracleLmmClient(std::vector<std::string> ingredients,
                                           std::vector<std::string> distractors,
                                           double false_negative_rate, double false_positive_rate,
                                           uint64_t seed)
    : ingredients_(std::move(ingredients)),
      distractors_(std::move(distractors)),
      fn_rate_(false_negative_rate),
      fp_rate_(false_positive_rate),
      seed_(seed) {
  if (fn_rate_ < 0.0 || fn_rate_ > 1.0 || fp_rate_ < 0.0 || fp_rate_ > 1.0)
    throw ConfigError("noise rates must be in [0, 1]");
}

std::string NoisyOracleLmmClient::query(const Image&, const std::string&) {
  static std::mutex mu;
  uint64_t call;
  {
    std::lock_guard<std::mutex> lock(mu);
    call = calls_++;
  }
  Rng rng = Rng::from_parts(seed_, call);
  std::vector<std::string> terms;
  for (const auto& ing : ingredients_)
    if (!rng.bernoulli(fn_rate_)) terms.push_back(ing);
  for (const auto& d : distractors_)
    if (rng.bernoulli(fp_rate_)) terms.push_back(d);
  return join_terms(terms);
}

namespace {

std::string base64_encode(const std::string& in) {
  static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= in.size(); i += 3) {
    const uint32_t v = static_cast<uint8_t>(in[i]) << 16 |
                       static_cast<uint8_t>(in[i + 1]) << 8 | static_cast<uint8_t>(in[i + 2]);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
  }
  if (i + 1 == in.size()) {
    const uint32_t v = static_cast<uint8_t>(in[i]) << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == in.size()) {
    const uint32_t v = static_cast<uint8_t>(in[i]) << 16 | static_cast<uint8_t>(in[i + 1]) << 8;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

}  // namespace

HttpLmmClient::HttpLmmClient(std::string host, int port, std::string path, std::string token_env)
    : host_(std::move(host)), port_(port), path_(std::move(path)), token_env_(std::move(token_env)) {}

std::string HttpLmmClient::describe() const {
  return "http://" + host_ + ":" + std::to_string(port_) + path_;
}

std::string HttpLmmClient::query(const Image& image, const std::string& prompt) {
  nlohmann::json body;
  body["prompt"] = prompt;
  body["image_ppm_base64"] = base64_encode(encode_ppm(ensure_rgb(image)));

  httplib::Client cli(host_, port_);
  httplib::Headers headers;
  if (const char* token = std::getenv(token_env_.c_str()); token != nullptr && *token != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + token);
  auto res = cli.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw ClientError("cannot reach " + describe());
  if (res->status < 200 || res->status >= 300)
    throw ClientError(describe() + " returned HTTP " + std::to_string(res->status));
  return res->body;
}

std::set<std::string> parse_ingredient_reply(const std::string& reply,
                                             const IngredientVocabulary& vocab, bool strict) {
  std::vector<std::string> terms;
  std::string cur;
  for (char ch : reply + ",") {
    if (ch == ',' || ch == '\n') {
      const auto b = cur.find_first_not_of(" \t\r");
      if (b != std::string::npos) {
        const auto e = cur.find_last_not_of(" \t\r");
        terms.push_back(cur.substr(b, e - b + 1));
      }
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  std::set<std::string> parsed;
  for (const auto& term : terms) {
    try {
      parsed.insert(normalize_ingredient(term, vocab));
    } catch (const RejectedTermError&) {
    } catch (const UnmappableIngredientError&) {
      if (strict) throw ParseError("unrecognized ingredient term '" + term + "'");
      std::cerr << "warning: dropping unrecognized ingredient term '" << term << "'\n";
    }
  }
  return parsed;
}

std::set<std::string> query_ingredients(const Image& image, LmmClient& client,
                                        const IngredientVocabulary& vocab,
                                        const std::string& prompt, bool strict) {
  return parse_ingredient_reply(client.query(image, prompt), vocab, strict);
}

AugmentedPrediction predict_with_augmented_ingredients(
    const Image& image, FusionModel& model, LmmClient& client, const AugmentationSpec& spec,
    const VoteConfig& vote_cfg, const IngredientVocabulary& vocab, TextEncoder& encoder,
    const std::string& prompt, EmbeddingCache* cache, bool strict) {
  spec.validate();
  vote_cfg.validate();
  AugmentedPrediction out;
  std::vector<std::set<std::string>> sets;
  for (int k = 1; k <= spec.k(); ++k) {
    Image view = augment_image(image, k, spec);
    std::string reply = client.query(view, prompt);
    out.raw_replies.push_back(reply);
    sets.push_back(parse_ingredient_reply(reply, vocab, strict));
  }
  out.votes = IngredientPredictionSet::from_sets(std::move(sets));
  out.voted = majority_vote(out.votes, vote_cfg);

  std::vector<std::string> voted_list(out.voted.begin(), out.voted.end());
  Image sized = resize_bilinear(ensure_rgb(image), model.config().input_resolution,
                                model.config().input_resolution);
  out.nutrition = model.predict(image_to_tensor(sized), voted_list, encoder, cache);
  return out;
}

std::string audit_line(const AugmentedPrediction& result, const std::string& image_ref, int tau) {
  nlohmann::json j;
  j["image"] = image_ref;
  j["tau"] = tau;
  j["replies"] = result.raw_replies;
  nlohmann::json parsed = nlohmann::json::array();
  for (const auto& s : result.votes.per_augmentation)
    parsed.push_back(std::vector<std::string>(s.begin(), s.end()));
  j["parsed"] = parsed;
  j["counts"] = result.votes.counts;
  j["voted"] = std::vector<std::string>(result.voted.begin(), result.voted.end());
  j["prediction"] = {{"calories", result.nutrition.calories},
                     {"fat", result.nutrition.fat},
                     {"carbohydrates", result.nutrition.carbohydrates},
                     {"protein", result.nutrition.protein}};
  return j.dump();
}

}  // namespace nf
