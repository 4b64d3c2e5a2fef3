#include "nutrifuse/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nutrifuse/augmented_inference.hpp"
#include "nutrifuse/data_model.hpp"
#include "nutrifuse/errors.hpp"
#include "nutrifuse/evaluation.hpp"
#include "nutrifuse/run_config.hpp"
#include "nutrifuse/sample_source.hpp"
#include "nutrifuse/training.hpp"

namespace nf {

namespace {

constexpr const char* kDefaultIngredientPrompt =
    "List the visible food ingredients in this photo as a comma-separated list. "
    "Exclude utensils, packaging, and any other non-food items.";

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void cmd_ingest(const RunConfig& cfg) {
  DatasetManifest manifest =
      ingest_manifest(cfg_str(cfg.root, "ingest.input"), cfg_str(cfg.root, "ingest.unit_map"));
  const std::string output =
      cfg_str_or(cfg.root, "ingest.output", cfg.out_dir + "/manifest.jsonl");
  save_manifest(output, manifest);
  std::cout << "ingested " << manifest.samples.size() << " samples -> " << output << "\n";

  if (cfg_has(cfg.root, "ingest.split.train")) {
    SplitSpec spec;
    spec.train_fraction = cfg_num(cfg.root, "ingest.split.train");
    spec.val_fraction = cfg_num(cfg.root, "ingest.split.val");
    spec.test_fraction = cfg_num(cfg.root, "ingest.split.test");
    spec.seed = static_cast<uint64_t>(
        cfg_int_or(cfg.root, "ingest.split.seed", static_cast<int64_t>(cfg.seed)));
    SplitResult split = split_dataset(manifest, spec);
    const std::string prefix = cfg_str_or(cfg.root, "ingest.split.prefix", cfg.out_dir + "/split");
    save_manifest(prefix + "_train.jsonl", split.train);
    save_manifest(prefix + "_val.jsonl", split.val);
    save_manifest(prefix + "_test.jsonl", split.test);
    std::cout << "split " << split.train.samples.size() << "/" << split.val.samples.size() << "/"
              << split.test.samples.size() << " -> " << prefix << "_{train,val,test}.jsonl\n";
  }
}

void cmd_normalize(const RunConfig& cfg) {
  IngredientVocabulary vocab = vocabulary_from(cfg.root);
  std::ifstream is(cfg_str(cfg.root, "normalize.input"));
  if (!is) throw IoError("cannot read " + cfg_str(cfg.root, "normalize.input"));
  const std::string output =
      cfg_str_or(cfg.root, "normalize.output", cfg.out_dir + "/normalized.tsv");
  std::ofstream os(output);
  if (!os) throw IoError("cannot write " + output);

  size_t ok = 0, rejected = 0, unmappable = 0;
  std::string line;
  while (std::getline(is, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    const std::string term = line.substr(b, e - b + 1);
    try {
      const std::string canonical = normalize_ingredient(term, vocab);
      os << term << "\tok\t" << canonical << "\n";
      ++ok;
    } catch (const RejectedTermError&) {
      os << term << "\trejected\t-\n";
      ++rejected;
    } catch (const UnmappableIngredientError&) {
      os << term << "\tunmappable\t-\n";
      ++unmappable;
    }
  }
  std::cout << "normalized " << ok << " terms (" << rejected << " rejected, " << unmappable
            << " unmappable) -> " << output << "\n";
}

void cmd_embed_cache(const RunConfig& cfg) {
  auto encoder = encoder_from(cfg.root);
  DatasetManifest manifest = load_manifest(cfg_str(cfg.root, "embed_cache.manifest"));
  const std::string cache_path =
      cfg_str_or(cfg.root, "embed_cache.cache", cfg.out_dir + "/embeddings.cache");
  EmbeddingCache cache(cache_path, encoder->dim());
  for (const auto& s : manifest.samples)
    for (const auto& ing : s.ingredients) embed_ingredient(ing, *encoder, &cache);
  std::cout << "cache holds " << cache.size() << " embeddings -> " << cache_path << "\n";
}

void cmd_train(const RunConfig& cfg) {
  FusionConfig fusion = fusion_config_from(cfg.root);
  TrainConfig tcfg = train_config_from(cfg.root, cfg.seed);
  auto encoder = encoder_from(cfg.root);
  auto cache = cache_from(cfg.root, encoder->dim());
  std::optional<IngredientVocabulary> vocab;
  if (has_vocabulary(cfg.root)) vocab = vocabulary_from(cfg.root);

  ManifestSource train_src(load_manifest(cfg_str(cfg.root, "train.train_manifest")));
  ManifestSource val_src(load_manifest(cfg_str(cfg.root, "train.val_manifest")));

  TrainResult result = train_model(tcfg, fusion, train_src, val_src, *encoder,
                                   vocab ? &*vocab : nullptr, cfg.out_dir, cache.get());

  nlohmann::json j;
  j["best_checkpoint"] = result.best_checkpoint;
  j["best_epoch"] = result.best_epoch;
  j["best_val_score"] = result.best_val_score;
  j["epoch_losses"] = result.epoch_losses;
  j["val_scores"] = result.val_scores;
  j["step_losses"] = result.step_losses;
  std::ofstream os(cfg.out_dir + "/train_result.json");
  if (!os) throw IoError("cannot write train result");
  os << j.dump(2) << "\n";
  std::cout << "best epoch " << result.best_epoch << " (val score " << result.best_val_score
            << ") -> " << result.best_checkpoint << "\n";
}

void cmd_eval(const RunConfig& cfg) {
  FusionModel model = FusionModel::load_checkpoint(cfg_str(cfg.root, "eval.checkpoint"));
  auto encoder = encoder_from(cfg.root);
  auto cache = cache_from(cfg.root, encoder->dim());
  ManifestSource test_src(load_manifest(cfg_str(cfg.root, "eval.manifest")));
  const Protocol protocol =
      protocol_from_string(cfg_str_or(cfg.root, "eval.protocol", "single_image"));

  EvalReport report;
  switch (protocol) {
    case Protocol::single_image:
      report = evaluate_single_image(model, test_src, *encoder, cache.get());
      break;
    case Protocol::protocol1:
      report = evaluate_protocol1(model, test_src, cfg_int_or(cfg.root, "eval.stride", 1),
                                  *encoder, cache.get());
      break;
    case Protocol::protocol2:
      report = evaluate_protocol2(model, test_src, *encoder, cache.get());
      break;
  }
  write_report_files(report, cfg.out_dir + "/report.txt", cfg.out_dir + "/report.json");
  std::cout << render_report(report);
}

void cmd_predict(const RunConfig& cfg) {
  FusionModel model = FusionModel::load_checkpoint(cfg_str(cfg.root, "predict.checkpoint"));
  auto encoder = encoder_from(cfg.root);
  auto cache = cache_from(cfg.root, encoder->dim());
  Image image = ensure_rgb(load_image(cfg_str(cfg.root, "predict.image")));
  image = resize_bilinear(image, model.config().input_resolution,
                          model.config().input_resolution);

  std::vector<std::string> ingredients = cfg_str_list_or(cfg.root, "predict.ingredients");
  if (has_vocabulary(cfg.root)) {
    IngredientVocabulary vocab = vocabulary_from(cfg.root);
    for (auto& ing : ingredients) ing = normalize_ingredient(ing, vocab);
  }

  NutritionPrediction pred = clamp_nonnegative(
      model.predict(image_to_tensor(image), ingredients, *encoder, cache.get()));
  nlohmann::json j = {{"calories", pred.calories},
                      {"fat", pred.fat},
                      {"carbohydrates", pred.carbohydrates},
                      {"protein", pred.protein}};
  std::ofstream os(cfg.out_dir + "/prediction.json");
  if (!os) throw IoError("cannot write prediction");
  os << j.dump(2) << "\n";
  std::cout << j.dump() << "\n";
}

void cmd_vote_infer(const RunConfig& cfg) {
  FusionModel model = FusionModel::load_checkpoint(cfg_str(cfg.root, "vote_infer.checkpoint"));
  IngredientVocabulary vocab = vocabulary_from(cfg.root);
  auto encoder = encoder_from(cfg.root);
  auto cache = cache_from(cfg.root, encoder->dim());
  auto client = client_from(cfg.root, cfg.seed);
  Image image = ensure_rgb(load_image(cfg_str(cfg.root, "vote_infer.image")));
  AugmentationSpec spec = augmentation_from(cfg.root, cfg.seed);
  VoteConfig vote = vote_config_from(cfg.root);
  const std::string prompt = cfg_has(cfg.root, "vote_infer.prompt")
                                 ? slurp(cfg_str(cfg.root, "vote_infer.prompt"))
                                 : std::string(kDefaultIngredientPrompt);
  const bool strict = cfg_bool_or(cfg.root, "vote_infer.strict", false);

  AugmentedPrediction result = predict_with_augmented_ingredients(
      image, model, *client, spec, vote, vocab, *encoder, prompt, cache.get(), strict);

  std::ofstream audit(cfg.out_dir + "/audit.jsonl");
  if (!audit) throw IoError("cannot write audit log");
  audit << audit_line(result, cfg_str(cfg.root, "vote_infer.image"), vote.tau) << "\n";

  NutritionPrediction pred = clamp_nonnegative(result.nutrition);
  nlohmann::json j;
  j["voted_ingredients"] = std::vector<std::string>(result.voted.begin(), result.voted.end());
  j["prediction"] = {{"calories", pred.calories},
                     {"fat", pred.fat},
                     {"carbohydrates", pred.carbohydrates},
                     {"protein", pred.protein}};
  std::ofstream os(cfg.out_dir + "/prediction.json");
  if (!os) throw IoError("cannot write prediction");
  os << j.dump(2) << "\n";
  std::cout << j.dump() << "\n";
}

void cmd_dialogue(const RunConfig& cfg) {
  NutritionVector nv;
  nv.calories = cfg_num(cfg.root, "dialogue.calories");
  nv.fat = cfg_num(cfg.root, "dialogue.fat");
  nv.carbohydrates = cfg_num(cfg.root, "dialogue.carbohydrates");
  nv.protein = cfg_num(cfg.root, "dialogue.protein");
  const int n_turns = static_cast<int>(cfg_int(cfg.root, "dialogue.n_turns"));
  const std::string prompt =
      build_dialogue_prompt(nv, n_turns, slurp(cfg_str(cfg.root, "dialogue.template")));
  const std::string output = cfg_str_or(cfg.root, "dialogue.output", cfg.out_dir + "/dialogue.txt");
  std::ofstream os(output);
  if (!os) throw IoError("cannot write " + output);
  os << prompt;
  std::cout << prompt;
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<uint64_t> seed;
};

void add_common_flags(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config_path, "structured config file");
  sub->add_option("--set", flags.overrides, "override a config key (key.path=value, repeatable)");
  sub->add_option("--out", flags.out_dir, "output directory");
  sub->add_option("--seed", flags.seed, "run seed");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"ingredient-aware nutrition estimation toolkit"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    void (*handler)(const RunConfig&);
  };
  const Command commands[] = {
      {"ingest", "standardize a raw dataset into a manifest, optionally splitting it", cmd_ingest},
      {"normalize", "normalize a list of ingredient terms through the vocabulary", cmd_normalize},
      {"embed-cache", "precompute ingredient embeddings for a manifest", cmd_embed_cache},
      {"train", "train a fusion model", cmd_train},
      {"eval", "evaluate a checkpoint on a manifest", cmd_eval},
      {"predict", "predict nutrition for one image", cmd_predict},
      {"vote-infer", "predict with augmented-view ingredient voting", cmd_vote_infer},
      {"dialogue-template", "instantiate the dietary-dialogue prompt", cmd_dialogue},
  };

  std::vector<CommonFlags> flags(std::size(commands));
  const Command* chosen_cmd = nullptr;
  const CommonFlags* chosen_flags = nullptr;
  for (size_t i = 0; i < std::size(commands); ++i) {
    CLI::App* sub = app.add_subcommand(commands[i].name, commands[i].help);
    add_common_flags(sub, flags[i]);
    sub->callback([&, i]() {
      chosen_cmd = &commands[i];
      chosen_flags = &flags[i];
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = load_run_config(chosen_cmd->name, chosen_flags->config_path,
                                    chosen_flags->overrides, chosen_flags->out_dir,
                                    chosen_flags->seed);
    write_config_echo(cfg);
    chosen_cmd->handler(cfg);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace nf
