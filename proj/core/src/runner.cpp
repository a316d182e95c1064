#include "sevtrain/runner.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "sevtrain/csv.hpp"
#include "sevtrain/svg.hpp"
#include "sevtrain/util.hpp"

namespace sevtrain {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_fail(const std::string& field, const std::string& why) {
  throw ConfigError("config: " + field + ": " + why);
}

template <typename T>
T get_or(const json& j, const std::string& field, const std::string& path, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    config_fail(path + field, "wrong type");
  }
}

TrainingStage parse_stage(const json& j, const std::string& path) {
  TrainingStage s;
  if (!j.contains("objective")) config_fail(path + "objective", "missing");
  try {
    s.objective = objective_from_string(j.at("objective").get<std::string>());
  } catch (const std::exception& e) {
    config_fail(path + "objective", e.what());
  }
  s.epsilon = get_or<double>(j, "epsilon", path, 0.0);
  s.label_modification = get_or<bool>(j, "label_modification", path, false);
  s.epochs = get_or<int>(j, "epochs", path, 1);
  try {
    s.validate();
  } catch (const std::exception& e) {
    config_fail(path.substr(0, path.size() - 1), e.what());
  }
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", "", cfg.seed);
  cfg.out = get_or<std::string>(j, "out", "", cfg.out);
  cfg.targets_k = get_or<int>(j, "targets_k", "", cfg.targets_k);
  if (cfg.targets_k < 1) config_fail("targets_k", "must be >= 1");
  cfg.checkpoint_every = get_or<int>(j, "checkpoint_every", "", cfg.checkpoint_every);
  if (cfg.checkpoint_every < 0) config_fail("checkpoint_every", "must be >= 0");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    auto& dc = cfg.dataset;
    dc.source = get_or<std::string>(d, "source", "dataset.", dc.source);
    if (dc.source != "synthetic" && dc.source != "cifar100" && dc.source != "tensor") {
      config_fail("dataset.source", "must be synthetic, cifar100 or tensor");
    }
    dc.classes = get_or<int>(d, "classes", "dataset.", dc.classes);
    if (dc.classes < 2) config_fail("dataset.classes", "must be >= 2");
    dc.images_per_class = get_or<int>(d, "images_per_class", "dataset.", dc.images_per_class);
    if (dc.images_per_class < 1) config_fail("dataset.images_per_class", "must be >= 1");
    dc.test_images_per_class =
        get_or<int>(d, "test_images_per_class", "dataset.", dc.test_images_per_class);
    if (dc.test_images_per_class < 1) config_fail("dataset.test_images_per_class", "must be >= 1");
    dc.image_size = get_or<int>(d, "image_size", "dataset.", dc.image_size);
    if (dc.image_size < 4) config_fail("dataset.image_size", "must be >= 4");
    dc.data_seed = get_or<std::uint64_t>(d, "data_seed", "dataset.", dc.data_seed);
    dc.train_files = get_or<std::vector<std::string>>(d, "train_files", "dataset.", {});
    dc.test_files = get_or<std::vector<std::string>>(d, "test_files", "dataset.", {});
    dc.train_manifest = get_or<std::string>(d, "train_manifest", "dataset.", "");
    dc.test_manifest = get_or<std::string>(d, "test_manifest", "dataset.", "");
    if (dc.source == "cifar100" && (dc.train_files.empty() || dc.test_files.empty())) {
      config_fail("dataset.train_files", "cifar100 source needs train_files and test_files");
    }
    if (dc.source == "tensor" && (dc.train_manifest.empty() || dc.test_manifest.empty())) {
      config_fail("dataset.train_manifest", "tensor source needs train_manifest and test_manifest");
    }
  }

  if (j.contains("taxonomy")) {
    const auto& t = j.at("taxonomy");
    cfg.taxonomy.source = get_or<std::string>(t, "source", "taxonomy.", cfg.taxonomy.source);
    cfg.taxonomy.path = get_or<std::string>(t, "path", "taxonomy.", cfg.taxonomy.path);
    if (cfg.taxonomy.source != "synthetic" && cfg.taxonomy.source != "file") {
      config_fail("taxonomy.source", "must be synthetic or file");
    }
    if (cfg.taxonomy.source == "file" && cfg.taxonomy.path.empty()) {
      config_fail("taxonomy.path", "missing (required when taxonomy.source is 'file')");
    }
  }
  if (cfg.dataset.source != "synthetic" && cfg.taxonomy.source == "synthetic") {
    config_fail("taxonomy.source", "non-synthetic datasets require a taxonomy file");
  }

  if (j.contains("recipe")) {
    const auto& r = j.at("recipe");
    auto& rc = cfg.recipe;
    rc.preset = get_or<std::string>(r, "preset", "recipe.", rc.preset);
    rc.scale = get_or<std::string>(r, "scale", "recipe.", rc.scale);
    if (rc.scale != "desk" && rc.scale != "paper") {
      config_fail("recipe.scale", "must be desk or paper");
    }
    rc.desk_factor = get_or<int>(r, "desk_factor", "recipe.", rc.desk_factor);
    if (rc.desk_factor < 1) config_fail("recipe.desk_factor", "must be >= 1");
    if (r.contains("stages")) {
      if (!rc.preset.empty()) config_fail("recipe.stages", "give either a preset or inline stages");
      int i = 0;
      for (const auto& sj : r.at("stages")) {
        rc.stages.push_back(parse_stage(sj, "recipe.stages[" + std::to_string(i) + "]."));
        ++i;
      }
      if (rc.stages.empty()) config_fail("recipe.stages", "needs at least one stage");
    }
    rc.optimizer.learning_rate =
        get_or<double>(r, "learning_rate", "recipe.", rc.optimizer.learning_rate);
    rc.optimizer.momentum = get_or<double>(r, "momentum", "recipe.", rc.optimizer.momentum);
    rc.optimizer.weight_decay =
        get_or<double>(r, "weight_decay", "recipe.", rc.optimizer.weight_decay);
    rc.batch_size = get_or<int>(r, "batch_size", "recipe.", rc.batch_size);
    rc.augmentation.crop_padding =
        get_or<int>(r, "crop_padding", "recipe.", rc.augmentation.crop_padding);
    rc.augmentation.hflip_probability =
        get_or<double>(r, "hflip_probability", "recipe.", rc.augmentation.hflip_probability);
    rc.attack_steps = get_or<int>(r, "attack_steps", "recipe.", rc.attack_steps);
  }
  if (cfg.recipe.preset.empty() && cfg.recipe.stages.empty()) {
    cfg.recipe.preset = "Standard";  // default recipe
  }

  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    cfg.attack.epsilons = get_or<std::vector<double>>(a, "epsilons", "attack.", {});
    cfg.attack.steps = get_or<int>(a, "steps", "attack.", cfg.attack.steps);
    if (cfg.attack.steps < 1) config_fail("attack.steps", "must be >= 1");
    for (std::size_t i = 1; i < cfg.attack.epsilons.size(); ++i) {
      if (cfg.attack.epsilons[i] <= cfg.attack.epsilons[i - 1]) {
        config_fail("attack.epsilons", "must be strictly ascending");
      }
    }
  }
  if (cfg.attack.epsilons.empty()) {
    const auto grid = default_epsilon_grid();
    cfg.attack.epsilons.assign(grid.begin(), grid.end());
  }

  if (j.contains("corruptions")) {
    const auto& c = j.at("corruptions");
    auto& cc = cfg.corruptions;
    cc.native_kinds = get_or<std::vector<std::string>>(c, "native_kinds", "corruptions.", {});
    for (const auto& k : cc.native_kinds) {
      try {
        corruption_kind_from_string(k);
      } catch (const std::exception& e) {
        config_fail("corruptions.native_kinds", e.what());
      }
    }
    cc.severities = get_or<std::vector<int>>(c, "severities", "corruptions.", cc.severities);
    for (int s : cc.severities) {
      if (s < 1 || s > kNumSeverities) config_fail("corruptions.severities", "values must be 1..5");
    }
    cc.seed = get_or<std::uint64_t>(c, "seed", "corruptions.", cc.seed);
    cc.params_file = get_or<std::string>(c, "params_file", "corruptions.", cc.params_file);
    cc.precomputed = get_or<std::vector<std::string>>(c, "precomputed", "corruptions.", {});
  }
  if (cfg.corruptions.native_kinds.empty()) {
    for (CorruptionKind k : all_corruption_kinds()) {
      cfg.corruptions.native_kinds.push_back(corruption_kind_name(k));
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& p) {
  std::string text;
  try {
    text = read_text_file(p);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_run_config(text);
}

namespace {

json stages_to_json(const std::vector<TrainingStage>& stages) {
  json arr = json::array();
  for (const auto& s : stages) {
    json sj = {{"objective", objective_name(s.objective)}, {"epochs", s.epochs}};
    if (s.objective != Objective::kStandard) sj["epsilon"] = s.epsilon;
    if (s.objective == Objective::kSemanticTargeted) sj["label_modification"] = s.label_modification;
    arr.push_back(sj);
  }
  return arr;
}

json config_to_json(const RunConfig& cfg) {
  json d = {{"source", cfg.dataset.source}};
  if (cfg.dataset.source == "synthetic") {
    d["classes"] = cfg.dataset.classes;
    d["images_per_class"] = cfg.dataset.images_per_class;
    d["test_images_per_class"] = cfg.dataset.test_images_per_class;
    d["image_size"] = cfg.dataset.image_size;
    d["data_seed"] = cfg.dataset.data_seed;
  } else if (cfg.dataset.source == "cifar100") {
    d["train_files"] = cfg.dataset.train_files;
    d["test_files"] = cfg.dataset.test_files;
  } else {
    d["train_manifest"] = cfg.dataset.train_manifest;
    d["test_manifest"] = cfg.dataset.test_manifest;
  }
  json t = {{"source", cfg.taxonomy.source}};
  if (!cfg.taxonomy.path.empty()) t["path"] = cfg.taxonomy.path;

  json r = {{"scale", cfg.recipe.scale},
            {"desk_factor", cfg.recipe.desk_factor},
            {"learning_rate", cfg.recipe.optimizer.learning_rate},
            {"momentum", cfg.recipe.optimizer.momentum},
            {"weight_decay", cfg.recipe.optimizer.weight_decay},
            {"batch_size", cfg.recipe.batch_size},
            {"crop_padding", cfg.recipe.augmentation.crop_padding},
            {"hflip_probability", cfg.recipe.augmentation.hflip_probability},
            {"attack_steps", cfg.recipe.attack_steps}};
  if (!cfg.recipe.preset.empty()) {
    r["preset"] = cfg.recipe.preset;
  } else {
    r["stages"] = stages_to_json(cfg.recipe.stages);
  }

  json c = {{"native_kinds", cfg.corruptions.native_kinds},
            {"severities", cfg.corruptions.severities},
            {"seed", cfg.corruptions.seed}};
  if (!cfg.corruptions.params_file.empty()) c["params_file"] = cfg.corruptions.params_file;
  if (!cfg.corruptions.precomputed.empty()) c["precomputed"] = cfg.corruptions.precomputed;

  return json{{"seed", cfg.seed},
              {"out", cfg.out},
              {"targets_k", cfg.targets_k},
              {"checkpoint_every", cfg.checkpoint_every},
              {"dataset", d},
              {"taxonomy", t},
              {"recipe", r},
              {"attack", {{"epsilons", cfg.attack.epsilons}, {"steps", cfg.attack.steps}}},
              {"corruptions", c}};
}

CorruptionTables tables_from_config(const RunConfig& cfg) {
  if (cfg.corruptions.params_file.empty()) return CorruptionTables::defaults();
  return CorruptionTables::load(cfg.corruptions.params_file);
}

}  // namespace

std::string resolved_config_json(const RunConfig& cfg) {
  return config_to_json(cfg).dump(2) + "\n";
}

Recipe recipe_from_config(const RecipeConfig& rc) {
  Recipe r;
  if (!rc.preset.empty()) {
    r = preset(rc.preset, rc.scale == "paper" ? PresetScale::kPaper : PresetScale::kDesk,
               rc.desk_factor);
  } else {
    r.name = "inline";
    r.stages = rc.stages;
  }
  r.optimizer = rc.optimizer;
  r.batch_size = rc.batch_size;
  r.augmentation = rc.augmentation;
  r.attack_steps = rc.attack_steps;
  r.validate();
  return r;
}

LoadedExperiment load_experiment_data(const RunConfig& cfg) {
  const auto& dc = cfg.dataset;
  if (dc.source == "synthetic") {
    SyntheticSpec spec{dc.classes, dc.images_per_class, dc.image_size, dc.data_seed};
    auto train = generate_synthetic(spec, Split::kTrain);
    SyntheticSpec test_spec = spec;
    test_spec.images_per_class = dc.test_images_per_class;
    auto test = generate_synthetic(test_spec, Split::kTest);
    if (cfg.taxonomy.source == "file") {
      auto tax = load_taxonomy(cfg.taxonomy.path);
      if (tax.num_fine() != dc.classes) {
        throw ConfigError("config: taxonomy.path: file declares " +
                          std::to_string(tax.num_fine()) + " classes, dataset has " +
                          std::to_string(dc.classes));
      }
      return {std::move(tax), std::move(train.dataset), std::move(test.dataset)};
    }
    return {std::move(train.taxonomy), std::move(train.dataset), std::move(test.dataset)};
  }

  auto tax = load_taxonomy(cfg.taxonomy.path);
  auto read_files = [&](const std::vector<std::string>& files, Split split) {
    std::vector<std::uint8_t> bytes;
    for (const auto& f : files) {
      auto b = read_binary_file(f);
      bytes.insert(bytes.end(), b.begin(), b.end());
    }
    return parse_cifar100_binary(bytes, split, tax.num_fine(), tax.num_coarse());
  };
  Dataset train, test;
  if (dc.source == "cifar100") {
    train = read_files(dc.train_files, Split::kTrain);
    test = read_files(dc.test_files, Split::kTest);
  } else {
    train = load_dataset(dc.train_manifest);
    test = load_dataset(dc.test_manifest);
  }
  for (const auto* ds : {&train, &test}) {
    for (std::size_t i = 0; i < ds->samples.size(); ++i) {
      const auto& s = ds->samples[i];
      if (s.fine_label >= tax.num_fine()) {
        throw std::runtime_error("dataset: sample " + std::to_string(i) + " fine label " +
                                 std::to_string(s.fine_label) + " outside the taxonomy");
      }
      if (s.coarse_label != tax.coarse_of(s.fine_label)) {
        throw std::runtime_error("dataset: sample " + std::to_string(i) +
                                 " coarse label disagrees with the taxonomy (got " +
                                 std::to_string(s.coarse_label) + ", taxonomy says " +
                                 std::to_string(tax.coarse_of(s.fine_label)) + ")");
      }
    }
  }
  return {std::move(tax), std::move(train), std::move(test)};
}

void write_run_manifest(const RunConfig& cfg, const fs::path& out_dir,
                        const std::string& recipe_name) {
  const auto tables = tables_from_config(cfg);
  json decisions = {
      {"similarity", "1/(edge_distance+1)"},
      {"target_tie_break", "ascending class index"},
      {"target_set_domain", "supplied taxonomy tree"},
      {"attack_norm", "l2"},
      {"attack_init", "zero"},
      {"attack_clamp_order", "project to epsilon ball, then clamp image to [0,1]"},
      {"gradient_normalization", "whole-image l2"},
      {"augmentation", "training split only; crop pad is zero-filled"},
      {"attack_input", "augmented image (augment first, then attack)"},
      {"train_on_failed_attacks", true},
      {"target_resampling", "fresh uniform draw per encounter"},
      {"momentum_reset_at_stage_boundary", true},
      {"lr_schedule", "none"},
      {"pixel_domain", "[0,1] float32"},
      {"desk_epoch_factor", cfg.recipe.desk_factor},
      {"corruption_params",
       {{"gaussian_noise_sigma", tables.gaussian_noise_sigma},
        {"impulse_noise_fraction", tables.impulse_noise_fraction},
        {"gaussian_blur_sigma", tables.gaussian_blur_sigma},
        {"brightness_delta", tables.brightness_delta},
        {"contrast_factor", tables.contrast_factor},
        {"saturation_factor", tables.saturation_factor},
        {"pixelate_block", tables.pixelate_block}}},
  };
  json manifest = {
      {"tool", "sevtrain"},
      {"version", kSevtrainVersion},
      {"recipe_name", recipe_name},
      {"config", config_to_json(cfg)},
      {"decisions", decisions},
  };
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

void append_checksum(json& sums, const fs::path& p) {
  const auto bytes = read_binary_file(p);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  sums[p.filename().string()] = buf;
}

std::string epoch_checkpoint_name(int epoch) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%04d.json", epoch);
  return buf;
}

}  // namespace

TrainOutputs cmd_train(const RunConfig& cfg) {
  const fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  auto exp = load_experiment_data(cfg);
  const Recipe recipe = recipe_from_config(cfg.recipe);
  write_run_manifest(cfg, out_dir, recipe.name);

  const auto sim = build_similarity_matrix(exp.taxonomy);
  const auto targets = build_target_sets(sim, cfg.targets_k);

  TrainOutputs outputs;
  outputs.run_dir = out_dir;

  CsvTable log;
  log.header = {"epoch", "stage", "objective", "mean_loss", "train_acc", "attack_success_rate"};
  const OptimizerConfig opt = recipe.optimizer;

  RecipeCallbacks callbacks;
  callbacks.on_epoch = [&](const EpochLog& e) {
    log.rows.push_back({std::to_string(e.epoch), std::to_string(e.stage_index),
                        objective_name(e.objective), format_g9(e.mean_loss),
                        format_g9(e.train_accuracy), format_g9(e.attack_success_rate)});
  };
  callbacks.on_checkpoint = [&](const TrainState& state, int epoch, bool) {
    const fs::path p = out_dir / epoch_checkpoint_name(epoch);
    save_checkpoint(state, p, opt);
    outputs.checkpoints.push_back(p);
  };

  TrainState final_state = run_recipe(recipe, exp.train, exp.taxonomy, targets, cfg.seed,
                                      callbacks, cfg.checkpoint_every);

  outputs.final_checkpoint = out_dir / "checkpoint_final.json";
  save_checkpoint(final_state, outputs.final_checkpoint, opt);
  outputs.training_log = out_dir / "training_log.csv";
  log.save(outputs.training_log);

  json sums = json::object();
  append_checksum(sums, outputs.training_log);
  append_checksum(sums, outputs.final_checkpoint);
  for (const auto& p : outputs.checkpoints) append_checksum(sums, p);
  write_text_file(out_dir / "checksums.json", sums.dump(2) + "\n");
  return outputs;
}

namespace {

std::string model_display_name(const fs::path& run_dir) {
  const fs::path manifest = run_dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const auto j = json::parse(read_text_file(manifest));
      return j.value("recipe_name", run_dir.filename().string());
    } catch (const std::exception&) {
    }
  }
  return run_dir.filename().string();
}

ChartSeries series_from_adv_reports(const std::string& name,
                                    std::span<const SeverityReport> reports, bool coarse) {
  ChartSeries s;
  s.name = name;
  for (const auto& r : reports) {
    if (r.condition.type == Condition::Type::kCorruption) continue;
    s.x.push_back(r.condition.type == Condition::Type::kClean ? 0.0 : r.condition.epsilon);
    const auto& v = coarse ? r.coarse_accuracy_of_mistakes : r.avg_mistake_path_similarity;
    s.y.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
  }
  return s;
}

ChartSeries series_from_aggregates(const std::string& name,
                                   std::span<const SeverityAggregate> aggs, bool coarse) {
  ChartSeries s;
  s.name = name;
  for (const auto& a : aggs) {
    s.x.push_back(a.severity);
    const auto& v = coarse ? a.mean_coarse_accuracy_of_mistakes : a.mean_avg_path_similarity;
    s.y.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
  }
  return s;
}

void write_adv_chart(const fs::path& p, const std::vector<ChartSeries>& coarse_series,
                     const std::vector<ChartSeries>& sim_series) {
  ChartPanel left{"Coarse accuracy of mistakes vs epsilon", "epsilon (L2)",
                  "coarse accuracy of mistakes", coarse_series, true, 0.0, 1.0};
  ChartPanel right{"Avg path similarity of mistakes vs epsilon", "epsilon (L2)",
                   "avg path similarity", sim_series, false, 0.0, 1.0};
  save_chart_svg(p, {left, right});
}

void write_corrupt_chart(const fs::path& p, const std::vector<ChartSeries>& coarse_series,
                         const std::vector<ChartSeries>& sim_series) {
  ChartPanel left{"Coarse accuracy of mistakes vs corruption severity", "severity",
                  "mean coarse accuracy of mistakes", coarse_series, true, 0.0, 1.0};
  ChartPanel right{"Avg path similarity of mistakes vs corruption severity", "severity",
                   "mean avg path similarity", sim_series, false, 0.0, 1.0};
  save_chart_svg(p, {left, right});
}

}  // namespace

void cmd_eval_adv(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto exp = load_experiment_data(cfg);
  TrainState state = load_checkpoint(checkpoint);
  const auto shape = state.model->input_shape();
  if (!exp.test.samples.empty() &&
      (exp.test.samples.front().image.height != shape[1] ||
       state.model->num_classes() != exp.taxonomy.num_fine())) {
    throw std::runtime_error("eval-adv: checkpoint architecture does not match the dataset (" +
                             state.model->architecture() + ")");
  }
  const auto sim = build_similarity_matrix(exp.taxonomy);

  std::vector<AttackResultRow> attack_rows;
  std::vector<std::vector<EvalRecord>> records;
  const auto reports =
      adversarial_sweep(*state.model, exp.test, exp.taxonomy, sim, cfg.attack.epsilons,
                        cfg.attack.steps, cfg.seed, &attack_rows, &records);

  save_reports_json(out_dir / "eval_adv_reports.json", reports);
  save_reports_csv(out_dir / "eval_adv_reports.csv", reports);
  save_attack_results_csv(out_dir / "attack_results.csv", attack_rows);
  for (std::size_t i = 0; i < records.size(); ++i) {
    save_eval_records_csv(
        out_dir / ("eval_adv_records_eps_" + format_g9(cfg.attack.epsilons[i]) + ".csv"),
        records[i]);
  }
  const std::string name = model_display_name(out_dir);
  write_adv_chart(out_dir / "eval_adv_chart.svg",
                  {series_from_adv_reports(name, reports, true)},
                  {series_from_adv_reports(name, reports, false)});
}

void cmd_eval_corrupt(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto exp = load_experiment_data(cfg);
  TrainState state = load_checkpoint(checkpoint);
  const auto sim = build_similarity_matrix(exp.taxonomy);
  const auto tables = tables_from_config(cfg);

  std::vector<Dataset> sets;
  for (const auto& kind_name : cfg.corruptions.native_kinds) {
    const CorruptionKind kind = corruption_kind_from_string(kind_name);
    for (int s : cfg.corruptions.severities) {
      CorruptionSpec spec{kind, s, derive_seed(cfg.corruptions.seed, kind_name + std::to_string(s))};
      sets.push_back(build_corrupted_set(exp.test, spec, tables));
    }
  }
  for (const auto& manifest : cfg.corruptions.precomputed) {
    auto loaded = load_precomputed_corruption_set(manifest, exp.taxonomy);
    for (auto& ds : loaded) sets.push_back(std::move(ds));
  }
  if (sets.empty()) throw std::runtime_error("eval-corrupt: no corruption sets configured");

  std::vector<std::vector<EvalRecord>> records;
  const auto reports = corruption_sweep(*state.model, sets, exp.taxonomy, sim, &records);
  const auto aggregates = aggregate_by_severity(reports);

  save_reports_json(out_dir / "eval_corrupt_reports.json", reports);
  save_reports_csv(out_dir / "eval_corrupt_reports.csv", reports);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& c = reports[i].condition;
    save_eval_records_csv(
        out_dir / ("eval_corrupt_records_" + c.kind + "_s" + std::to_string(c.severity) + ".csv"),
        records[i]);
  }

  CsvTable agg;
  agg.header = {"severity", "kinds", "mean_coarse_acc_mistakes", "mean_avg_path_sim"};
  for (const auto& a : aggregates) {
    agg.rows.push_back({std::to_string(a.severity), std::to_string(a.kinds_counted),
                        a.mean_coarse_accuracy_of_mistakes
                            ? format_g9(*a.mean_coarse_accuracy_of_mistakes)
                            : "-",
                        a.mean_avg_path_similarity ? format_g9(*a.mean_avg_path_similarity) : "-"});
  }
  agg.save(out_dir / "eval_corrupt_aggregates.csv");

  const std::string name = model_display_name(out_dir);
  write_corrupt_chart(out_dir / "eval_corrupt_chart.svg",
                      {series_from_aggregates(name, aggregates, true)},
                      {series_from_aggregates(name, aggregates, false)});
}

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: needs at least one run directory");
  fs::create_directories(out_dir);

  std::vector<ModelReports> adv, corrupt;
  for (const auto& dir : run_dirs) {
    const std::string name = model_display_name(dir);
    if (fs::exists(dir / "eval_adv_reports.json")) {
      adv.push_back({name, load_reports_json(dir / "eval_adv_reports.json")});
    }
    if (fs::exists(dir / "eval_corrupt_reports.json")) {
      corrupt.push_back({name, load_reports_json(dir / "eval_corrupt_reports.json")});
    }
  }
  if (adv.empty() && corrupt.empty()) {
    throw std::runtime_error("report: no eval reports found in the given directories");
  }

  CsvTable cells, wins;
  cells.header = {"sweep", "condition", "best_path_similarity", "best_coarse_accuracy"};
  wins.header = {"sweep", "group", "model", "wins_path_similarity", "wins_coarse_accuracy"};
  auto emit = [&](const char* sweep, const Comparison& cmp) {
    for (const auto& c : cmp.cells) {
      cells.rows.push_back({sweep, c.condition_label, c.best_path_similarity, c.best_coarse_accuracy});
    }
    for (const auto& g : cmp.groups) {
      std::set<std::string> names;
      for (const auto& [n, _] : g.wins_path_similarity) names.insert(n);
      for (const auto& [n, _] : g.wins_coarse_accuracy) names.insert(n);
      for (const auto& n : names) {
        const auto wp = g.wins_path_similarity.count(n) ? g.wins_path_similarity.at(n) : 0;
        const auto wc = g.wins_coarse_accuracy.count(n) ? g.wins_coarse_accuracy.at(n) : 0;
        wins.rows.push_back({sweep, g.group, n, std::to_string(wp), std::to_string(wc)});
      }
      if (g.ties_path_similarity || g.ties_coarse_accuracy) {
        wins.rows.push_back({sweep, g.group, "(ties)", std::to_string(g.ties_path_similarity),
                             std::to_string(g.ties_coarse_accuracy)});
      }
    }
  };

  if (!adv.empty()) {
    emit("adversarial", compare_models(adv));
    std::vector<ChartSeries> coarse_series, sim_series;
    for (const auto& m : adv) {
      coarse_series.push_back(series_from_adv_reports(m.name, m.reports, true));
      sim_series.push_back(series_from_adv_reports(m.name, m.reports, false));
    }
    write_adv_chart(out_dir / "report_adv_chart.svg", coarse_series, sim_series);
  }
  if (!corrupt.empty()) {
    emit("corruption", compare_models(corrupt));
    std::vector<ChartSeries> coarse_series, sim_series;
    for (const auto& m : corrupt) {
      const auto aggs = aggregate_by_severity(m.reports);
      coarse_series.push_back(series_from_aggregates(m.name, aggs, true));
      sim_series.push_back(series_from_aggregates(m.name, aggs, false));
    }
    write_corrupt_chart(out_dir / "report_corrupt_chart.svg", coarse_series, sim_series);
  }
  cells.save(out_dir / "comparison_cells.csv");
  wins.save(out_dir / "win_counts.csv");
}

void cmd_make_targets(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto exp = load_experiment_data(cfg);
  const auto sim = build_similarity_matrix(exp.taxonomy);
  sim.save_csv(out_dir / "similarity.csv");
  const auto targets = build_target_sets(sim, cfg.targets_k);
  json j;
  j["k"] = targets.k;
  json m = json::object();
  for (int y = 0; y < static_cast<int>(targets.targets.size()); ++y) {
    m[exp.taxonomy.fine_name(y)] = targets.for_class(y);
  }
  j["targets"] = m;
  write_text_file(out_dir / "target_sets.json", j.dump(2) + "\n");
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
  if (cfg.dataset.source != "synthetic") {
    throw ConfigError("config: dataset.source: gen-data requires the synthetic source");
  }
  fs::create_directories(out_dir);
  auto exp = load_experiment_data(cfg);
  save_dataset(exp.train, out_dir / "train.json");
  save_dataset(exp.test, out_dir / "test.json");
  write_text_file(out_dir / "taxonomy.json", taxonomy_to_json(exp.taxonomy));
}

}  // namespace sevtrain
