#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sevtrain/corruption.hpp"
#include "sevtrain/data.hpp"
#include "sevtrain/metrics.hpp"
#include "sevtrain/objectives.hpp"

namespace sevtrain {

inline constexpr const char* kSevtrainVersion = "0.1.0";

// Usage/configuration problems map to exit code 1; anything else to 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | cifar100 | tensor
  // synthetic
  int classes = 20;
  int images_per_class = 25;
  int test_images_per_class = 10;
  int image_size = 32;
  std::uint64_t data_seed = 1;
  // cifar100
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  // tensor
  std::string train_manifest;
  std::string test_manifest;
};

struct TaxonomyConfig {
  std::string source = "synthetic";  // synthetic | file
  std::string path;
};

struct RecipeConfig {
  std::string preset;  // empty means inline stages
  std::string scale = "desk";
  int desk_factor = 20;
  std::vector<TrainingStage> stages;
  OptimizerConfig optimizer;
  int batch_size = 100;
  AugmentationConfig augmentation;
  int attack_steps = 10;
};

struct AttackGridConfig {
  std::vector<double> epsilons;  // defaults to default_epsilon_grid()
  int steps = 10;
};

struct CorruptionRunConfig {
  std::vector<std::string> native_kinds;  // defaults to all seven
  std::vector<int> severities = {1, 2, 3, 4, 5};
  std::uint64_t seed = 7;
  std::string params_file;                // empty -> built-in defaults
  std::vector<std::string> precomputed;   // manifest paths
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string out = "runs/out";
  DatasetConfig dataset;
  TaxonomyConfig taxonomy;
  RecipeConfig recipe;
  AttackGridConfig attack;
  CorruptionRunConfig corruptions;
  int targets_k = 5;
  int checkpoint_every = 0;  // 0: stage boundaries only
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& p);
// Fully resolved config (all defaults expanded), echoable as input.
std::string resolved_config_json(const RunConfig& cfg);

Recipe recipe_from_config(const RecipeConfig& rc);

struct LoadedExperiment {
  ClassTaxonomy taxonomy;
  Dataset train;
  Dataset test;
};

LoadedExperiment load_experiment_data(const RunConfig& cfg);

// Writes <out>/manifest.json: config snapshot, resolved design decisions and
// code version. Written before any results.
void write_run_manifest(const RunConfig& cfg, const std::filesystem::path& out_dir,
                        const std::string& recipe_name);

struct TrainOutputs {
  std::filesystem::path run_dir;
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path training_log;
};

TrainOutputs cmd_train(const RunConfig& cfg);
void cmd_eval_adv(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& out_dir);
void cmd_eval_corrupt(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& out_dir);
void cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                const std::filesystem::path& out_dir);
void cmd_make_targets(const RunConfig& cfg, const std::filesystem::path& out_dir);
void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace sevtrain
