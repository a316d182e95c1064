#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sevtrain/attack.hpp"
#include "sevtrain/data.hpp"
#include "sevtrain/model.hpp"
#include "sevtrain/taxonomy.hpp"

namespace sevtrain {

enum class Objective { kStandard, kUntargetedAdversarial, kSemanticTargeted };

const char* objective_name(Objective o);
Objective objective_from_string(const std::string& s);

struct TrainingStage {
  Objective objective = Objective::kStandard;
  double epsilon = 0.0;             // adversarial objectives only
  bool label_modification = false;  // semantic targeted only
  int epochs = 1;

  void validate() const;
};

struct Recipe {
  std::string name;
  std::vector<TrainingStage> stages;
  OptimizerConfig optimizer;  // lr 0.1, momentum 0.9, weight decay 5e-4
  int batch_size = 100;
  AugmentationConfig augmentation;
  int attack_steps = 10;

  int total_epochs() const;
  void validate() const;
};

// One-hot at y, or 0.5/0.5 on {y, t} when label_modification is set and a
// target is present. Throws when t == y with the flag set.
LabelDistribution make_label(int y, int t, bool label_modification, int num_classes);

struct StepStats {
  int n = 0;
  double loss_sum = 0.0;
  int n_correct = 0;          // prediction (on the trained-on input) == true fine label
  int n_attacked = 0;
  int n_attack_success = 0;
  std::size_t input_grad_evals = 0;
  std::vector<std::pair<int, int>> sampled_targets;  // (y, t) per semantic-targeted sample
};

// One optimizer update on a batch. The batch is given as ready-to-train
// samples (augmentation is the caller's concern); adversarial objectives
// attack the given inputs against the frozen pre-step parameters, then take
// one SGD step on the perturbed batch.
StepStats train_step(TrainState& state, std::span<const Sample> batch, const TrainingStage& stage,
                     const SemanticTargetSet* targets, const Recipe& recipe, Rng& rng,
                     std::uint64_t attack_seed);

struct EpochLog {
  int epoch = 0;       // global epoch index, 1-based
  int stage_index = 0;
  Objective objective = Objective::kStandard;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double attack_success_rate = 0.0;  // 0 when nothing was attacked
};

struct RecipeCallbacks {
  std::function<void(const EpochLog&)> on_epoch;
  // Called at stage boundaries and every checkpoint_every epochs (when > 0).
  std::function<void(const TrainState&, int epoch, bool stage_boundary)> on_checkpoint;
};

// Runs all stages in order. Parameters carry across stage boundaries;
// optimizer momentum buffers are reset at each boundary. Deterministic for a
// fixed seed within one build.
TrainState run_recipe(const Recipe& recipe, const Dataset& train, const ClassTaxonomy& taxonomy,
                      const SemanticTargetSet& targets, std::uint64_t seed,
                      const RecipeCallbacks& callbacks = {}, int checkpoint_every = 0,
                      int image_size_override = 0);

enum class PresetScale { kPaper, kDesk };

// The six named training regimes. Paper scale carries the published epoch
// counts and epsilons; desk scale divides epochs by desk_factor (keeping all
// epsilons and flags).
Recipe preset(const std::string& name, PresetScale scale, int desk_factor = 20);

const std::vector<std::string>& preset_names();

}  // namespace sevtrain
