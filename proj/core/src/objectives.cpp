#include "sevtrain/objectives.hpp"

#include <algorithm>
#include <stdexcept>

namespace sevtrain {

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kStandard: return "standard";
    case Objective::kUntargetedAdversarial: return "untargeted_adversarial";
    case Objective::kSemanticTargeted: return "semantic_targeted";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& s) {
  if (s == "standard") return Objective::kStandard;
  if (s == "untargeted_adversarial") return Objective::kUntargetedAdversarial;
  if (s == "semantic_targeted") return Objective::kSemanticTargeted;
  throw std::runtime_error("unknown objective '" + s + "'");
}

void TrainingStage::validate() const {
  if (epochs < 1) throw std::runtime_error("stage: epochs must be >= 1");
  if (objective != Objective::kStandard && !(epsilon > 0.0)) {
    throw std::runtime_error("stage: adversarial objectives require epsilon > 0");
  }
}

int Recipe::total_epochs() const {
  int n = 0;
  for (const auto& s : stages) n += s.epochs;
  return n;
}

void Recipe::validate() const {
  if (stages.empty()) throw std::runtime_error("recipe: needs at least one stage");
  for (const auto& s : stages) s.validate();
  if (batch_size < 1) throw std::runtime_error("recipe: batch_size must be >= 1");
  if (attack_steps < 1) throw std::runtime_error("recipe: attack_steps must be >= 1");
}

LabelDistribution make_label(int y, int t, bool label_modification, int num_classes) {
  if (y < 0 || y >= num_classes) {
    throw std::runtime_error("make_label: class " + std::to_string(y) + " out of range");
  }
  std::vector<float> w(static_cast<std::size_t>(num_classes), 0.0f);
  if (label_modification && t >= 0) {
    if (t == y) throw std::runtime_error("make_label: target equals the true class");
    if (t >= num_classes) throw std::runtime_error("make_label: target class out of range");
    w[static_cast<std::size_t>(y)] = 0.5f;
    w[static_cast<std::size_t>(t)] = 0.5f;
  } else {
    w[static_cast<std::size_t>(y)] = 1.0f;
  }
  return validated_label(std::move(w));
}

StepStats train_step(TrainState& state, std::span<const Sample> batch, const TrainingStage& stage,
                     const SemanticTargetSet* targets, const Recipe& recipe, Rng& rng,
                     std::uint64_t attack_seed) {
  stage.validate();
  if (batch.empty()) throw std::runtime_error("train_step: empty batch");
  const int n = static_cast<int>(batch.size());
  const int f = state.model->num_classes();
  const auto shape = state.model->input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);

  std::vector<float> pixels(static_cast<std::size_t>(n) * d);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& s = batch[static_cast<std::size_t>(i)];
    if (s.image.pixels.size() != d) throw std::runtime_error("train_step: sample shape mismatch");
    std::copy(s.image.pixels.begin(), s.image.pixels.end(),
              pixels.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * d));
    labels[static_cast<std::size_t>(i)] = s.fine_label;
  }

  StepStats stats;
  stats.n = n;

  // Soft targets for the outer loss; filled per objective below.
  std::vector<float> target_rows(static_cast<std::size_t>(n) * static_cast<std::size_t>(f), 0.0f);
  auto set_target = [&](int i, const LabelDistribution& ld) {
    std::copy(ld.weights.begin(), ld.weights.end(),
              target_rows.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * static_cast<std::size_t>(f)));
  };

  const float* train_pixels = pixels.data();
  BatchAttackResult attack_out;

  switch (stage.objective) {
    case Objective::kStandard: {
      for (int i = 0; i < n; ++i) set_target(i, make_label(labels[static_cast<std::size_t>(i)], -1, false, f));
      break;
    }
    case Objective::kUntargetedAdversarial: {
      AttackConfig cfg;
      cfg.epsilon = stage.epsilon;
      cfg.steps = recipe.attack_steps;
      cfg.mode = AttackMode::kUntargeted;
      attack_out = run_pgd_batch(*state.model, {pixels.data(), pixels.size()},
                                 {labels.data(), labels.size()}, {}, n, cfg, attack_seed);
      train_pixels = attack_out.adversarial_pixels.data();
      stats.n_attacked = n;
      stats.input_grad_evals = attack_out.input_grad_evals;
      for (int i = 0; i < n; ++i) {
        stats.n_attack_success += attack_out.success[static_cast<std::size_t>(i)];
        set_target(i, make_label(labels[static_cast<std::size_t>(i)], -1, false, f));
      }
      break;
    }
    case Objective::kSemanticTargeted: {
      if (!targets) throw std::runtime_error("train_step: semantic objective needs target sets");
      std::vector<int> t(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        t[static_cast<std::size_t>(i)] = sample_target(labels[static_cast<std::size_t>(i)], *targets, rng);
        stats.sampled_targets.emplace_back(labels[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(i)]);
      }
      AttackConfig cfg;
      cfg.epsilon = stage.epsilon;
      cfg.steps = recipe.attack_steps;
      cfg.mode = AttackMode::kTargeted;
      attack_out = run_pgd_batch(*state.model, {pixels.data(), pixels.size()},
                                 {labels.data(), labels.size()}, {t.data(), t.size()}, n, cfg,
                                 attack_seed);
      train_pixels = attack_out.adversarial_pixels.data();
      stats.n_attacked = n;
      stats.input_grad_evals = attack_out.input_grad_evals;
      for (int i = 0; i < n; ++i) {
        stats.n_attack_success += attack_out.success[static_cast<std::size_t>(i)];
        // Train on the perturbed input whether or not the attack succeeded.
        set_target(i, make_label(labels[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(i)],
                                 stage.label_modification, f));
      }
      break;
    }
  }

  ParamSet<float> grads = ParamSet<float>::zeros_like(state.model->params());
  std::vector<int> preds(static_cast<std::size_t>(n));
  const auto pass = batch_param_grads(*state.model,
                                      {train_pixels, static_cast<std::size_t>(n) * d},
                                      {target_rows.data(), target_rows.size()}, n, grads,
                                      {preds.data(), preds.size()});
  stats.loss_sum = pass.loss_sum;
  for (int i = 0; i < n; ++i) {
    if (preds[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++stats.n_correct;
  }
  sgd_step(state, grads, recipe.optimizer);
  return stats;
}

TrainState run_recipe(const Recipe& recipe, const Dataset& train, const ClassTaxonomy& taxonomy,
                      const SemanticTargetSet& targets, std::uint64_t seed,
                      const RecipeCallbacks& callbacks, int checkpoint_every,
                      int image_size_override) {
  recipe.validate();
  if (train.samples.empty()) throw std::runtime_error("run_recipe: empty training set");
  const auto& first = train.samples.front().image;
  const int image_size = image_size_override > 0 ? image_size_override : first.height;
  if (first.height != first.width) throw std::runtime_error("run_recipe: images must be square");

  TrainState state = TrainState::create(
      build_reference_net(taxonomy.num_fine(), image_size, derive_seed(seed, "model-init")),
      derive_seed(seed, "train-state"));

  const std::size_t n = train.size();
  int global_epoch = 0;
  for (std::size_t stage_idx = 0; stage_idx < recipe.stages.size(); ++stage_idx) {
    const auto& stage = recipe.stages[stage_idx];
    // Each stage starts as a fresh optimization phase.
    state.momentum.zero();
    for (int e = 0; e < stage.epochs; ++e) {
      ++global_epoch;
      const std::uint64_t epoch_seed = derive_seed(seed, "epoch-" + std::to_string(global_epoch));
      const auto order = batches(n, static_cast<std::size_t>(recipe.batch_size),
                                 derive_seed(epoch_seed, "shuffle"));
      Rng stream(derive_seed(epoch_seed, "stream"));

      EpochLog log;
      log.epoch = global_epoch;
      log.stage_index = static_cast<int>(stage_idx);
      log.objective = stage.objective;
      double loss_sum = 0.0;
      std::size_t n_seen = 0, n_correct = 0, n_attacked = 0, n_attack_success = 0;

      for (std::size_t bi = 0; bi < order.size(); ++bi) {
        std::vector<Sample> batch;
        batch.reserve(order[bi].size());
        for (std::uint32_t idx : order[bi]) {
          batch.push_back(augment(train.samples[idx], recipe.augmentation, stream));
        }
        const auto stats = train_step(state, batch, stage, &targets, recipe, stream,
                                      derive_seed(epoch_seed, "attack-" + std::to_string(bi)));
        loss_sum += stats.loss_sum;
        n_seen += static_cast<std::size_t>(stats.n);
        n_correct += static_cast<std::size_t>(stats.n_correct);
        n_attacked += static_cast<std::size_t>(stats.n_attacked);
        n_attack_success += static_cast<std::size_t>(stats.n_attack_success);
      }
      state.epoch = global_epoch;
      log.mean_loss = loss_sum / static_cast<double>(n_seen);
      log.train_accuracy = static_cast<double>(n_correct) / static_cast<double>(n_seen);
      log.attack_success_rate =
          n_attacked ? static_cast<double>(n_attack_success) / static_cast<double>(n_attacked) : 0.0;
      if (callbacks.on_epoch) callbacks.on_epoch(log);

      const bool stage_boundary = (e == stage.epochs - 1);
      const bool periodic = checkpoint_every > 0 && (global_epoch % checkpoint_every == 0);
      if ((stage_boundary || periodic) && callbacks.on_checkpoint) {
        callbacks.on_checkpoint(state, global_epoch, stage_boundary);
      }
    }
  }
  return state;
}

Recipe preset(const std::string& name, PresetScale scale, int desk_factor) {
  if (desk_factor < 1) throw std::runtime_error("preset: desk_factor must be >= 1");
  Recipe r;
  r.name = name;
  r.optimizer = OptimizerConfig{0.1, 0.9, 5e-4};
  r.batch_size = 100;
  r.augmentation = AugmentationConfig{4, 0.5};
  r.attack_steps = 10;

  auto stage = [](Objective o, double eps, bool lm, int epochs) {
    TrainingStage s;
    s.objective = o;
    s.epsilon = eps;
    s.label_modification = lm;
    s.epochs = epochs;
    return s;
  };

  if (name == "Standard") {
    r.stages = {stage(Objective::kStandard, 0.0, false, 200)};
  } else if (name == "AdvRobust") {
    r.stages = {stage(Objective::kUntargetedAdversarial, 1.0, false, 200)};
  } else if (name == "LE-SmT") {
    r.stages = {stage(Objective::kSemanticTargeted, 1.0, false, 200)};
  } else if (name == "HE-SmT") {
    r.stages = {stage(Objective::kSemanticTargeted, 2.5, false, 200)};
  } else if (name == "HE-SmT-LM") {
    r.stages = {stage(Objective::kSemanticTargeted, 2.5, true, 300)};
  } else if (name == "ST") {
    r.stages = {stage(Objective::kSemanticTargeted, 2.5, true, 200),
                stage(Objective::kStandard, 0.0, false, 100)};
  } else {
    throw std::runtime_error("preset: unknown name '" + name + "'");
  }

  if (scale == PresetScale::kDesk) {
    for (auto& s : r.stages) s.epochs = std::max(1, s.epochs / desk_factor);
  }
  return r;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"Standard", "AdvRobust", "LE-SmT",
                                                 "HE-SmT", "HE-SmT-LM", "ST"};
  return names;
}

}  // namespace sevtrain
