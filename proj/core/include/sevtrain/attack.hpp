#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sevtrain/data.hpp"
#include "sevtrain/model.hpp"
#include "sevtrain/rng.hpp"
#include "sevtrain/taxonomy.hpp"

namespace sevtrain {

enum class AttackMode { kUntargeted, kTargeted };
enum class AttackInit { kZero, kRandomInBall };

// L2-constrained PGD configuration. The norm is whole-image L2 in pixel
// space; adversarial images are clamped to [0, 1].
struct AttackConfig {
  double epsilon = 1.0;
  int steps = 10;
  double step_size = 0.0;  // 0 means the default 2.5 * epsilon / steps
  AttackMode mode = AttackMode::kUntargeted;
  int target_class = -1;  // required in targeted mode
  AttackInit init = AttackInit::kZero;

  double resolved_step_size() const { return step_size > 0.0 ? step_size : 2.5 * epsilon / steps; }
  void validate() const;
};

struct PerturbationResult {
  std::vector<float> delta;
  Image adversarial_image;
  bool success = false;
  int pred_class = -1;
  std::vector<double> loss_trace;  // loss at delta_0 .. delta_steps (steps+1 entries)
  bool zero_grad_encountered = false;
};

// Radial projection onto the L2 ball of the given radius (identity inside).
void project_l2(std::span<float> delta, double epsilon);
double l2_norm(std::span<const float> v);

// One PGD update: normalized gradient ascent (untargeted) or descent
// (targeted), projection onto the epsilon-ball, then the [0,1] image clamp
// with delta recomputed as clamped(x+delta) - x. Returns false when the
// gradient norm was zero (delta left unchanged).
bool pgd_step(std::span<const float> x, std::span<float> delta, std::span<const float> grad,
              const AttackConfig& cfg);

// Full PGD run against a frozen model. Targeted mode requires
// cfg.target_class != sample.fine_label. Aborts with an error on a non-finite
// loss mid-attack.
PerturbationResult run_pgd(const Classifier<float>& model, const Sample& sample,
                           const AttackConfig& cfg, Rng& rng);

// Batched variant used by training and sweeps: attacks n images in parallel
// (deterministically; per-sample streams are derived from base_seed and the
// sample index). targets[i] is the target class in targeted mode and is
// ignored otherwise. Per-sample results are identical to run_pgd on the same
// sample.
struct BatchAttackResult {
  std::vector<float> adversarial_pixels;  // n * c*h*w
  std::vector<std::uint8_t> success;
  std::vector<int> pred_class;
  std::vector<double> final_loss;
  std::size_t input_grad_evals = 0;
  int zero_grad_count = 0;
};

BatchAttackResult run_pgd_batch(const Classifier<float>& model, std::span<const float> pixels,
                                std::span<const int> labels, std::span<const int> targets, int n,
                                const AttackConfig& cfg, std::uint64_t base_seed);

// Uniform draw from C(y).
int sample_target(int y, const SemanticTargetSet& targets, Rng& rng);

// Attack sweep rows: `sample_id, mode, epsilon, target_class, success,
// final_loss, pred_class`.
struct AttackResultRow {
  int sample_id = 0;
  AttackMode mode = AttackMode::kUntargeted;
  double epsilon = 0.0;
  int target_class = -1;  // -1 for untargeted
  bool success = false;
  double final_loss = 0.0;
  int pred_class = -1;
};

void save_attack_results_csv(const std::filesystem::path& p,
                             std::span<const AttackResultRow> rows);

}  // namespace sevtrain
