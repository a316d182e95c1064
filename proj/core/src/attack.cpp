#include "sevtrain/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sevtrain/csv.hpp"
#include "sevtrain/util.hpp"

namespace sevtrain {

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::runtime_error("attack: epsilon must be > 0");
  if (steps < 1) throw std::runtime_error("attack: steps must be >= 1");
  if (!(resolved_step_size() > 0.0)) throw std::runtime_error("attack: step_size must be > 0");
  if (mode == AttackMode::kTargeted && target_class < 0) {
    throw std::runtime_error("attack: targeted mode requires a target class");
  }
}

double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

void project_l2(std::span<float> delta, double epsilon) {
  const double norm = l2_norm(delta);
  // The relative slack keeps the projection idempotent under float rounding.
  if (norm <= epsilon * (1.0 + 1e-7) || norm == 0.0) return;
  const float scale = static_cast<float>(epsilon / norm);
  for (float& v : delta) v *= scale;
}

bool pgd_step(std::span<const float> x, std::span<float> delta, std::span<const float> grad,
              const AttackConfig& cfg) {
  const double gnorm = l2_norm(grad);
  if (gnorm == 0.0) return false;
  const double step = cfg.resolved_step_size();
  const float scale = static_cast<float>((cfg.mode == AttackMode::kTargeted ? -step : step) / gnorm);
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += scale * grad[i];
  project_l2(delta, cfg.epsilon);
  // Keep the adversarial image feasible: clamp x+delta and fold the clamp
  // back into delta, so both constraints hold after every step.
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const float adv = std::clamp(x[i] + delta[i], 0.0f, 1.0f);
    delta[i] = adv - x[i];
  }
  return true;
}

namespace {

void init_delta(std::span<float> delta, std::span<const float> x, const AttackConfig& cfg,
                Rng& rng) {
  if (cfg.init == AttackInit::kZero) {
    std::fill(delta.begin(), delta.end(), 0.0f);
    return;
  }
  // Uniform in the epsilon-ball: uniform direction, radius eps * u^(1/d).
  double norm_sq = 0.0;
  for (float& v : delta) {
    const double g = rng.normal();
    v = static_cast<float>(g);
    norm_sq += g * g;
  }
  const double norm = std::sqrt(norm_sq);
  const double d = static_cast<double>(delta.size());
  const double radius = cfg.epsilon * std::pow(rng.uniform01(), 1.0 / d);
  const float scale = norm > 0.0 ? static_cast<float>(radius / norm) : 0.0f;
  for (float& v : delta) v *= scale;
  // Respect the image clamp from the start.
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const float adv = std::clamp(x[i] + delta[i], 0.0f, 1.0f);
    delta[i] = adv - x[i];
  }
}

struct SingleAttackOut {
  bool success = false;
  int pred = -1;
  double final_loss = 0.0;
  bool zero_grad = false;
};

// Core loop shared by run_pgd and run_pgd_batch. adv/delta/grad are caller
// buffers of the input size; trace may be null.
SingleAttackOut pgd_core(const Classifier<float>& model, std::span<const float> x, int y,
                         const AttackConfig& cfg, Rng& rng, std::span<float> delta,
                         std::span<float> adv, std::span<float> grad,
                         std::vector<double>* trace) {
  const int f = model.num_classes();
  const int target = cfg.mode == AttackMode::kTargeted ? cfg.target_class : y;
  if (cfg.mode == AttackMode::kTargeted && target == y) {
    throw std::runtime_error("attack: targeted attack requires t != y (got t = y = " +
                             std::to_string(y) + ")");
  }
  std::vector<float> label(static_cast<std::size_t>(f), 0.0f);
  label[static_cast<std::size_t>(target)] = 1.0f;

  init_delta(delta, x, cfg, rng);
  SingleAttackOut out;
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = x[i] + delta[i];
    float loss;
    try {
      loss = model.loss_grad_one(adv.data(), label.data(), grad.data(), nullptr, nullptr);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("attack: aborted at step ") + std::to_string(step) +
                               ": " + e.what());
    }
    if (!std::isfinite(loss)) {
      throw std::runtime_error("attack: non-finite loss at step " + std::to_string(step));
    }
    if (trace) trace->push_back(static_cast<double>(loss));
    if (!pgd_step(x, delta, grad, cfg)) out.zero_grad = true;
  }
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = x[i] + delta[i];
  std::vector<float> logits(static_cast<std::size_t>(f));
  model.forward_one(adv.data(), logits.data());
  out.final_loss = static_cast<double>(
      cross_entropy<float>({logits.data(), logits.size()}, {label.data(), label.size()}));
  if (trace) trace->push_back(out.final_loss);
  out.pred = argmax_class<float>({logits.data(), logits.size()});
  out.success = cfg.mode == AttackMode::kTargeted ? (out.pred == target) : (out.pred != y);
  return out;
}

}  // namespace

PerturbationResult run_pgd(const Classifier<float>& model, const Sample& sample,
                           const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& x = sample.image.pixels;
  PerturbationResult res;
  res.delta.assign(x.size(), 0.0f);
  std::vector<float> adv(x.size());
  std::vector<float> grad(x.size());
  const auto out = pgd_core(model, {x.data(), x.size()}, sample.fine_label, cfg, rng,
                            {res.delta.data(), res.delta.size()}, {adv.data(), adv.size()},
                            {grad.data(), grad.size()}, &res.loss_trace);
  res.adversarial_image = sample.image;
  res.adversarial_image.pixels = std::move(adv);
  res.success = out.success;
  res.pred_class = out.pred;
  res.zero_grad_encountered = out.zero_grad;
  return res;
}

BatchAttackResult run_pgd_batch(const Classifier<float>& model, std::span<const float> pixels,
                                std::span<const int> labels, std::span<const int> targets, int n,
                                const AttackConfig& cfg, std::uint64_t base_seed) {
  if (cfg.mode == AttackMode::kTargeted && targets.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("attack: targeted batch needs one target per sample");
  }
  {
    AttackConfig base = cfg;
    if (base.mode == AttackMode::kTargeted) base.target_class = 0;  // per-sample targets
    base.validate();
  }
  const auto shape = model.input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);
  if (pixels.size() != d * static_cast<std::size_t>(n)) {
    throw std::runtime_error("attack: batch pixel buffer size mismatch");
  }
  BatchAttackResult res;
  res.adversarial_pixels.assign(pixels.begin(), pixels.end());
  res.success.assign(static_cast<std::size_t>(n), 0);
  res.pred_class.assign(static_cast<std::size_t>(n), -1);
  res.final_loss.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<int> zero_grad(static_cast<std::size_t>(n), 0);

  parallel_chunks(static_cast<std::size_t>(n), 4, [&](std::size_t lo, std::size_t hi) {
    std::vector<float> delta(d), adv(d), grad(d);
    for (std::size_t i = lo; i < hi; ++i) {
      AttackConfig per_sample = cfg;
      if (cfg.mode == AttackMode::kTargeted) per_sample.target_class = targets[i];
      Rng rng(splitmix64(base_seed ^ (0x9E3779B97F4A7C15ull * (i + 1))));
      const float* x = pixels.data() + i * d;
      const auto out = pgd_core(model, {x, d}, labels[i], per_sample, rng,
                                {delta.data(), d}, {adv.data(), d}, {grad.data(), d}, nullptr);
      std::copy(adv.begin(), adv.end(), res.adversarial_pixels.begin() + static_cast<std::ptrdiff_t>(i * d));
      res.success[i] = out.success ? 1 : 0;
      res.pred_class[i] = out.pred;
      res.final_loss[i] = out.final_loss;
      zero_grad[i] = out.zero_grad ? 1 : 0;
    }
  });
  res.input_grad_evals = static_cast<std::size_t>(n) * static_cast<std::size_t>(cfg.steps);
  for (int z : zero_grad) res.zero_grad_count += z;
  return res;
}

int sample_target(int y, const SemanticTargetSet& targets, Rng& rng) {
  if (y < 0 || y >= static_cast<int>(targets.targets.size())) {
    throw std::runtime_error("sample_target: class " + std::to_string(y) + " out of range");
  }
  const auto& cand = targets.for_class(y);
  if (cand.empty()) {
    throw std::runtime_error("sample_target: empty target set for class " + std::to_string(y));
  }
  return cand[static_cast<std::size_t>(rng.uniform_index(cand.size()))];
}

void save_attack_results_csv(const std::filesystem::path& p,
                             std::span<const AttackResultRow> rows) {
  CsvTable t;
  t.header = {"sample_id", "mode", "epsilon", "target_class", "success", "final_loss", "pred_class"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(r.sample_id),
                      r.mode == AttackMode::kTargeted ? "targeted" : "untargeted",
                      format_g9(r.epsilon), std::to_string(r.target_class),
                      r.success ? "1" : "0", format_g9(r.final_loss),
                      std::to_string(r.pred_class)});
  }
  t.save(p);
}

}  // namespace sevtrain
