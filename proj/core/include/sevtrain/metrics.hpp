#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevtrain/attack.hpp"
#include "sevtrain/data.hpp"
#include "sevtrain/model.hpp"
#include "sevtrain/taxonomy.hpp"

namespace sevtrain {

struct EvalRecord {
  int sample_id = 0;
  int true_fine = 0;
  int pred_fine = 0;
  int true_coarse = 0;
  int pred_coarse = 0;
};

// Evaluation condition a report was computed under.
struct Condition {
  enum class Type { kClean, kAdversarial, kCorruption };
  Type type = Type::kClean;
  double epsilon = 0.0;  // adversarial
  std::string kind;      // corruption
  int severity = 0;      // corruption

  std::string label() const;
  // Group key for win-count summaries: "clean", "eps=<v>" or "severity=<s>".
  std::string group() const;
  bool operator==(const Condition& other) const;

  static Condition clean();
  static Condition adversarial(double epsilon);
  static Condition corruption(std::string kind, int severity);
};

// Top-1 accuracy plus the two mistake-severity metrics for one condition.
// The severity metrics are absent when there are no mistakes.
struct SeverityReport {
  Condition condition;
  int n_total = 0;
  int n_mistakes = 0;
  double top1_accuracy = 0.0;
  std::optional<double> avg_mistake_path_similarity;
  std::optional<double> coarse_accuracy_of_mistakes;
};

// One record per sample; pred = argmax with ties to the lowest class index.
std::vector<EvalRecord> evaluate(const Classifier<float>& model, const Dataset& ds,
                                 const ClassTaxonomy& taxonomy);

SeverityReport severity_report(std::span<const EvalRecord> records, const SimilarityMatrix& sim,
                               const Condition& condition);

// For each epsilon (ascending, 0 = clean baseline): attack every sample with
// untargeted PGD (zero init) and report on the adversarial images.
std::vector<SeverityReport> adversarial_sweep(const Classifier<float>& model, const Dataset& ds,
                                              const ClassTaxonomy& taxonomy,
                                              const SimilarityMatrix& sim,
                                              std::span<const double> epsilons, int attack_steps,
                                              std::uint64_t seed,
                                              std::vector<AttackResultRow>* attack_rows = nullptr,
                                              std::vector<std::vector<EvalRecord>>* records_out = nullptr);

// The default epsilon grid, covering the high-perturbation band.
std::span<const double> default_epsilon_grid();

// One report per corrupted set (keyed by its provenance kind/severity).
std::vector<SeverityReport> corruption_sweep(const Classifier<float>& model,
                                             std::span<const Dataset> corrupted_sets,
                                             const ClassTaxonomy& taxonomy,
                                             const SimilarityMatrix& sim,
                                             std::vector<std::vector<EvalRecord>>* records_out = nullptr);

// Mean of each severity metric across kinds, per severity level.
struct SeverityAggregate {
  int severity = 0;
  int kinds_counted = 0;
  std::optional<double> mean_coarse_accuracy_of_mistakes;
  std::optional<double> mean_avg_path_similarity;
};

std::vector<SeverityAggregate> aggregate_by_severity(std::span<const SeverityReport> reports);

// --- Model comparison ---------------------------------------------------------

struct ModelReports {
  std::string name;
  std::vector<SeverityReport> reports;
};

struct GroupWins {
  std::string group;
  std::map<std::string, int> wins_path_similarity;  // model -> strict wins
  std::map<std::string, int> wins_coarse_accuracy;
  int ties_path_similarity = 0;
  int ties_coarse_accuracy = 0;
};

struct ComparisonCell {
  std::string condition_label;
  std::string best_path_similarity;  // winning model, or "tie", or "-" if absent
  std::string best_coarse_accuracy;
};

struct Comparison {
  std::vector<GroupWins> groups;
  std::vector<ComparisonCell> cells;
};

// Requires identical condition grids; throws listing the mismatching
// conditions otherwise. Wins are strict; ties are counted separately.
Comparison compare_models(std::span<const ModelReports> models);

// --- Persistence ----------------------------------------------------------------

void save_reports_json(const std::filesystem::path& p, std::span<const SeverityReport> reports);
std::vector<SeverityReport> load_reports_json(const std::filesystem::path& p);
// Flat CSV: condition, epsilon_or_severity, kind, top1, n_mistakes,
// avg_path_sim, coarse_acc_mistakes (absent metrics print a dash).
void save_reports_csv(const std::filesystem::path& p, std::span<const SeverityReport> reports);

void save_eval_records_csv(const std::filesystem::path& p, std::span<const EvalRecord> records);
std::vector<EvalRecord> load_eval_records_csv(const std::filesystem::path& p);

}  // namespace sevtrain
