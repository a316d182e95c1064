#include "sevtrain/metrics.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "sevtrain/csv.hpp"
#include "sevtrain/util.hpp"

namespace sevtrain {

using nlohmann::json;

std::string Condition::label() const {
  switch (type) {
    case Type::kClean: return "clean";
    case Type::kAdversarial: return "adversarial(eps=" + format_g9(epsilon) + ")";
    case Type::kCorruption: return kind + "@" + std::to_string(severity);
  }
  return "?";
}

std::string Condition::group() const {
  switch (type) {
    case Type::kClean: return "clean";
    case Type::kAdversarial: return "eps=" + format_g9(epsilon);
    case Type::kCorruption: return "severity=" + std::to_string(severity);
  }
  return "?";
}

bool Condition::operator==(const Condition& other) const {
  return type == other.type && epsilon == other.epsilon && kind == other.kind &&
         severity == other.severity;
}

Condition Condition::clean() { return Condition{}; }

Condition Condition::adversarial(double epsilon) {
  Condition c;
  if (epsilon == 0.0) return c;  // the clean baseline
  c.type = Type::kAdversarial;
  c.epsilon = epsilon;
  return c;
}

Condition Condition::corruption(std::string kind, int severity) {
  Condition c;
  c.type = Type::kCorruption;
  c.kind = std::move(kind);
  c.severity = severity;
  return c;
}

std::vector<EvalRecord> evaluate(const Classifier<float>& model, const Dataset& ds,
                                 const ClassTaxonomy& taxonomy) {
  if (model.num_classes() != taxonomy.num_fine()) {
    throw std::runtime_error("evaluate: model has " + std::to_string(model.num_classes()) +
                             " classes, taxonomy has " + std::to_string(taxonomy.num_fine()));
  }
  const auto shape = model.input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);
  const std::size_t f = static_cast<std::size_t>(model.num_classes());
  std::vector<EvalRecord> records(ds.size());
  parallel_chunks(ds.size(), 16, [&](std::size_t lo, std::size_t hi) {
    std::vector<float> logits(f);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& s = ds.samples[i];
      if (s.image.pixels.size() != d) {
        throw std::runtime_error("evaluate: sample " + std::to_string(i) + " shape mismatch");
      }
      model.forward_one(s.image.pixels.data(), logits.data());
      auto& r = records[i];
      r.sample_id = static_cast<int>(i);
      r.true_fine = s.fine_label;
      r.pred_fine = argmax_class<float>({logits.data(), logits.size()});
      r.true_coarse = taxonomy.coarse_of(s.fine_label);
      r.pred_coarse = taxonomy.coarse_of(r.pred_fine);
    }
  });
  return records;
}

SeverityReport severity_report(std::span<const EvalRecord> records, const SimilarityMatrix& sim,
                               const Condition& condition) {
  if (records.empty()) throw std::runtime_error("severity_report: empty record list");
  SeverityReport rep;
  rep.condition = condition;
  rep.n_total = static_cast<int>(records.size());
  long double sim_sum = 0.0L;
  int coarse_hits = 0;
  for (const auto& r : records) {
    if (r.pred_fine == r.true_fine) continue;
    ++rep.n_mistakes;
    sim_sum += static_cast<long double>(sim.at(r.pred_fine, r.true_fine));
    if (r.pred_coarse == r.true_coarse) ++coarse_hits;
  }
  rep.top1_accuracy = 1.0 - static_cast<double>(rep.n_mistakes) / static_cast<double>(rep.n_total);
  if (rep.n_mistakes > 0) {
    rep.avg_mistake_path_similarity =
        static_cast<double>(sim_sum / static_cast<long double>(rep.n_mistakes));
    rep.coarse_accuracy_of_mistakes =
        static_cast<double>(coarse_hits) / static_cast<double>(rep.n_mistakes);
  }
  return rep;
}

namespace {
const double kDefaultEpsilons[] = {0.0, 0.25, 0.5, 1.0, 1.5, 1.75, 2.0, 2.5};
}

std::span<const double> default_epsilon_grid() {
  return {kDefaultEpsilons, sizeof(kDefaultEpsilons) / sizeof(double)};
}

std::vector<SeverityReport> adversarial_sweep(const Classifier<float>& model, const Dataset& ds,
                                              const ClassTaxonomy& taxonomy,
                                              const SimilarityMatrix& sim,
                                              std::span<const double> epsilons, int attack_steps,
                                              std::uint64_t seed,
                                              std::vector<AttackResultRow>* attack_rows,
                                              std::vector<std::vector<EvalRecord>>* records_out) {
  if (epsilons.empty()) throw std::runtime_error("adversarial_sweep: empty epsilon grid");
  for (std::size_t i = 1; i < epsilons.size(); ++i) {
    if (epsilons[i] <= epsilons[i - 1]) {
      throw std::runtime_error("adversarial_sweep: epsilons must be strictly ascending");
    }
  }
  const auto shape = model.input_shape();
  const std::size_t d = static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
                        static_cast<std::size_t>(shape[2]);
  const int n = static_cast<int>(ds.size());
  std::vector<float> pixels(static_cast<std::size_t>(n) * d);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::copy(ds.samples[static_cast<std::size_t>(i)].image.pixels.begin(),
              ds.samples[static_cast<std::size_t>(i)].image.pixels.end(),
              pixels.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * d));
    labels[static_cast<std::size_t>(i)] = ds.samples[static_cast<std::size_t>(i)].fine_label;
  }

  std::vector<SeverityReport> reports;
  for (double eps : epsilons) {
    std::vector<EvalRecord> records;
    if (eps == 0.0) {
      records = evaluate(model, ds, taxonomy);
    } else {
      AttackConfig cfg;
      cfg.epsilon = eps;
      cfg.steps = attack_steps;
      cfg.mode = AttackMode::kUntargeted;
      const auto out = run_pgd_batch(model, {pixels.data(), pixels.size()},
                                     {labels.data(), labels.size()}, {}, n, cfg,
                                     derive_seed(seed, "sweep-eps-" + format_g9(eps)));
      records.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        auto& r = records[static_cast<std::size_t>(i)];
        r.sample_id = i;
        r.true_fine = labels[static_cast<std::size_t>(i)];
        r.pred_fine = out.pred_class[static_cast<std::size_t>(i)];
        r.true_coarse = taxonomy.coarse_of(r.true_fine);
        r.pred_coarse = taxonomy.coarse_of(r.pred_fine);
        if (attack_rows) {
          attack_rows->push_back({i, AttackMode::kUntargeted, eps, -1,
                                  out.success[static_cast<std::size_t>(i)] != 0,
                                  out.final_loss[static_cast<std::size_t>(i)],
                                  out.pred_class[static_cast<std::size_t>(i)]});
        }
      }
    }
    reports.push_back(severity_report(records, sim, Condition::adversarial(eps)));
    if (records_out) records_out->push_back(std::move(records));
  }
  return reports;
}

std::vector<SeverityReport> corruption_sweep(const Classifier<float>& model,
                                             std::span<const Dataset> corrupted_sets,
                                             const ClassTaxonomy& taxonomy,
                                             const SimilarityMatrix& sim,
                                             std::vector<std::vector<EvalRecord>>* records_out) {
  std::vector<SeverityReport> reports;
  for (const auto& ds : corrupted_sets) {
    if (ds.provenance.corruption_kind.empty()) {
      throw std::runtime_error("corruption_sweep: dataset '" + ds.provenance.source +
                               "' carries no corruption provenance");
    }
    auto records = evaluate(model, ds, taxonomy);
    reports.push_back(severity_report(
        records, sim,
        Condition::corruption(ds.provenance.corruption_kind, ds.provenance.corruption_severity)));
    if (records_out) records_out->push_back(std::move(records));
  }
  return reports;
}

std::vector<SeverityAggregate> aggregate_by_severity(std::span<const SeverityReport> reports) {
  std::map<int, SeverityAggregate> by_severity;
  std::map<int, std::pair<long double, int>> coarse_acc;  // sum, count
  std::map<int, std::pair<long double, int>> path_sim;
  for (const auto& r : reports) {
    if (r.condition.type != Condition::Type::kCorruption) continue;
    const int s = r.condition.severity;
    by_severity[s].severity = s;
    ++by_severity[s].kinds_counted;
    if (r.coarse_accuracy_of_mistakes) {
      coarse_acc[s].first += static_cast<long double>(*r.coarse_accuracy_of_mistakes);
      ++coarse_acc[s].second;
    }
    if (r.avg_mistake_path_similarity) {
      path_sim[s].first += static_cast<long double>(*r.avg_mistake_path_similarity);
      ++path_sim[s].second;
    }
  }
  std::vector<SeverityAggregate> out;
  for (auto& [s, agg] : by_severity) {
    if (coarse_acc[s].second > 0) {
      agg.mean_coarse_accuracy_of_mistakes =
          static_cast<double>(coarse_acc[s].first / coarse_acc[s].second);
    }
    if (path_sim[s].second > 0) {
      agg.mean_avg_path_similarity = static_cast<double>(path_sim[s].first / path_sim[s].second);
    }
    out.push_back(agg);
  }
  return out;
}

namespace {

// Strict winner of one metric across models; nullopt marks "no winner".
struct MetricWin {
  std::string winner;  // empty = all absent, "tie" = shared maximum
};

MetricWin metric_winner(const std::vector<const ModelReports*>& models, std::size_t cond_idx,
                        bool coarse_metric) {
  double best = -1.0;
  int best_count = 0;
  std::string best_name;
  for (const auto* m : models) {
    const auto& rep = m->reports[cond_idx];
    const auto& v = coarse_metric ? rep.coarse_accuracy_of_mistakes : rep.avg_mistake_path_similarity;
    if (!v) continue;
    if (*v > best) {
      best = *v;
      best_count = 1;
      best_name = m->name;
    } else if (*v == best) {
      ++best_count;
    }
  }
  if (best_count == 0) return {""};
  if (best_count > 1) return {"tie"};
  return {best_name};
}

}  // namespace

Comparison compare_models(std::span<const ModelReports> models) {
  if (models.empty()) throw std::runtime_error("compare_models: no models");
  const auto& ref = models.front();
  for (const auto& m : models) {
    if (m.reports.size() != ref.reports.size()) {
      std::string diff = "compare_models: condition grids differ between '" + ref.name +
                         "' and '" + m.name + "':";
      std::set<std::string> a, b;
      for (const auto& r : ref.reports) a.insert(r.condition.label());
      for (const auto& r : m.reports) b.insert(r.condition.label());
      for (const auto& c : a) {
        if (!b.count(c)) diff += " missing:" + c;
      }
      for (const auto& c : b) {
        if (!a.count(c)) diff += " extra:" + c;
      }
      throw std::runtime_error(diff);
    }
    for (std::size_t i = 0; i < ref.reports.size(); ++i) {
      if (!(m.reports[i].condition == ref.reports[i].condition)) {
        throw std::runtime_error("compare_models: condition mismatch at index " +
                                 std::to_string(i) + " ('" +
                                 ref.reports[i].condition.label() + "' vs '" +
                                 m.reports[i].condition.label() + "')");
      }
    }
  }

  std::vector<const ModelReports*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);

  Comparison cmp;
  std::map<std::string, GroupWins> groups;
  for (std::size_t ci = 0; ci < ref.reports.size(); ++ci) {
    const auto& cond = ref.reports[ci].condition;
    auto& g = groups[cond.group()];
    g.group = cond.group();
    const auto path_win = metric_winner(ptrs, ci, false);
    const auto coarse_win = metric_winner(ptrs, ci, true);

    ComparisonCell cell;
    cell.condition_label = cond.label();
    cell.best_path_similarity = path_win.winner.empty() ? "-" : path_win.winner;
    cell.best_coarse_accuracy = coarse_win.winner.empty() ? "-" : coarse_win.winner;
    cmp.cells.push_back(cell);

    if (path_win.winner == "tie") {
      ++g.ties_path_similarity;
    } else if (!path_win.winner.empty()) {
      ++g.wins_path_similarity[path_win.winner];
    }
    if (coarse_win.winner == "tie") {
      ++g.ties_coarse_accuracy;
    } else if (!coarse_win.winner.empty()) {
      ++g.wins_coarse_accuracy[coarse_win.winner];
    }
  }
  for (auto& [_, g] : groups) cmp.groups.push_back(std::move(g));
  return cmp;
}

// --- Persistence -------------------------------------------------------------

namespace {

json report_to_json(const SeverityReport& r) {
  json j = {
      {"condition", r.condition.label()},
      {"n_total", r.n_total},
      {"n_mistakes", r.n_mistakes},
      {"top1_accuracy", r.top1_accuracy},
  };
  switch (r.condition.type) {
    case Condition::Type::kClean: j["condition_type"] = "clean"; break;
    case Condition::Type::kAdversarial:
      j["condition_type"] = "adversarial";
      j["epsilon"] = r.condition.epsilon;
      break;
    case Condition::Type::kCorruption:
      j["condition_type"] = "corruption";
      j["kind"] = r.condition.kind;
      j["severity"] = r.condition.severity;
      break;
  }
  if (r.avg_mistake_path_similarity) j["avg_mistake_path_similarity"] = *r.avg_mistake_path_similarity;
  if (r.coarse_accuracy_of_mistakes) j["coarse_accuracy_of_mistakes"] = *r.coarse_accuracy_of_mistakes;
  return j;
}

SeverityReport report_from_json(const json& j) {
  SeverityReport r;
  const std::string type = j.at("condition_type").get<std::string>();
  if (type == "clean") {
    r.condition = Condition::clean();
  } else if (type == "adversarial") {
    r.condition = Condition::adversarial(j.at("epsilon").get<double>());
  } else if (type == "corruption") {
    r.condition = Condition::corruption(j.at("kind").get<std::string>(), j.at("severity").get<int>());
  } else {
    throw std::runtime_error("reports: unknown condition type '" + type + "'");
  }
  r.n_total = j.at("n_total").get<int>();
  r.n_mistakes = j.at("n_mistakes").get<int>();
  r.top1_accuracy = j.at("top1_accuracy").get<double>();
  if (j.contains("avg_mistake_path_similarity")) {
    r.avg_mistake_path_similarity = j.at("avg_mistake_path_similarity").get<double>();
  }
  if (j.contains("coarse_accuracy_of_mistakes")) {
    r.coarse_accuracy_of_mistakes = j.at("coarse_accuracy_of_mistakes").get<double>();
  }
  return r;
}

}  // namespace

void save_reports_json(const std::filesystem::path& p, std::span<const SeverityReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  write_text_file(p, arr.dump(2) + "\n");
}

std::vector<SeverityReport> load_reports_json(const std::filesystem::path& p) {
  json arr;
  try {
    arr = json::parse(read_text_file(p));
  } catch (const json::exception& e) {
    throw std::runtime_error("reports: " + p.string() + ": " + e.what());
  }
  std::vector<SeverityReport> out;
  for (const auto& j : arr) out.push_back(report_from_json(j));
  return out;
}

void save_reports_csv(const std::filesystem::path& p, std::span<const SeverityReport> reports) {
  CsvTable t;
  t.header = {"condition", "epsilon_or_severity", "kind", "top1", "n_mistakes",
              "avg_path_sim", "coarse_acc_mistakes"};
  for (const auto& r : reports) {
    std::string eps_or_sev = "0";
    std::string kind = "-";
    if (r.condition.type == Condition::Type::kAdversarial) {
      eps_or_sev = format_g9(r.condition.epsilon);
    } else if (r.condition.type == Condition::Type::kCorruption) {
      eps_or_sev = std::to_string(r.condition.severity);
      kind = r.condition.kind;
    }
    t.rows.push_back({r.condition.label(), eps_or_sev, kind, format_g9(r.top1_accuracy),
                      std::to_string(r.n_mistakes),
                      r.avg_mistake_path_similarity ? format_g9(*r.avg_mistake_path_similarity) : "-",
                      r.coarse_accuracy_of_mistakes ? format_g9(*r.coarse_accuracy_of_mistakes) : "-"});
  }
  t.save(p);
}

void save_eval_records_csv(const std::filesystem::path& p, std::span<const EvalRecord> records) {
  CsvTable t;
  t.header = {"sample_id", "true_fine", "pred_fine", "true_coarse", "pred_coarse"};
  for (const auto& r : records) {
    t.rows.push_back({std::to_string(r.sample_id), std::to_string(r.true_fine),
                      std::to_string(r.pred_fine), std::to_string(r.true_coarse),
                      std::to_string(r.pred_coarse)});
  }
  t.save(p);
}

std::vector<EvalRecord> load_eval_records_csv(const std::filesystem::path& p) {
  const auto t = CsvTable::load(p);
  const auto id = t.col("sample_id"), tf = t.col("true_fine"), pf = t.col("pred_fine"),
             tc = t.col("true_coarse"), pc = t.col("pred_coarse");
  std::vector<EvalRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    EvalRecord r;
    r.sample_id = std::stoi(row[id]);
    r.true_fine = std::stoi(row[tf]);
    r.pred_fine = std::stoi(row[pf]);
    r.true_coarse = std::stoi(row[tc]);
    r.pred_coarse = std::stoi(row[pc]);
    out.push_back(r);
  }
  return out;
}

}  // namespace sevtrain
