#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "sevtrain/csv.hpp"
#include "sevtrain/runner.hpp"
#include "sevtrain/svg.hpp"
#include "sevtrain/util.hpp"

using namespace sevtrain;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("runner");

namespace {

// Small, fast experiment: 4 classes, 12x12 images, one standard epoch.
std::string tiny_config(const fs::path& out, const char* extra = "") {
  std::string s = R"({
    "seed": 11,
    "out": ")" + out.string() + R"(",
    "dataset": {"source": "synthetic", "classes": 4, "images_per_class": 6,
                "test_images_per_class": 4, "image_size": 12, "data_seed": 2},
    "recipe": {"stages": [{"objective": "standard", "epochs": 1}],
               "batch_size": 8, "learning_rate": 0.05},
    "attack": {"epsilons": [0, 0.5], "steps": 3},
    "corruptions": {"native_kinds": ["brightness", "gaussian_noise"], "severities": [1, 3]},
    "targets_k": 2)" + std::string(extra) + "\n}";
  return s;
}

// Well-formedness scan: every open tag closes in order (spec'd subset of XML
// that our SVG writer emits).
bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    if (text.compare(pos, 4, "<!--") == 0) {
      pos = text.find("-->", pos);
      if (pos == std::string::npos) return false;
      continue;
    }
    if (text.compare(pos, 2, "<?") == 0) {
      pos = text.find("?>", pos);
      if (pos == std::string::npos) return false;
      continue;
    }
    const std::size_t end = text.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(pos + 1, end - pos - 1);
    if (!tag.empty() && tag.front() == '/') {
      std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!tag.empty() && tag.back() != '/') {
      const std::size_t space = tag.find_first_of(" \t\n");
      stack.push_back(space == std::string::npos ? tag : tag.substr(0, space));
    }
    pos = end + 1;
  }
  return stack.empty();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEVTRAIN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing and field-path errors") {
  SUBCASE("defaults expand fully") {
    const auto cfg = parse_run_config("{}");
    CHECK(cfg.seed == 42);
    CHECK(cfg.dataset.source == "synthetic");
    CHECK(cfg.recipe.preset == "Standard");
    CHECK(cfg.attack.epsilons.size() == 8);
    CHECK(cfg.corruptions.native_kinds.size() == 7);
    CHECK(cfg.targets_k == 5);
  }
  SUBCASE("resolved config is re-parseable and stable") {
    const auto cfg = parse_run_config("{}");
    const auto text = resolved_config_json(cfg);
    const auto cfg2 = parse_run_config(text);
    CHECK(resolved_config_json(cfg2) == text);
  }
  SUBCASE("bad fields name their path") {
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"dataset": {"classes": 1}})"),
                         doctest::Contains("dataset.classes"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"taxonomy": {"source": "file"}})"),
                         doctest::Contains("taxonomy.path"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"recipe": {"scale": "huge"}})"),
                         doctest::Contains("recipe.scale"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"attack": {"epsilons": [1.0, 0.5]}})"),
                         doctest::Contains("attack.epsilons"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"corruptions": {"severities": [0]}})"),
                         doctest::Contains("corruptions.severities"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config("{nope"), doctest::Contains("malformed"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_run_config(R"({"dataset": {"source": "cifar100"}, "taxonomy": {"source": "file", "path": "x"}})"),
        doctest::Contains("train_files"), ConfigError);
  }
}

TEST_CASE("cmd_train writes manifest, log, checkpoints deterministically") {
  const auto dir = fs::temp_directory_path() / "sevtrain_run_a";
  fs::remove_all(dir);
  const auto cfg = parse_run_config(tiny_config(dir));
  const auto out = cmd_train(cfg);

  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(out.training_log));
  CHECK(fs::exists(out.final_checkpoint));
  CHECK(fs::exists(dir / "checksums.json"));
  REQUIRE(out.checkpoints.size() == 1);  // single stage boundary

  const auto log = CsvTable::load(out.training_log);
  CHECK(log.header == std::vector<std::string>{"epoch", "stage", "objective", "mean_loss",
                                               "train_acc", "attack_success_rate"});
  CHECK(log.rows.size() == 1);

  SUBCASE("manifest is written before results and echoes the config") {
    const auto manifest = read_text_file(dir / "manifest.json");
    CHECK(manifest.find("\"recipe_name\": \"inline\"") != std::string::npos);
    CHECK(manifest.find("\"decisions\"") != std::string::npos);
    CHECK(manifest.find("\"attack_init\": \"zero\"") != std::string::npos);
  }

  SUBCASE("rerunning the same config yields byte-identical outputs") {
    const auto dir_b = fs::temp_directory_path() / "sevtrain_run_b";
    fs::remove_all(dir_b);
    auto cfg_b = parse_run_config(tiny_config(dir_b));
    const auto out_b = cmd_train(cfg_b);
    CHECK(read_binary_file(out.training_log) == read_binary_file(out_b.training_log));
    // checkpoint blobs identical
    CHECK(read_binary_file(dir / "checkpoint_final.f32") ==
          read_binary_file(dir_b / "checkpoint_final.f32"));
    fs::remove_all(dir_b);
  }
  fs::remove_all(dir);
}

TEST_CASE("cmd_eval_adv writes reports, records, attack rows and a valid chart") {
  const auto dir = fs::temp_directory_path() / "sevtrain_run_adv";
  fs::remove_all(dir);
  const auto cfg = parse_run_config(tiny_config(dir));
  const auto out = cmd_train(cfg);
  cmd_eval_adv(cfg, out.final_checkpoint, dir);

  const auto reports = load_reports_json(dir / "eval_adv_reports.json");
  REQUIRE(reports.size() == 2);  // grid {0, 0.5}
  CHECK(reports[0].condition.type == Condition::Type::kClean);
  CHECK(reports[1].condition.epsilon == 0.5);
  CHECK(fs::exists(dir / "eval_adv_reports.csv"));
  CHECK(fs::exists(dir / "attack_results.csv"));
  CHECK(fs::exists(dir / "eval_adv_records_eps_0.csv"));
  CHECK(fs::exists(dir / "eval_adv_records_eps_0.5.csv"));

  const auto svg = read_text_file(dir / "eval_adv_chart.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(xml_well_formed(svg));
  fs::remove_all(dir);
}

TEST_CASE("cmd_eval_corrupt writes the grid, aggregates and chart") {
  const auto dir = fs::temp_directory_path() / "sevtrain_run_corr";
  fs::remove_all(dir);
  const auto cfg = parse_run_config(tiny_config(dir));
  const auto out = cmd_train(cfg);
  cmd_eval_corrupt(cfg, out.final_checkpoint, dir);

  const auto reports = load_reports_json(dir / "eval_corrupt_reports.json");
  CHECK(reports.size() == 4);  // 2 kinds x 2 severities
  const auto agg = CsvTable::load(dir / "eval_corrupt_aggregates.csv");
  CHECK(agg.rows.size() == 2);  // severities 1 and 3
  CHECK(xml_well_formed(read_text_file(dir / "eval_corrupt_chart.svg")));
  fs::remove_all(dir);
}

TEST_CASE("cmd_report compares runs and flags grid mismatches") {
  const auto base = fs::temp_directory_path() / "sevtrain_report";
  fs::remove_all(base);
  const auto dir1 = base / "m1";
  const auto dir2 = base / "m2";

  auto cfg1 = parse_run_config(tiny_config(dir1));
  auto out1 = cmd_train(cfg1);
  cmd_eval_adv(cfg1, out1.final_checkpoint, dir1);

  auto cfg2 = parse_run_config(tiny_config(dir2, R"(, "checkpoint_every": 1)"));
  cfg2.seed = 12;  // a different model, same grids
  auto out2 = cmd_train(cfg2);
  cmd_eval_adv(cfg2, out2.final_checkpoint, dir2);

  SUBCASE("single directory passes through") {
    cmd_report({dir1}, base / "solo");
    const auto cells = CsvTable::load(base / "solo" / "comparison_cells.csv");
    CHECK(cells.rows.size() == 2);
    for (const auto& row : cells.rows) CHECK(row[2] != "");
  }
  SUBCASE("two runs produce win counts and overlay charts") {
    cmd_report({dir1, dir2}, base / "duo");
    CHECK(fs::exists(base / "duo" / "win_counts.csv"));
    CHECK(xml_well_formed(read_text_file(base / "duo" / "report_adv_chart.svg")));
  }
  SUBCASE("mismatched epsilon grids raise an error naming the conditions") {
    const auto dir3 = base / "m3";
    auto cfg3 = parse_run_config(tiny_config(dir3));
    const std::vector<double> shorter = {0.0};
    cfg3.attack.epsilons = shorter;
    auto out3 = cmd_train(cfg3);
    cmd_eval_adv(cfg3, out3.final_checkpoint, dir3);
    CHECK_THROWS_WITH_AS(cmd_report({dir1, dir3}, base / "bad"),
                         doctest::Contains("eps=0.5"), std::runtime_error);
  }
  fs::remove_all(base);
}

TEST_CASE("cmd_make_targets and cmd_gen_data") {
  const auto dir = fs::temp_directory_path() / "sevtrain_aux";
  fs::remove_all(dir);
  const auto cfg = parse_run_config(tiny_config(dir));

  cmd_make_targets(cfg, dir / "targets");
  const auto sim_csv = CsvTable::load(dir / "targets" / "similarity.csv");
  CHECK(sim_csv.header.size() == 4);  // class names
  CHECK(sim_csv.rows.size() == 4);
  CHECK(fs::exists(dir / "targets" / "target_sets.json"));

  cmd_gen_data(cfg, dir / "data");
  const auto train = load_dataset(dir / "data" / "train.json");
  const auto test = load_dataset(dir / "data" / "test.json");
  CHECK(train.size() == 24);
  CHECK(test.size() == 16);
  const auto tax = load_taxonomy(dir / "data" / "taxonomy.json");
  CHECK(tax.num_fine() == 4);
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes") {
  SUBCASE("usage errors exit 1") {
    CHECK(run_cli("definitely-not-a-command") == 1);
    CHECK(run_cli("train --config /nonexistent/config.json") == 1);
    CHECK(run_cli("eval-adv") == 1);  // missing required --checkpoint
  }
  SUBCASE("runtime failures exit 2") {
    // checkpoint path that does not exist
    CHECK(run_cli("eval-adv --checkpoint /nonexistent/ckpt.json") == 2);
  }
  SUBCASE("a working pipeline exits 0 and honors --print-config") {
    const auto dir = fs::temp_directory_path() / "sevtrain_cli_run";
    fs::remove_all(dir);
    const auto cfg_path = dir / "cfg.json";
    write_text_file(cfg_path, tiny_config(dir / "run"));
    CHECK(run_cli("train --config " + cfg_path.string() + " --print-config") == 0);
    CHECK(run_cli("train --config " + cfg_path.string()) == 0);
    CHECK(fs::exists(dir / "run" / "checkpoint_final.json"));
    CHECK(run_cli("eval-adv --config " + cfg_path.string() + " --checkpoint " +
                  (dir / "run" / "checkpoint_final.json").string()) == 0);
    CHECK(run_cli("report " + (dir / "run").string() + " --out " + (dir / "rep").string()) == 0);
    fs::remove_all(dir);
  }
}

TEST_CASE("svg renderer emits well-formed markup for edge cases") {
  ChartPanel empty{"empty", "x", "y", {}, false, 0, 1};
  ChartSeries with_gap{"gappy", {0, 1, 2}, {0.5, std::numeric_limits<double>::quiet_NaN(), 0.7}};
  ChartPanel gappy{"gaps", "x", "y", {with_gap}, true, 0, 1};
  const auto svg = render_chart_svg({empty, gappy});
  CHECK(xml_well_formed(svg));
  CHECK(svg.find("gappy") != std::string::npos);
}

TEST_SUITE_END();
