#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "pathagg/cot_graph.hpp"
#include "pathagg/error.hpp"
#include "pathagg/pipeline.hpp"

using namespace pathagg;
namespace fs = std::filesystem;

namespace {

const fs::path kData = PATHAGG_DATA_DIR;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pathagg_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tiny end-to-end configuration on Countries.
ExperimentConfig tiny_config(const fs::path& cot_input) {
  auto c = preset_config("countries_s3", kData);
  c.walk.l_max = {1, 3};
  c.walk.walk_count = 300;
  c.walk.chunk_len = 16;
  c.lm.layers = 1;
  c.lm.heads = 2;
  c.lm.model_dim = 16;
  c.lm.ff_dim = 32;
  c.train.steps = 10;
  c.train.batch_size = 4;
  c.rules.n_max = {1, 3};
  c.analysis.prop1_sizes = {{5, 3}};
  c.analysis.prop1_trials = 50;
  c.cot.input = cot_input.string();
  c.cot.dim = 16;
  c.cot.k = 6;
  c.cot.l_max = 4;
  c.cot.paths = 30;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PATHAGG_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config json and hashing") {
  const auto base = preset_config("umls", kData);
  const auto round = config_from_json(to_json(base));
  CHECK(to_json(round) == to_json(base));
  CHECK(config_hash(round) == config_hash(base));
  CHECK(config_hash(base).size() == 16);

  auto other = base;
  other.seed = 1;
  CHECK(config_hash(other) != config_hash(base));
  other = base;
  other.rules.logistic.lambda = 0.5;
  CHECK(config_hash(other) != config_hash(base));
  other = base;
  other.jobs = 8;
  CHECK(config_hash(other) == config_hash(base));

  auto js = to_json(base);
  apply_override(js, "walk.l_max=[2,4]");
  apply_override(js, "dataset.name=renamed");
  apply_override(js, "rules.norm=\"l2sq\"");
  const auto ov = config_from_json(js);
  CHECK(ov.walk.l_max == std::vector<std::size_t>{2, 4});
  CHECK(ov.dataset.name == "renamed");
  CHECK(ov.rules.logistic.norm == WeightNorm::kL2Squared);
  CHECK_THROWS_AS(apply_override(js, "no_equals_sign"), ConfigError);

  js = to_json(base);
  js["walk"]["typo"] = 1;
  CHECK_THROWS_AS(config_from_json(js), ConfigError);
  js = to_json(base);
  js["train"]["steps"] = "many";
  CHECK_THROWS_AS(config_from_json(js), ConfigError);

  auto bad = base;
  bad.lm.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = base;
  bad.dataset.train = (kData / "nope.txt").string();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(preset_config("nope", kData), ConfigError);

  const auto dir = temp_dir("cfg");
  save_config(base, dir / "c.json");
  CHECK(config_hash(load_config(dir / "c.json")) == config_hash(base));
}

TEST_CASE("end-to-end on a tiny configuration") {
  const auto root = temp_dir("e2e");
  write_cot_jsonl(synthetic_cot_corpus(25, 0), root / "cot.jsonl");
  const auto cfg = tiny_config(root / "cot.jsonl");
  const auto ctx = open_run(cfg, root / "runs");
  CHECK(ctx.dir == root / "runs" / config_hash(cfg));
  CHECK(fs::exists(ctx.path("config.json")));

  CHECK_THROWS_AS(cmd_gen_corpus(ctx), DataError);
  cmd_ingest(ctx);
  cmd_gen_corpus(ctx);
  CHECK(fs::exists(ctx.path(corpus_file(1))));
  CHECK_THROWS_AS(cmd_kl_grid(ctx), DataError);
  cmd_train_lm(ctx);
  cmd_mine_rules(ctx);
  cmd_learn_weights(ctx);
  cmd_eval(ctx);
  cmd_kl_grid(ctx);
  cmd_prop1_check(ctx);
  cmd_cot_graph(ctx);
  cmd_cot_walk(ctx);
  cmd_cot_plan(ctx);
  for (const char* f : {"eval/accuracy_curve.csv", "kl/kl_grid.csv", "kl/kl_raw.csv", "prop1/prop1_report.csv",
                        "cot/graph.json", "cot/paths.jsonl", "cot/plan/manifest.json"})
    CHECK_MESSAGE(fs::exists(ctx.path(f)), f);
  CHECK(slurp(ctx.path("kl/kl_grid.csv")).find("config_hash=" + ctx.hash) != std::string::npos);
  CHECK(rule_accuracies(ctx).size() == 2);

  // Existing outputs are kept; --force regenerates identical bytes.
  const auto grid = slurp(ctx.path("kl/kl_grid.csv"));
  auto forced = ctx;
  forced.force = true;
  cmd_kl_grid(forced);
  CHECK(slurp(ctx.path("kl/kl_grid.csv")) == grid);
}

TEST_CASE("an untrained LM scores close to uniform") {
  const auto root = temp_dir("untrained");
  auto cfg = tiny_config({});
  cfg.train.steps = 0;
  cfg.walk.l_max = {1};
  cfg.rules.n_max = {1};
  const auto ctx = open_run(cfg, root);
  cmd_ingest(ctx);
  cmd_gen_corpus(ctx);
  cmd_train_lm(ctx);
  cmd_mine_rules(ctx);
  cmd_learn_weights(ctx);
  cmd_kl_grid(ctx);
  std::ifstream in(ctx.path("kl/kl_grid.csv"));
  std::string line, header, row;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') (header.empty() ? header : row) = line;
  std::vector<std::string> names, values;
  for (std::stringstream h(header); std::getline(h, line, ',');) names.push_back(line);
  for (std::stringstream r(row); std::getline(r, line, ',');) values.push_back(line);
  REQUIRE(names.size() == values.size());
  const auto col = std::find(names.begin(), names.end(), "P_u") - names.begin();
  REQUIRE(col < static_cast<long>(names.size()));
  CHECK(std::stod(values[static_cast<std::size_t>(col)]) < 0.1);
}

TEST_CASE("cli exit codes") {
  const auto root = temp_dir("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("init " + (root / "c.json").string() + " --preset countries_s3 --data-dir " + kData.string()) == 0);
  CHECK(fs::exists(root / "c.json"));
  CHECK(run_cli("-c " + (root / "missing.json").string() + " ingest") == 2);
  CHECK(run_cli("-c " + (root / "c.json").string() + " --set lm.heads=3 --root " + root.string() + " ingest") == 2);
  CHECK(run_cli("-c " + (root / "c.json").string() + " --root " + root.string() + " gen-corpus") == 3);
  CHECK(run_cli("-c " + (root / "c.json").string() + " --root " + root.string() + " ingest") == 0);

  std::ofstream(root / "bad_train.txt") << "A\tr\tB\nbroken line\n";
  std::ofstream(root / "test.txt") << "A\tr\tB\n";
  CHECK(run_cli("--set dataset.train=" + (root / "bad_train.txt").string() + " --set dataset.test=" +
                (root / "test.txt").string() + " --root " + root.string() + " ingest") == 3);
}
