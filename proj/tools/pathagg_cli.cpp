#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pathagg/config.hpp"
#include "pathagg/error.hpp"
#include "pathagg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pathagg;

namespace {

struct Globals {
  std::string config_path;
  std::string root;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool force = false;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  nlohmann::json js = nlohmann::json::object();
  fs::path base;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw ConfigError("cannot open config " + g.config_path);
    try {
      js = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(g.config_path + ": " + e.what());
    }
    base = fs::path(g.config_path).parent_path();
  }
  for (const auto& o : g.overrides) apply_override(js, o);
  if (g.seed) js["seed"] = *g.seed;
  if (g.jobs) js["jobs"] = *g.jobs;
  return config_from_json(js, base);
}

RunContext context(const Globals& g) {
  const fs::path root = g.root.empty() ? default_run_root() : fs::path(g.root);
  auto ctx = open_run(resolve_config(g), root);
  ctx.force = g.force;
  ctx.quiet = g.quiet;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-walk knowledge-graph reasoning experiments"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--root", g.root, std::string("Run-directory root (default $") + kRunRootEnv + " or ./runs)");
  app.add_option("-s,--set", g.overrides, "Override a config field, e.g. --set walk.l_max=[1,5]");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("-j,--jobs", g.jobs, "Worker threads");
  app.add_flag("--force", g.force, "Recompute outputs that already exist");
  app.add_flag("-q,--quiet", g.quiet, "No progress messages");

  std::function<void()> action;

  auto* init = app.add_subcommand("init", "Write a full default config");
  std::string init_out = "pathagg.json", preset, data_dir = "data";
  init->add_option("output", init_out, "Config path to write");
  init->add_option("--preset", preset, "Fill dataset paths for a bundled dataset (countries_s3, umls, kinship)");
  init->add_option("--data-dir", data_dir, "Directory holding bundled datasets");
  init->callback([&] {
    action = [&] {
      nlohmann::json js = to_json(preset.empty() ? ExperimentConfig{} : preset_config(preset, data_dir));
      for (const auto& o : g.overrides) apply_override(js, o);
      const auto cfg = config_from_json(js);
      save_config(cfg, init_out);
      std::cout << init_out << '\n';
    };
  });

  auto* train = app.add_subcommand("train-lm", "Train one LM per walk.l_max");
  std::optional<std::size_t> only_l;
  train->add_option("--l-max", only_l, "Train only this L_max");

  const std::vector<std::pair<const char*, std::pair<const char*, std::function<void(const RunContext&)>>>> stages{
      {"ingest", {"Load and validate the dataset", cmd_ingest}},
      {"gen-corpus", {"Generate random-walk corpora", cmd_gen_corpus}},
      {"mine-rules", {"Mine rule sets per N_max", cmd_mine_rules}},
      {"learn-weights", {"Fit rule weights", cmd_learn_weights}},
      {"eval", {"Accuracy curves and rule-length stats", cmd_eval}},
      {"kl-grid", {"KL heatmap grid", cmd_kl_grid}},
      {"prop1-check", {"Numeric log-sum bound check", cmd_prop1_check}},
      {"cot-graph", {"Cluster CoT states into a latent graph", cmd_cot_graph}},
      {"cot-walk", {"Emit random walks on the latent graph", cmd_cot_walk}},
      {"cot-plan", {"Write the training plan", cmd_cot_plan}},
  };
  for (const auto& [name, info] : stages) {
    auto* sub = app.add_subcommand(name, info.first);
    auto fn = info.second;
    sub->callback([&, fn] {
      action = [&, fn] {
        const auto ctx = context(g);
        fn(ctx);
        std::cout << ctx.dir.string() << '\n';
      };
    });
  }
  train->callback([&] {
    action = [&] {
      const auto ctx = context(g);
      cmd_train_lm(ctx, only_l);
      std::cout << ctx.dir.string() << '\n';
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
