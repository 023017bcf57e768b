#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mmal/datasets.hpp"
#include "mmal/studies.hpp"

namespace {

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& kv : raw) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmal: pool-based active learning studies on a synthetic multimodal task"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string out_dir;
  std::string study;
  std::string strategy;
  std::string dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset file from the config's dataset block");
  gen->add_option("--config", config_path, "study config (JSON)")->required();
  gen->add_option("--out", out_path, "dataset file to write")->required();
  gen->add_option("--set", sets, "override a config key, dotted path: --set dataset.n_items=500");

  auto* run = app.add_subcommand("run", "run a study and write its report files");
  run->add_option("--config", config_path, "study config (JSON)")->required();
  run->add_option("--study", study, "override the study kind (savings|overlap|goal|convergence|fastcheck)");
  run->add_option("--strategy", strategy, "restrict the study to one strategy arm");
  run->add_option("--seed", seeds, "replace the seed roster (repeatable)");
  run->add_option("--out", out_dir, "override the output directory");
  run->add_option("--set", sets, "override a config key, dotted path: --set loop.epochs=10");

  auto* val = app.add_subcommand("validate-outputs", "schema-check every file in a study output directory");
  val->add_option("--dir", dir, "study output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const mmal::StudyConfig cfg = mmal::load_study_config(config_path, parse_sets(sets));
      const mmal::Dataset ds = mmal::generate_synthetic(cfg.dataset);
      mmal::save_dataset(ds, out_path);
      std::printf("wrote %s (%d items, %d classes)\n", out_path.c_str(), ds.size(), ds.num_classes());
    } else if (run->parsed()) {
      auto overrides = parse_sets(sets);
      if (!study.empty()) overrides.emplace_back("study", "\"" + study + "\"");
      if (!out_dir.empty()) overrides.emplace_back("out_dir", "\"" + out_dir + "\"");
      if (!strategy.empty()) overrides.emplace_back("strategies", "[\"" + strategy + "\"]");
      if (!seeds.empty()) {
        std::string roster = "[";
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          if (i > 0) roster += ",";
          roster += std::to_string(seeds[i]);
        }
        roster += "]";
        overrides.emplace_back("seeds", roster);
      }
      const mmal::StudyConfig cfg = mmal::load_study_config(config_path, overrides);
      mmal::run_study(cfg);
      std::printf("study %s done: %s\n", mmal::to_string(cfg.study).c_str(), cfg.out_dir.c_str());
    } else if (val->parsed()) {
      mmal::validate_outputs(dir);
      std::printf("ok: %s\n", dir.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
