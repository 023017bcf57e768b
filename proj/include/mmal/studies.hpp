#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmal/al_loop.hpp"
#include "mmal/datasets.hpp"

namespace mmal {

enum class StudyKind { kSavings, kOverlap, kGoal, kConvergence, kFastcheck };

std::string to_string(StudyKind k);
StudyKind study_kind_from_string(const std::string& name);

struct SplitSpec {
  int n_initial = 50;
  int t_test = 100;
  int n_eval = 200;
  std::string target_type;  // non-empty only for the goal study
  std::uint64_t seed = 11;
};

// One config file drives every study; unused blocks are simply ignored by
// studies that don't need them.
struct StudyConfig {
  StudyKind study = StudyKind::kSavings;
  std::string out_dir = "out";
  SynthConfig dataset;
  std::string dataset_path;  // when set, load this file instead of generating
  SplitSpec split;
  ALConfig loop;  // strategy and seeds are overridden per run
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> strategy_filter;  // empty = all strategies of the study

  // validation studies (convergence, fastcheck)
  std::string checkpoint;
  std::vector<int> m_grid;  // empty = study default
  int sample_items = 200;
  int repetitions = 3;
  double rho_target = 0.9;
  std::uint64_t study_seed = 99;

  // savings breakpoint sweep over initial sizes
  std::vector<int> breakpoint_n;
};

using ConfigOverrides = std::span<const std::pair<std::string, std::string>>;

// JSON with dotted-path overrides ("loop.epochs=5", "seeds=[3]"); override
// values parse as JSON when they can, as strings otherwise.
StudyConfig parse_study_config(const std::string& json_text, ConfigOverrides overrides = {});
StudyConfig load_study_config(const std::string& path, ConfigOverrides overrides = {});

// Canonical serialization of the effective config; echoed into the manifest
// and hashed for provenance.
std::string study_config_to_json(const StudyConfig& cfg);
std::string config_hash_hex(const std::string& canonical_json);

// Queried count at which the log first reaches the accuracy target, or -1.
int queries_to_accuracy(const ExperimentLog& log, double target);

struct ConvergenceTable {
  std::vector<int> m_grid;
  std::vector<Strategy> strategies;  // entropy, curiosity, goal
  std::vector<int> item_ids;
  // rho[strategy][rep][m-index] vs the same rep's largest-M reference; NaN
  // when either score vector is constant
  std::vector<std::vector<std::vector<double>>> rho;
  // scores[strategy][rep][m-index][item]
  std::vector<std::vector<std::vector<std::vector<double>>>> scores;

  // smallest M with rho >= target, or -1
  int min_m(std::size_t strategy_index, std::size_t rep, double target) const;
  int median_min_m(std::size_t strategy_index, double target) const;
};

ConvergenceTable convergence_table(const ModelParams& params, const Dataset& ds, const DatasetSplit& split,
                                   const StudyConfig& cfg);

struct FastcheckTable {
  std::vector<int> m_grid;
  std::vector<int> item_ids;
  std::vector<std::vector<double>> fast;   // [m-index][item]
  std::vector<std::vector<double>> exact;  // [m-index][item]
  std::vector<double> rho;                 // per m-index, NaN when undefined
};

FastcheckTable fastcheck_table(const ModelParams& params, const Dataset& ds, const DatasetSplit& split,
                               const StudyConfig& cfg);

// The studies' shared building blocks, exposed so other harnesses can rerun
// individual arms with the exact same seed derivations. With per_seed set,
// dataset and split seeds are derived from the roster seed; otherwise the
// config's own seeds are used as-is.
Dataset study_dataset(const StudyConfig& cfg, std::uint64_t roster_seed, bool per_seed);
DatasetSplit study_split(const StudyConfig& cfg, const Dataset& ds, std::uint64_t roster_seed, bool per_seed);

// One strategy arm under the study seed scheme; throws if the run read any
// hidden label outside the sanctioned oracle path.
ExperimentResult run_one(const StudyConfig& cfg, const Dataset& ds, const DatasetSplit& split, Strategy strategy,
                         std::uint64_t roster_seed);

void run_savings_study(const StudyConfig& cfg);
void run_overlap_study(const StudyConfig& cfg);
void run_goal_study(const StudyConfig& cfg);
void run_convergence_study(const StudyConfig& cfg);
void run_fastcheck_study(const StudyConfig& cfg);

// Writes the manifest, then dispatches on cfg.study.
void run_study(const StudyConfig& cfg);

// Schema check over a study output directory; throws std::runtime_error with
// a one-line reason on the first violation.
void validate_outputs(const std::string& dir);

}  // namespace mmal
