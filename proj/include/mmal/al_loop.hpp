#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmal/bayes_mlp.hpp"
#include "mmal/datasets.hpp"
#include "mmal/scoring.hpp"

namespace mmal {

enum class RetrainPolicy { kAuto, kWarmStart, kFromScratch };

// Knobs for one experiment. The initial training size N and the target-type
// filter are properties of the split; kAuto retrains from scratch exactly when
// the split carries a target type, warm-starts otherwise.
struct ALConfig {
  int iterations = 10;       // L
  int mc_samples = 10;       // M parameter draws per scoring round
  int select_per_iter = 10;  // G
  int epochs = 20;           // K epochs per (re)train
  double learning_rate = 0.05;
  int batch_size = 16;
  double l2 = 0.0;
  std::vector<int> hidden = {24, 24};
  Strategy strategy = Strategy::kPassive;
  RetrainPolicy retrain = RetrainPolicy::kAuto;
  std::uint64_t model_seed = 1;
  std::uint64_t mask_seed = 2;
  std::uint64_t selection_seed = 3;
};

// The only path that reveals hidden labels. Construction snapshots the
// dataset's per-item label read counters; audit_violations() then counts any
// read of a pool or test-domain label that this oracle did not perform itself.
class AnswerOracle {
 public:
  AnswerOracle(const Dataset& ds, const DatasetSplit& split);

  // Reveals ground truth for pool ids, once each. Rejects ids outside the
  // pool and repeat queries.
  std::vector<LabeledExample> query(std::span<const int> ids);

  // Labels that were never hidden: initial-train and evaluation ids.
  int known_label(int id) const;

  int queried_count() const { return queried_count_; }
  long long audit_violations() const;

 private:
  const Dataset& ds_;
  std::vector<char> in_pool_;
  std::vector<char> hidden_;  // pool or test-domain
  std::vector<char> known_;   // initial-train or eval
  std::vector<char> queried_;
  std::vector<std::uint64_t> allowed_reads_;  // snapshot + sanctioned queries
  int queried_count_ = 0;
};

struct IterationRecord {
  int iteration = 0;  // 0 is the model trained on the initial set alone
  int train_size = 0;
  double accuracy = 0.0;
  double wallclock_score_ms = 0.0;
  std::uint64_t mask_seed = 0;  // scoring mask seed, 0 on row 0
  std::vector<int> selected;    // in selection order (score desc, id asc)
  std::map<std::string, int> type_counts;
  long long floored_divisions = 0;
};

struct ExperimentLog {
  Strategy strategy = Strategy::kPassive;
  std::uint64_t split_id = 0;  // fingerprint tying logs to their split
  std::vector<std::string> type_set;
  std::vector<IterationRecord> rows;
  std::string truncation_reason;  // empty when all L iterations completed
};

std::uint64_t split_fingerprint(const DatasetSplit& split);

// Top-g ids by score, ties broken by ascending id; returns the whole pool
// when g exceeds it.
std::vector<int> select_top_g(const ScoreVector& scores, int g);

// Posterior-mean argmax accuracy over the evaluation ids, labels read through
// the oracle's sanctioned path.
double eval_accuracy(const ModelParams& params, const Dataset& ds, const AnswerOracle& oracle,
                     std::span<const int> eval_ids, int mc_samples, std::uint64_t mask_seed);

struct ExperimentResult {
  ExperimentLog log;
  ModelParams final_params;
  long long audit_violations = 0;
};

ExperimentResult run_experiment(const ALConfig& cfg, const Dataset& ds, const DatasetSplit& split);

// Selection overlap |sel_a ∩ sel_b| / |sel_a| in percent, over all iterations.
double overlap_pct(const ExperimentLog& a, const ExperimentLog& b);

struct OverlapMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd pct;  // (i, j) = overlap_pct(logs[i], logs[j]); diagonal trivially 100
};

OverlapMatrix overlap_matrix(std::span<const ExperimentLog> logs);

// Per-iteration CSV plus a selected-ids sidecar (one row per selected id).
void save_experiment_log(const ExperimentLog& log, const std::string& csv_path, const std::string& ids_path);
void save_overlap(const OverlapMatrix& m, const std::string& path);

}  // namespace mmal
