#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mmal/al_loop.hpp"

using namespace mmal;

namespace {

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.n_items = 240;
  cfg.dim_a = 2;
  cfg.dim_b = 2;
  cfg.num_classes = 3;
  cfg.type_mix = {{"binary", 0.4}, {"open", 0.6}};
  cfg.seed = 31;
  return cfg;
}

ALConfig fast_cfg(Strategy s) {
  ALConfig cfg;
  cfg.iterations = 3;
  cfg.mc_samples = 4;
  cfg.select_per_iter = 5;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.hidden = {8};
  cfg.strategy = s;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("select_top_g orders by score then id") {
  ScoreVector sv;
  sv.ids = {5, 3, 9};
  sv.values = {0.9, 0.1, 0.9};
  CHECK(select_top_g(sv, 2) == std::vector<int>{5, 9});
  CHECK(select_top_g(sv, 1) == std::vector<int>{5});
  CHECK(select_top_g(sv, 10) == std::vector<int>{5, 9, 3});

  sv.values = {0.5, 0.5, 0.5};
  CHECK(select_top_g(sv, 2) == std::vector<int>{3, 5});

  CHECK_THROWS_AS(select_top_g(sv, 0), std::invalid_argument);
  sv.values = {0.5};
  CHECK_THROWS_AS(select_top_g(sv, 1), std::invalid_argument);
}

TEST_CASE("answer oracle reveals pool labels once and knows train/eval labels") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);

  // reading a label before the oracle exists is fine: the snapshot absorbs it
  const int probe = split.pool[0];
  const int probe_label = ds.label(probe);

  AnswerOracle oracle(ds, split);
  CHECK(oracle.audit_violations() == 0);

  const std::vector<int> batch = {split.pool[0], split.pool[1], split.pool[2]};
  const auto answers = oracle.query(batch);
  REQUIRE(answers.size() == 3);
  CHECK(answers[0].label == probe_label);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(answers[i].features.size() == ds.dim_a() + ds.dim_b());
    CHECK(answers[i].features == ds.fused_features(batch[i]));
  }
  CHECK(oracle.queried_count() == 3);
  CHECK(oracle.audit_violations() == 0);

  // repeats, in-batch duplicates, and non-pool ids are rejected atomically
  CHECK_THROWS_AS(oracle.query(std::vector<int>{split.pool[0]}), std::invalid_argument);
  CHECK_THROWS_AS(oracle.query(std::vector<int>{split.pool[5], split.pool[5]}), std::invalid_argument);
  CHECK_THROWS_AS(oracle.query(std::vector<int>{split.test_domain[0]}), std::invalid_argument);
  CHECK_THROWS_AS(oracle.query(std::vector<int>{split.initial_train[0]}), std::invalid_argument);
  CHECK(oracle.queried_count() == 3);

  CHECK(oracle.known_label(split.initial_train[0]) == ds.label(split.initial_train[0]));
  CHECK(oracle.known_label(split.eval_ids[0]) == ds.label(split.eval_ids[0]));
  CHECK_THROWS_AS(oracle.known_label(split.pool[10]), std::invalid_argument);
}

TEST_CASE("audit catches label reads that bypass the oracle") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  AnswerOracle oracle(ds, split);

  (void)ds.label(split.pool[3]);  // cheating
  CHECK(oracle.audit_violations() == 1);
  (void)ds.label(split.pool[3]);
  (void)ds.label(split.test_domain[0]);
  CHECK(oracle.audit_violations() == 3);

  // train/eval labels were never hidden
  (void)ds.label(split.initial_train[0]);
  CHECK(oracle.audit_violations() == 3);

  // a sanctioned query only covers the oracle's own read
  const auto answers = oracle.query(std::vector<int>{split.pool[4]});
  CHECK(answers.size() == 1);
  CHECK(oracle.audit_violations() == 3);
  (void)ds.label(split.pool[4]);
  CHECK(oracle.audit_violations() == 4);
}

TEST_CASE("experiments are deterministic apart from wall-clock") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  const ALConfig cfg = fast_cfg(Strategy::kCuriosity);

  const ExperimentResult a = run_experiment(cfg, ds, split);
  const ExperimentResult b = run_experiment(cfg, ds, split);
  CHECK(a.audit_violations == 0);
  CHECK(b.audit_violations == 0);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  REQUIRE(a.log.rows.size() == 4);  // initial row plus three iterations
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    const auto& ra = a.log.rows[i];
    const auto& rb = b.log.rows[i];
    CHECK(ra.iteration == rb.iteration);
    CHECK(ra.train_size == rb.train_size);
    CHECK(ra.accuracy == rb.accuracy);
    CHECK(ra.mask_seed == rb.mask_seed);
    CHECK(ra.selected == rb.selected);
    CHECK(ra.type_counts == rb.type_counts);
    CHECK(ra.floored_divisions == rb.floored_divisions);
  }

  ALConfig other = cfg;
  other.model_seed = 99;
  const ExperimentResult c = run_experiment(other, ds, split);
  CHECK(c.final_params.layers[0].weights != a.final_params.layers[0].weights);
}

TEST_CASE("experiment bookkeeping: budgets, repeats, growth") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  ALConfig cfg = fast_cfg(Strategy::kEntropy);
  cfg.iterations = 4;
  cfg.select_per_iter = 6;

  const ExperimentResult res = run_experiment(cfg, ds, split);
  const auto& rows = res.log.rows;
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].iteration == 0);
  CHECK(rows[0].train_size == 20);
  CHECK(rows[0].selected.empty());

  std::set<int> seen;
  const std::set<int> pool(split.pool.begin(), split.pool.end());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].iteration == static_cast<int>(i));
    CHECK(rows[i].selected.size() == 6);
    CHECK(rows[i].train_size == 20 + static_cast<int>(i) * 6);
    int count_sum = 0;
    for (const auto& [tag, n] : rows[i].type_counts) count_sum += n;
    CHECK(count_sum == 6);
    for (int id : rows[i].selected) {
      CHECK(pool.count(id) == 1);
      CHECK(seen.insert(id).second);  // never re-queried
    }
  }
  CHECK(res.log.truncation_reason.empty());
  CHECK(res.log.strategy == Strategy::kEntropy);
  CHECK(res.log.split_id == split_fingerprint(split));
}

TEST_CASE("a drained pool truncates the loop") {
  SynthConfig synth = tiny_synth();
  synth.n_items = 70;
  const Dataset ds = generate_synthetic(synth);
  const DatasetSplit split = make_split(ds, 20, 20, 20, "", 7);  // pool of 10
  ALConfig cfg = fast_cfg(Strategy::kEntropy);
  cfg.iterations = 5;
  cfg.select_per_iter = 4;

  const ExperimentResult res = run_experiment(cfg, ds, split);
  // 4 + 4 + 2 drains the pool inside iteration 3
  REQUIRE(res.log.rows.size() == 4);
  CHECK(res.log.rows[3].selected.size() == 2);
  CHECK(res.log.rows[3].train_size == 30);
  CHECK_FALSE(res.log.truncation_reason.empty());
}

TEST_CASE("goal strategy needs a test domain") {
  const Dataset ds = generate_synthetic(tiny_synth());
  DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  split.test_domain.clear();
  const ALConfig cfg = fast_cfg(Strategy::kGoal);
  CHECK_THROWS_AS(run_experiment(cfg, ds, split), std::invalid_argument);
}

TEST_CASE("retrain policies genuinely diverge") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  ALConfig warm = fast_cfg(Strategy::kEntropy);
  warm.retrain = RetrainPolicy::kWarmStart;
  ALConfig scratch = warm;
  scratch.retrain = RetrainPolicy::kFromScratch;

  const ExperimentResult rw = run_experiment(warm, ds, split);
  const ExperimentResult rs = run_experiment(scratch, ds, split);
  CHECK(rw.final_params.layers[0].weights != rs.final_params.layers[0].weights);

  // kAuto means warm-start on an unfiltered split
  ALConfig aut = warm;
  aut.retrain = RetrainPolicy::kAuto;
  const ExperimentResult ra = run_experiment(aut, ds, split);
  CHECK(ra.final_params.layers[0].weights == rw.final_params.layers[0].weights);
}

TEST_CASE("accuracy improves over passive noise on an easy problem") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 40, "", 7);
  ALConfig cfg = fast_cfg(Strategy::kEntropy);
  cfg.iterations = 4;
  cfg.epochs = 30;
  cfg.select_per_iter = 20;
  const ExperimentResult res = run_experiment(cfg, ds, split);
  CHECK(res.log.rows.back().accuracy > 0.8);
  CHECK(res.log.rows.back().accuracy > res.log.rows.front().accuracy - 0.05);
}

TEST_CASE("overlap percentages behave") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);

  ALConfig cfg = fast_cfg(Strategy::kEntropy);
  const ExperimentResult a = run_experiment(cfg, ds, split);
  CHECK(overlap_pct(a.log, a.log) == 100.0);

  ALConfig passive = fast_cfg(Strategy::kPassive);
  const ExperimentResult p1 = run_experiment(passive, ds, split);
  passive.selection_seed = 77;
  const ExperimentResult p2 = run_experiment(passive, ds, split);
  const double cross = overlap_pct(p1.log, p2.log);
  CHECK(cross < 100.0);
  CHECK(cross >= 0.0);

  const DatasetSplit other = make_split(ds, 20, 30, 30, "", 8);
  const ExperimentResult b = run_experiment(cfg, ds, other);
  CHECK_THROWS_AS(overlap_pct(a.log, b.log), std::invalid_argument);

  const std::vector<ExperimentLog> logs = {a.log, p1.log, p2.log};
  const OverlapMatrix m = overlap_matrix(logs);
  REQUIRE(m.pct.rows() == 3);
  REQUIRE(m.pct.cols() == 3);
  for (int i = 0; i < 3; ++i) CHECK(m.pct(i, i) == 100.0);
  CHECK(m.pct(1, 2) == cross);

  const std::vector<ExperimentLog> single = {a.log};
  CHECK_THROWS_AS(overlap_matrix(single), std::invalid_argument);
}

TEST_CASE("experiment logs serialize with their selections") {
  const Dataset ds = generate_synthetic(tiny_synth());
  const DatasetSplit split = make_split(ds, 20, 30, 30, "", 7);
  const ExperimentResult res = run_experiment(fast_cfg(Strategy::kCuriosity), ds, split);

  const std::string csv = temp_path("mmal_log.csv");
  const std::string ids = temp_path("mmal_log_selected.csv");
  save_experiment_log(res.log, csv, ids);

  std::ifstream in(csv);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header.find("iteration,train_size,accuracy,wallclock_score_ms,selected_count") == 0);
  CHECK(header.find("count_binary") != std::string::npos);
  CHECK(header.find("count_open") != std::string::npos);
  int data_rows = 0;
  std::string line;
  while (std::getline(in, line)) data_rows += !line.empty() && line[0] != '#';
  CHECK(data_rows == static_cast<int>(res.log.rows.size()));

  std::ifstream sel(ids);
  REQUIRE(std::getline(sel, header));
  CHECK(header == "iteration,item_id");
  int sel_rows = 0;
  while (std::getline(sel, line)) sel_rows += !line.empty();
  int want = 0;
  for (const auto& r : res.log.rows) want += static_cast<int>(r.selected.size());
  CHECK(sel_rows == want);

  std::remove(csv.c_str());
  std::remove(ids.c_str());
}
