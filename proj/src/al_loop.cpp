#include "mmal/al_loop.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "mmal/rng.hpp"

namespace mmal {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

void check_config(const ALConfig& cfg) {
  if (cfg.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (cfg.mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (cfg.select_per_iter < 1) throw std::invalid_argument("select_per_iter must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  for (int h : cfg.hidden) {
    if (h < 1) throw std::invalid_argument("hidden sizes must be >= 1");
  }
}

}  // namespace

AnswerOracle::AnswerOracle(const Dataset& ds, const DatasetSplit& split) : ds_(ds) {
  validate(ds, split);
  const std::size_t n = static_cast<std::size_t>(ds.size());
  in_pool_.assign(n, 0);
  hidden_.assign(n, 0);
  known_.assign(n, 0);
  queried_.assign(n, 0);
  allowed_reads_.resize(n);
  for (int id : split.pool) {
    in_pool_[static_cast<std::size_t>(id)] = 1;
    hidden_[static_cast<std::size_t>(id)] = 1;
  }
  for (int id : split.test_domain) hidden_[static_cast<std::size_t>(id)] = 1;
  for (int id : split.initial_train) known_[static_cast<std::size_t>(id)] = 1;
  for (int id : split.eval_ids) known_[static_cast<std::size_t>(id)] = 1;
  for (std::size_t i = 0; i < n; ++i) allowed_reads_[i] = ds.label_reads(static_cast<int>(i));
}

std::vector<LabeledExample> AnswerOracle::query(std::span<const int> ids) {
  // validate the whole batch before revealing anything
  for (int id : ids) {
    if (id < 0 || id >= ds_.size() || !in_pool_[static_cast<std::size_t>(id)]) {
      throw std::invalid_argument("query id " + std::to_string(id) + " is not in the pool");
    }
    if (queried_[static_cast<std::size_t>(id)]) {
      throw std::invalid_argument("id " + std::to_string(id) + " was already queried");
    }
  }
  std::unordered_set<int> batch(ids.begin(), ids.end());
  if (batch.size() != ids.size()) throw std::invalid_argument("duplicate ids in one query batch");

  std::vector<LabeledExample> out;
  out.reserve(ids.size());
  for (int id : ids) {
    queried_[static_cast<std::size_t>(id)] = 1;
    ++queried_count_;
    ++allowed_reads_[static_cast<std::size_t>(id)];
    out.push_back(LabeledExample{ds_.fused_features(id), ds_.label(id)});
  }
  return out;
}

int AnswerOracle::known_label(int id) const {
  if (id < 0 || id >= ds_.size() || !known_[static_cast<std::size_t>(id)]) {
    throw std::invalid_argument("label of id " + std::to_string(id) + " is not known to the learner");
  }
  return ds_.label(id);
}

long long AnswerOracle::audit_violations() const {
  long long v = 0;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    if (!hidden_[i]) continue;
    const std::uint64_t reads = ds_.label_reads(static_cast<int>(i));
    if (reads > allowed_reads_[i]) v += static_cast<long long>(reads - allowed_reads_[i]);
  }
  return v;
}

std::uint64_t split_fingerprint(const DatasetSplit& split) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_ids = [&](const std::vector<int>& ids) {
    h = fnv1a(h, 0x5eedu);
    h = fnv1a(h, static_cast<std::uint64_t>(ids.size()));
    for (int id : ids) h = fnv1a(h, static_cast<std::uint64_t>(id));
  };
  mix_ids(split.initial_train);
  mix_ids(split.pool);
  mix_ids(split.test_domain);
  mix_ids(split.eval_ids);
  for (char c : split.target_type) h = fnv1a(h, static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

std::vector<int> select_top_g(const ScoreVector& scores, int g) {
  if (g < 1) throw std::invalid_argument("g must be >= 1");
  if (scores.ids.size() != scores.values.size()) throw std::invalid_argument("ragged score vector");
  std::vector<std::size_t> order(scores.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.values[a] != scores.values[b]) return scores.values[a] > scores.values[b];
    return scores.ids[a] < scores.ids[b];
  });
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(g), order.size());
  std::vector<int> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(scores.ids[order[i]]);
  return out;
}

double eval_accuracy(const ModelParams& params, const Dataset& ds, const AnswerOracle& oracle,
                     std::span<const int> eval_ids, int mc_samples, std::uint64_t mask_seed) {
  if (eval_ids.empty()) throw std::invalid_argument("empty evaluation set");
  const MaskSample masks = sample_masks(params, mc_samples, mask_seed);
  const auto pms = predictive_matrices(params, masks, eval_ids, ds.fused_features(eval_ids));
  int hits = 0;
  for (std::size_t i = 0; i < pms.size(); ++i) {
    Eigen::Index argmax = 0;
    posterior_mean(pms[i]).maxCoeff(&argmax);
    if (static_cast<int>(argmax) + 1 == oracle.known_label(eval_ids[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_ids.size());
}

ExperimentResult run_experiment(const ALConfig& cfg, const Dataset& ds, const DatasetSplit& split) {
  check_config(cfg);
  validate(ds, split);
  if (split.initial_train.empty()) throw std::invalid_argument("split has no initial training items");
  if (split.eval_ids.empty()) throw std::invalid_argument("split has no evaluation items");
  if (cfg.strategy == Strategy::kGoal && split.test_domain.empty()) {
    throw std::invalid_argument("goal strategy requires a test-domain set");
  }
  const bool from_scratch = cfg.retrain == RetrainPolicy::kFromScratch ||
                            (cfg.retrain == RetrainPolicy::kAuto && !split.target_type.empty());

  AnswerOracle oracle(ds, split);
  TrainSet train;
  train.reserve(split.initial_train.size());
  for (int id : split.initial_train) train.push_back(LabeledExample{ds.fused_features(id), oracle.known_label(id)});

  std::vector<int> layer_sizes;
  layer_sizes.push_back(ds.dim_a() + ds.dim_b());
  layer_sizes.insert(layer_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  layer_sizes.push_back(ds.num_classes());

  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.learning_rate = cfg.learning_rate;
  opt.batch_size = cfg.batch_size;
  opt.l2 = cfg.l2;

  ModelParams params = random_init(layer_sizes, derive_seed(cfg.model_seed, 0));
  opt.seed = derive_seed(cfg.model_seed, 0x7000);
  params = train_epochs(std::move(params), train, opt).params;

  ExperimentLog log;
  log.strategy = cfg.strategy;
  log.split_id = split_fingerprint(split);
  log.type_set = ds.type_set();

  auto empty_counts = [&]() {
    std::map<std::string, int> counts;
    for (const auto& t : log.type_set) counts[t] = 0;
    return counts;
  };

  IterationRecord row0;
  row0.iteration = 0;
  row0.train_size = static_cast<int>(train.size());
  row0.accuracy = eval_accuracy(params, ds, oracle, split.eval_ids, cfg.mc_samples, derive_seed(cfg.mask_seed, 1));
  row0.type_counts = empty_counts();
  log.rows.push_back(std::move(row0));

  std::vector<int> live_pool = split.pool;
  const Eigen::MatrixXd test_features = ds.fused_features(split.test_domain);

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    if (live_pool.empty()) {
      log.truncation_reason = "pool exhausted before iteration " + std::to_string(iter);
      break;
    }
    const std::uint64_t score_seed = derive_seed(cfg.mask_seed, 2 * static_cast<std::uint64_t>(iter));
    const MaskSample masks = sample_masks(params, cfg.mc_samples, score_seed);
    DivisionFloorStats stats;

    TestSummaryVector ts;
    if (cfg.strategy == Strategy::kGoal) {
      const auto test_pms = predictive_matrices(params, masks, split.test_domain, test_features);
      ts = build_test_summary(test_pms, &stats);
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto pool_pms = predictive_matrices(params, masks, live_pool, ds.fused_features(live_pool));
    const ScoreVector scores =
        score_pool(cfg.strategy, pool_pms, cfg.strategy == Strategy::kGoal ? &ts : nullptr,
                   derive_seed(cfg.selection_seed, static_cast<std::uint64_t>(iter)), &stats);
    const auto t1 = std::chrono::steady_clock::now();

    const std::vector<int> selected = select_top_g(scores, cfg.select_per_iter);
    TrainSet queried = oracle.query(selected);
    for (auto& ex : queried) train.push_back(std::move(ex));

    {
      std::unordered_set<int> gone(selected.begin(), selected.end());
      std::erase_if(live_pool, [&](int id) { return gone.count(id) > 0; });
    }

    if (from_scratch) params = random_init(layer_sizes, derive_seed(cfg.model_seed, static_cast<std::uint64_t>(iter)));
    opt.seed = derive_seed(cfg.model_seed, 0x7000 + static_cast<std::uint64_t>(iter));
    params = train_epochs(std::move(params), train, opt).params;

    IterationRecord row;
    row.iteration = iter;
    row.train_size = static_cast<int>(train.size());
    row.accuracy = eval_accuracy(params, ds, oracle, split.eval_ids, cfg.mc_samples,
                                 derive_seed(cfg.mask_seed, 2 * static_cast<std::uint64_t>(iter) + 1));
    row.wallclock_score_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.mask_seed = score_seed;
    row.selected = selected;
    row.type_counts = empty_counts();
    for (int id : selected) ++row.type_counts[ds.type_tag(id)];
    row.floored_divisions = stats.floored;
    log.rows.push_back(std::move(row));

    if (live_pool.empty() && iter < cfg.iterations) {
      log.truncation_reason = "pool exhausted at iteration " + std::to_string(iter);
      break;
    }
  }

  ExperimentResult result;
  result.log = std::move(log);
  result.final_params = std::move(params);
  result.audit_violations = oracle.audit_violations();
  return result;
}

namespace {

std::unordered_set<int> all_selected(const ExperimentLog& log) {
  std::unordered_set<int> ids;
  for (const auto& row : log.rows) ids.insert(row.selected.begin(), row.selected.end());
  return ids;
}

}  // namespace

double overlap_pct(const ExperimentLog& a, const ExperimentLog& b) {
  if (a.split_id != b.split_id) throw std::invalid_argument("logs come from different splits");
  if (a.rows.size() != b.rows.size()) throw std::invalid_argument("logs cover different iteration counts");
  const auto sel_a = all_selected(a);
  const auto sel_b = all_selected(b);
  if (sel_a.empty()) throw std::invalid_argument("log has no selections");
  std::size_t common = 0;
  for (int id : sel_a) common += sel_b.count(id);
  return 100.0 * static_cast<double>(common) / static_cast<double>(sel_a.size());
}

OverlapMatrix overlap_matrix(std::span<const ExperimentLog> logs) {
  if (logs.size() < 2) throw std::invalid_argument("need at least two logs");
  OverlapMatrix m;
  m.pct.resize(static_cast<long>(logs.size()), static_cast<long>(logs.size()));
  for (std::size_t i = 0; i < logs.size(); ++i) {
    m.names.push_back(to_string(logs[i].strategy));
    for (std::size_t j = 0; j < logs.size(); ++j) {
      m.pct(static_cast<long>(i), static_cast<long>(j)) = overlap_pct(logs[i], logs[j]);
    }
  }
  return m;
}

void save_experiment_log(const ExperimentLog& log, const std::string& csv_path, const std::string& ids_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot open " + csv_path + " for writing");
  out << "iteration,train_size,accuracy,wallclock_score_ms,selected_count";
  for (const auto& t : log.type_set) out << ",count_" << t;
  out << ",floored_divisions,mask_seed\n";
  for (const auto& row : log.rows) {
    char ms[32];
    std::snprintf(ms, sizeof(ms), "%.3f", row.wallclock_score_ms);
    out << row.iteration << "," << row.train_size << "," << fmt17(row.accuracy) << "," << ms << ","
        << row.selected.size();
    for (const auto& t : log.type_set) out << "," << row.type_counts.at(t);
    out << "," << row.floored_divisions << "," << row.mask_seed << "\n";
  }
  if (!log.truncation_reason.empty()) out << "# truncated: " << log.truncation_reason << "\n";
  if (!out) throw std::runtime_error("write failed: " + csv_path);

  std::ofstream ids(ids_path);
  if (!ids) throw std::runtime_error("cannot open " + ids_path + " for writing");
  ids << "iteration,item_id\n";
  for (const auto& row : log.rows) {
    for (int id : row.selected) ids << row.iteration << "," << id << "\n";
  }
  if (!ids) throw std::runtime_error("write failed: " + ids_path);
}

void save_overlap(const OverlapMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "strategy";
  for (const auto& n : m.names) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    out << m.names[i];
    for (std::size_t j = 0; j < m.names.size(); ++j) {
      out << ",";
      if (i != j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", m.pct(static_cast<long>(i), static_cast<long>(j)));
        out << buf;
      }
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace mmal
