#include "mmal/studies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mmal/exact_oracle.hpp"
#include "mmal/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmal {

namespace {

constexpr char kArtifactVersion[] = "0.1.0";

// per-roster-seed derivation streams
constexpr std::uint64_t kStreamDataset = 0xD5;
constexpr std::uint64_t kStreamSplit = 0x51;
constexpr std::uint64_t kStreamModel = 0x3D;
constexpr std::uint64_t kStreamMask = 0x3A;
constexpr std::uint64_t kStreamSelect = 0x3E;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

void finish_out(std::ofstream& out, const std::string& path) {
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---- config ---------------------------------------------------------------

json parse_override_value(const std::string& raw) {
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) return json(raw);  // bare strings need no quoting
  return v;
}

void set_dotted(json& root, const std::string& key, const json& value) {
  json* node = &root;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw std::invalid_argument("bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null()) {
      throw std::invalid_argument("override key '" + key + "' descends into a non-object");
    }
    pos = dot + 1;
  }
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  c.n_items = j.value("n_items", c.n_items);
  c.dim_a = j.value("dim_a", c.dim_a);
  c.dim_b = j.value("dim_b", c.dim_b);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("type_mix")) {
    c.type_mix.clear();
    for (const auto& entry : j.at("type_mix")) {
      if (!entry.is_array() || entry.size() != 2) {
        throw std::invalid_argument("type_mix entries must be [tag, proportion] pairs");
      }
      c.type_mix.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<double>());
    }
  }
  c.label_noise = j.value("label_noise", c.label_noise);
  c.cluster_spread = j.value("cluster_spread", c.cluster_spread);
  c.centroid_scale = j.value("centroid_scale", c.centroid_scale);
  c.seed = j.value("seed", c.seed);
  return c;
}

json synth_to_json(const SynthConfig& c) {
  json mix = json::array();
  for (const auto& [tag, prop] : c.type_mix) mix.push_back(json::array({tag, prop}));
  return json{{"n_items", c.n_items},
              {"dim_a", c.dim_a},
              {"dim_b", c.dim_b},
              {"num_classes", c.num_classes},
              {"type_mix", mix},
              {"label_noise", c.label_noise},
              {"cluster_spread", c.cluster_spread},
              {"centroid_scale", c.centroid_scale},
              {"seed", c.seed}};
}

SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  s.n_initial = j.value("n_initial", s.n_initial);
  s.t_test = j.value("t_test", s.t_test);
  s.n_eval = j.value("n_eval", s.n_eval);
  s.target_type = j.value("target_type", s.target_type);
  s.seed = j.value("seed", s.seed);
  return s;
}

json split_to_json(const SplitSpec& s) {
  return json{{"n_initial", s.n_initial},
              {"t_test", s.t_test},
              {"n_eval", s.n_eval},
              {"target_type", s.target_type},
              {"seed", s.seed}};
}

std::string retrain_name(RetrainPolicy p) {
  switch (p) {
    case RetrainPolicy::kAuto: return "auto";
    case RetrainPolicy::kWarmStart: return "warm-start";
    case RetrainPolicy::kFromScratch: return "from-scratch";
  }
  return "auto";
}

RetrainPolicy retrain_from_name(const std::string& name) {
  if (name == "auto") return RetrainPolicy::kAuto;
  if (name == "warm-start") return RetrainPolicy::kWarmStart;
  if (name == "from-scratch") return RetrainPolicy::kFromScratch;
  throw std::invalid_argument("unknown retrain policy: " + name);
}

ALConfig loop_from_json(const json& j) {
  ALConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.select_per_iter = j.value("select_per_iter", c.select_per_iter);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.l2 = j.value("l2", c.l2);
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
  if (j.contains("retrain")) c.retrain = retrain_from_name(j.at("retrain").get<std::string>());
  return c;
}

json loop_to_json(const ALConfig& c) {
  return json{{"iterations", c.iterations},
              {"mc_samples", c.mc_samples},
              {"select_per_iter", c.select_per_iter},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"l2", c.l2},
              {"hidden", c.hidden},
              {"retrain", retrain_name(c.retrain)}};
}

StudyConfig config_from_json(const json& j) {
  StudyConfig c;
  if (j.contains("study")) c.study = study_kind_from_string(j.at("study").get<std::string>());
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("dataset")) c.dataset = synth_from_json(j.at("dataset"));
  c.dataset_path = j.value("dataset_path", c.dataset_path);
  if (j.contains("split")) c.split = split_from_json(j.at("split"));
  if (j.contains("loop")) c.loop = loop_from_json(j.at("loop"));
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("strategies")) c.strategy_filter = j.at("strategies").get<std::vector<std::string>>();
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  if (j.contains("m_grid")) c.m_grid = j.at("m_grid").get<std::vector<int>>();
  c.sample_items = j.value("sample_items", c.sample_items);
  c.repetitions = j.value("repetitions", c.repetitions);
  c.rho_target = j.value("rho_target", c.rho_target);
  c.study_seed = j.value("study_seed", c.study_seed);
  if (j.contains("breakpoint_n")) c.breakpoint_n = j.at("breakpoint_n").get<std::vector<int>>();
  if (c.seeds.empty()) throw std::invalid_argument("seed roster is empty");
  return c;
}

json config_to_json(const StudyConfig& c) {
  return json{{"study", to_string(c.study)},
              {"out_dir", c.out_dir},
              {"dataset", synth_to_json(c.dataset)},
              {"dataset_path", c.dataset_path},
              {"split", split_to_json(c.split)},
              {"loop", loop_to_json(c.loop)},
              {"seeds", c.seeds},
              {"strategies", c.strategy_filter},
              {"checkpoint", c.checkpoint},
              {"m_grid", c.m_grid},
              {"sample_items", c.sample_items},
              {"repetitions", c.repetitions},
              {"rho_target", c.rho_target},
              {"study_seed", c.study_seed},
              {"breakpoint_n", c.breakpoint_n}};
}

}  // namespace

// ---- shared study plumbing ------------------------------------------------

Dataset study_dataset(const StudyConfig& cfg, std::uint64_t roster_seed, bool per_seed) {
  if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
  SynthConfig ds_cfg = cfg.dataset;
  if (per_seed) ds_cfg.seed = derive_seed(roster_seed, kStreamDataset);
  return generate_synthetic(ds_cfg);
}

DatasetSplit study_split(const StudyConfig& cfg, const Dataset& ds, std::uint64_t roster_seed, bool per_seed) {
  const std::uint64_t seed = per_seed ? derive_seed(roster_seed, kStreamSplit) : cfg.split.seed;
  return make_split(ds, cfg.split.n_initial, cfg.split.t_test, cfg.split.n_eval, cfg.split.target_type, seed);
}

ExperimentResult run_one(const StudyConfig& cfg, const Dataset& ds, const DatasetSplit& split, Strategy strategy,
                         std::uint64_t roster_seed) {
  ALConfig c = cfg.loop;
  c.strategy = strategy;
  c.model_seed = derive_seed(roster_seed, kStreamModel);
  c.mask_seed = derive_seed(roster_seed, kStreamMask);
  c.selection_seed = derive_seed(roster_seed, kStreamSelect);
  ExperimentResult res = run_experiment(c, ds, split);
  if (res.audit_violations != 0) {
    throw std::runtime_error("label hygiene violated: " + std::to_string(res.audit_violations) +
                             " unsanctioned label reads");
  }
  return res;
}

namespace {

std::vector<std::string> pick_labels(const StudyConfig& cfg, const std::vector<std::string>& all) {
  if (cfg.strategy_filter.empty()) return all;
  std::vector<std::string> out;
  for (const auto& l : all) {
    if (std::find(cfg.strategy_filter.begin(), cfg.strategy_filter.end(), l) != cfg.strategy_filter.end()) {
      out.push_back(l);
    }
  }
  if (out.empty()) throw std::invalid_argument("strategy filter matches nothing");
  return out;
}

std::string curve_path(const StudyConfig& cfg, const std::string& label, std::uint64_t seed) {
  return cfg.out_dir + "/curve_" + label + "_seed" + std::to_string(seed) + ".csv";
}

std::string ids_path(const StudyConfig& cfg, const std::string& label, std::uint64_t seed) {
  return cfg.out_dir + "/curve_" + label + "_seed" + std::to_string(seed) + "_selected.csv";
}

int final_queries(const ExperimentLog& log) {
  return log.rows.back().train_size - log.rows.front().train_size;
}

std::vector<int> sample_ids(std::span<const int> ids, int want, std::uint64_t seed) {
  std::vector<int> out(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(out);
  if (static_cast<int>(out.size()) > want) out.resize(static_cast<std::size_t>(want));
  std::sort(out.begin(), out.end());
  return out;
}

void check_model_matches(const ModelParams& params, const Dataset& ds) {
  if (params.input_dim() != ds.dim_a() + ds.dim_b() || params.output_dim() != ds.num_classes()) {
    throw std::invalid_argument("checkpoint dimensions do not match the dataset");
  }
}

ModelParams load_checkpoint(const StudyConfig& cfg) {
  if (cfg.checkpoint.empty()) throw std::runtime_error("this study needs a 'checkpoint' model path");
  return load_model(cfg.checkpoint);
}

void write_manifest(const StudyConfig& cfg) {
  const std::string canonical = study_config_to_json(cfg);
  json manifest{{"study", to_string(cfg.study)},
                {"config", json::parse(canonical)},
                {"config_hash", config_hash_hex(canonical)},
                {"seeds", cfg.seeds},
                {"artifact",
                 {{"name", "mmal"},
                  {"version", kArtifactVersion},
                  {"formats", {{"dataset", "mmal-dataset 1"}, {"model", "mmal-model 1"}}}}}};
  auto out = open_out(cfg.out_dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  finish_out(out, cfg.out_dir + "/manifest.json");
}

}  // namespace

std::string to_string(StudyKind k) {
  switch (k) {
    case StudyKind::kSavings: return "savings";
    case StudyKind::kOverlap: return "overlap";
    case StudyKind::kGoal: return "goal";
    case StudyKind::kConvergence: return "convergence";
    case StudyKind::kFastcheck: return "fastcheck";
  }
  return "unknown";
}

StudyKind study_kind_from_string(const std::string& name) {
  if (name == "savings") return StudyKind::kSavings;
  if (name == "overlap") return StudyKind::kOverlap;
  if (name == "goal") return StudyKind::kGoal;
  if (name == "convergence") return StudyKind::kConvergence;
  if (name == "fastcheck") return StudyKind::kFastcheck;
  throw std::invalid_argument("unknown study kind: " + name);
}

StudyConfig parse_study_config(const std::string& json_text, ConfigOverrides overrides) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config is not valid JSON");
  if (!j.is_object()) throw std::invalid_argument("config root must be an object");
  for (const auto& [key, value] : overrides) set_dotted(j, key, parse_override_value(value));
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad config: ") + e.what());
  }
}

StudyConfig load_study_config(const std::string& path, ConfigOverrides overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_study_config(ss.str(), overrides);
}

std::string study_config_to_json(const StudyConfig& cfg) { return config_to_json(cfg).dump(2); }

std::string config_hash_hex(const std::string& canonical_json) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int queries_to_accuracy(const ExperimentLog& log, double target) {
  if (log.rows.empty()) throw std::invalid_argument("empty log");
  const int initial = log.rows.front().train_size;
  for (const auto& row : log.rows) {
    if (row.accuracy >= target) return row.train_size - initial;
  }
  return -1;
}

// ---- convergence ----------------------------------------------------------

int ConvergenceTable::min_m(std::size_t strategy_index, std::size_t rep, double target) const {
  for (std::size_t mi = 0; mi < m_grid.size(); ++mi) {
    const double r = rho.at(strategy_index).at(rep).at(mi);
    if (!std::isnan(r) && r >= target) return m_grid[mi];
  }
  return -1;
}

int ConvergenceTable::median_min_m(std::size_t strategy_index, double target) const {
  std::vector<long long> vals;
  for (std::size_t rep = 0; rep < rho.at(strategy_index).size(); ++rep) {
    const int m = min_m(strategy_index, rep, target);
    vals.push_back(m < 0 ? std::numeric_limits<long long>::max() : m);
  }
  std::sort(vals.begin(), vals.end());
  const long long med = vals[(vals.size() - 1) / 2];
  return med == std::numeric_limits<long long>::max() ? -1 : static_cast<int>(med);
}

ConvergenceTable convergence_table(const ModelParams& params, const Dataset& ds, const DatasetSplit& split,
                                   const StudyConfig& cfg) {
  check_model_matches(params, ds);
  if (cfg.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  ConvergenceTable table;
  table.m_grid = cfg.m_grid.empty() ? std::vector<int>{1, 2, 5, 10, 20, 50, 100, 200, 500} : cfg.m_grid;
  if (!std::is_sorted(table.m_grid.begin(), table.m_grid.end()) || table.m_grid.front() < 1) {
    throw std::invalid_argument("m_grid must be ascending and positive");
  }
  table.strategies = {Strategy::kEntropy, Strategy::kCuriosity, Strategy::kGoal};
  table.item_ids = sample_ids(split.pool, cfg.sample_items, derive_seed(cfg.study_seed, 1));
  if (table.item_ids.empty()) throw std::invalid_argument("pool has no items to score");

  const Eigen::MatrixXd pool_features = ds.fused_features(table.item_ids);
  const Eigen::MatrixXd test_features = ds.fused_features(split.test_domain);
  const std::size_t n_strategies = table.strategies.size();
  const std::size_t n_m = table.m_grid.size();

  table.scores.assign(n_strategies, {});
  table.rho.assign(n_strategies, {});
  for (std::size_t s = 0; s < n_strategies; ++s) {
    table.scores[s].assign(static_cast<std::size_t>(cfg.repetitions), std::vector<std::vector<double>>(n_m));
    table.rho[s].assign(static_cast<std::size_t>(cfg.repetitions), std::vector<double>(n_m));
  }

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    for (std::size_t mi = 0; mi < n_m; ++mi) {
      const std::uint64_t mask_seed =
          derive_seed(cfg.study_seed, 0x100 + static_cast<std::uint64_t>(rep) * 4096 + mi);
      const MaskSample masks = sample_masks(params, table.m_grid[mi], mask_seed);
      const auto pool_pms = predictive_matrices(params, masks, table.item_ids, pool_features);
      const auto test_pms = predictive_matrices(params, masks, split.test_domain, test_features);
      const TestSummaryVector ts = build_test_summary(test_pms);
      for (std::size_t s = 0; s < n_strategies; ++s) {
        std::vector<double>& dst = table.scores[s][static_cast<std::size_t>(rep)][mi];
        dst.reserve(pool_pms.size());
        for (const auto& pm : pool_pms) {
          switch (table.strategies[s]) {
            case Strategy::kEntropy: dst.push_back(score_entropy(pm)); break;
            case Strategy::kCuriosity: dst.push_back(score_curiosity(pm)); break;
            case Strategy::kGoal: dst.push_back(score_goal_fast(pm, ts)); break;
            default: throw std::logic_error("unreachable");
          }
        }
      }
    }
    for (std::size_t s = 0; s < n_strategies; ++s) {
      const auto& ref = table.scores[s][static_cast<std::size_t>(rep)].back();
      for (std::size_t mi = 0; mi < n_m; ++mi) {
        const auto r = spearman_rho(table.scores[s][static_cast<std::size_t>(rep)][mi], ref);
        table.rho[s][static_cast<std::size_t>(rep)][mi] = r ? *r : std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return table;
}

// ---- fastcheck ------------------------------------------------------------

FastcheckTable fastcheck_table(const ModelParams& params, const Dataset& ds, const DatasetSplit& split,
                               const StudyConfig& cfg) {
  check_model_matches(params, ds);
  FastcheckTable table;
  table.m_grid = cfg.m_grid.empty() ? std::vector<int>{2, 5, 10, 20, 50} : cfg.m_grid;
  if (!std::is_sorted(table.m_grid.begin(), table.m_grid.end()) || table.m_grid.front() < 1) {
    throw std::invalid_argument("m_grid must be ascending and positive");
  }
  table.item_ids = sample_ids(split.pool, cfg.sample_items, derive_seed(cfg.study_seed, 1));
  if (table.item_ids.empty()) throw std::invalid_argument("pool has no items to score");
  const std::vector<int> test_ids = sample_ids(split.test_domain, 200, derive_seed(cfg.study_seed, 2));

  const Eigen::MatrixXd pool_features = ds.fused_features(table.item_ids);
  const Eigen::MatrixXd test_features = ds.fused_features(test_ids);

  for (std::size_t mi = 0; mi < table.m_grid.size(); ++mi) {
    const std::uint64_t mask_seed = derive_seed(cfg.study_seed, 0x200 + mi);
    const MaskSample masks = sample_masks(params, table.m_grid[mi], mask_seed);
    const auto pool_pms = predictive_matrices(params, masks, table.item_ids, pool_features);
    const auto test_pms = predictive_matrices(params, masks, test_ids, test_features);
    const TestSummaryVector ts = build_test_summary(test_pms);

    std::vector<double> fast, exact;
    fast.reserve(pool_pms.size());
    exact.reserve(pool_pms.size());
    for (const auto& pm : pool_pms) {
      fast.push_back(score_goal_fast(pm, ts));
      exact.push_back(mi_exact(pm, test_pms));
    }
    const auto r = spearman_rho(fast, exact);
    table.rho.push_back(r ? *r : std::numeric_limits<double>::quiet_NaN());
    table.fast.push_back(std::move(fast));
    table.exact.push_back(std::move(exact));
  }
  return table;
}

// ---- studies --------------------------------------------------------------

void run_savings_study(const StudyConfig& cfg) {
  const std::vector<std::string> labels =
      pick_labels(cfg, {"passive", "entropy", "curiosity", "goal"});

  auto savings = open_out(cfg.out_dir + "/savings.csv");
  savings << "seed,strategy,target_accuracy,queries_passive,queries_to_target,savings_pct,reached\n";

  bool checkpoint_saved = false;
  for (std::uint64_t s : cfg.seeds) {
    const Dataset ds = study_dataset(cfg, s, /*per_seed=*/true);
    const DatasetSplit split = study_split(cfg, ds, s, /*per_seed=*/true);

    std::vector<std::pair<std::string, ExperimentLog>> logs;
    for (const auto& label : labels) {
      ExperimentResult res = run_one(cfg, ds, split, strategy_from_string(label), s);
      save_experiment_log(res.log, curve_path(cfg, label, s), ids_path(cfg, label, s));
      if (!checkpoint_saved && label == "goal") {
        save_model(res.final_params, cfg.out_dir + "/checkpoint.model");
        checkpoint_saved = true;
      }
      logs.emplace_back(label, std::move(res.log));
    }

    const auto passive_it =
        std::find_if(logs.begin(), logs.end(), [](const auto& p) { return p.first == "passive"; });
    if (passive_it != logs.end()) {
      const double target = passive_it->second.rows.back().accuracy;
      const int qp = final_queries(passive_it->second);
      for (const auto& [label, log] : logs) {
        if (label == "passive") continue;
        const int qa = queries_to_accuracy(log, target);
        savings << s << "," << label << "," << fmt17(target) << "," << qp << "," << qa << ",";
        if (qa >= 0 && qp > 0) {
          savings << fmt17(100.0 * static_cast<double>(qp - qa) / static_cast<double>(qp));
        }
        savings << "," << (qa >= 0 ? 1 : 0) << "\n";
      }
    }
  }
  finish_out(savings, cfg.out_dir + "/savings.csv");

  auto breakpoint = open_out(cfg.out_dir + "/breakpoint.csv");
  breakpoint << "n_initial,strategy,final_accuracy,final_queries\n";
  if (!cfg.breakpoint_n.empty()) {
    const std::uint64_t s = cfg.seeds.front();
    const Dataset ds = study_dataset(cfg, s, /*per_seed=*/true);
    const std::vector<std::string> sweep_labels = pick_labels(cfg, {"passive", "goal"});
    for (int n : cfg.breakpoint_n) {
      StudyConfig swept = cfg;
      swept.split.n_initial = n;
      const DatasetSplit split = study_split(swept, ds, s, /*per_seed=*/true);
      for (const auto& label : sweep_labels) {
        ExperimentResult res = run_one(swept, ds, split, strategy_from_string(label), s);
        breakpoint << n << "," << label << "," << fmt17(res.log.rows.back().accuracy) << ","
                   << final_queries(res.log) << "\n";
      }
    }
  }
  finish_out(breakpoint, cfg.out_dir + "/breakpoint.csv");
}

void run_overlap_study(const StudyConfig& cfg) {
  const std::vector<std::string> labels =
      pick_labels(cfg, {"passive", "entropy", "curiosity", "goal"});
  if (labels.size() < 2) throw std::invalid_argument("overlap study needs at least two strategies");

  auto summary = open_out(cfg.out_dir + "/overlap_summary.csv");
  summary << "seed,mean_active_active,mean_active_passive,ratio\n";

  for (std::uint64_t s : cfg.seeds) {
    const Dataset ds = study_dataset(cfg, s, /*per_seed=*/true);
    const DatasetSplit split = study_split(cfg, ds, s, /*per_seed=*/true);

    std::vector<ExperimentLog> logs;
    for (const auto& label : labels) {
      ExperimentResult res = run_one(cfg, ds, split, strategy_from_string(label), s);
      save_experiment_log(res.log, curve_path(cfg, label, s), ids_path(cfg, label, s));
      logs.push_back(std::move(res.log));
    }
    const OverlapMatrix m = overlap_matrix(logs);
    save_overlap(m, cfg.out_dir + "/overlap_seed" + std::to_string(s) + ".csv");

    double aa = 0.0, ap = 0.0;
    int n_aa = 0, n_ap = 0;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      for (std::size_t j = 0; j < logs.size(); ++j) {
        if (i == j) continue;
        const bool i_active = logs[i].strategy != Strategy::kPassive;
        const bool j_active = logs[j].strategy != Strategy::kPassive;
        const double pct = m.pct(static_cast<long>(i), static_cast<long>(j));
        if (i_active && j_active) {
          aa += pct;
          ++n_aa;
        } else if (i_active != j_active) {
          ap += pct;
          ++n_ap;
        }
      }
    }
    const double mean_aa = n_aa > 0 ? aa / n_aa : std::numeric_limits<double>::quiet_NaN();
    const double mean_ap = n_ap > 0 ? ap / n_ap : std::numeric_limits<double>::quiet_NaN();
    summary << s << "," << fmt17(mean_aa) << "," << fmt17(mean_ap) << ",";
    if (mean_ap > 0.0) summary << fmt17(mean_aa / mean_ap);
    summary << "\n";
  }
  finish_out(summary, cfg.out_dir + "/overlap_summary.csv");
}

void run_goal_study(const StudyConfig& cfg) {
  if (cfg.split.target_type.empty()) throw std::invalid_argument("goal study needs split.target_type");
  const std::vector<std::string> labels =
      pick_labels(cfg, {"passive", "entropy", "curiosity", "goal", "cheat"});

  auto composition = open_out(cfg.out_dir + "/composition.csv");
  composition << "seed,label,iteration,selected_count,target_count,target_fraction,pool_base_rate\n";
  auto summary = open_out(cfg.out_dir + "/goal_summary.csv");
  summary << "seed,label,final_accuracy,queries_total\n";

  for (std::uint64_t s : cfg.seeds) {
    const Dataset ds = study_dataset(cfg, s, /*per_seed=*/true);
    const DatasetSplit split = study_split(cfg, ds, s, /*per_seed=*/true);

    for (const auto& label : labels) {
      const bool cheat = label == "cheat";
      const DatasetSplit used = cheat ? cheat_filter(ds, split, cfg.split.target_type) : split;
      const Strategy strategy = cheat ? Strategy::kPassive : strategy_from_string(label);

      int target_in_pool = 0;
      for (int id : used.pool) {
        if (ds.type_tag(id) == cfg.split.target_type) ++target_in_pool;
      }
      const double base_rate = static_cast<double>(target_in_pool) / static_cast<double>(used.pool.size());

      ExperimentResult res = run_one(cfg, ds, used, strategy, s);
      save_experiment_log(res.log, curve_path(cfg, label, s), ids_path(cfg, label, s));

      for (const auto& row : res.log.rows) {
        if (row.selected.empty()) continue;
        const int target_count = row.type_counts.at(cfg.split.target_type);
        composition << s << "," << label << "," << row.iteration << "," << row.selected.size() << ","
                    << target_count << ","
                    << fmt17(static_cast<double>(target_count) / static_cast<double>(row.selected.size())) << ","
                    << fmt17(base_rate) << "\n";
      }
      summary << s << "," << label << "," << fmt17(res.log.rows.back().accuracy) << "," << final_queries(res.log)
              << "\n";
    }
  }
  finish_out(composition, cfg.out_dir + "/composition.csv");
  finish_out(summary, cfg.out_dir + "/goal_summary.csv");
}

void run_convergence_study(const StudyConfig& cfg) {
  const ModelParams params = load_checkpoint(cfg);
  const Dataset ds = study_dataset(cfg, 0, /*per_seed=*/false);
  const DatasetSplit split = study_split(cfg, ds, 0, /*per_seed=*/false);
  const ConvergenceTable table = convergence_table(params, ds, split, cfg);

  auto rho = open_out(cfg.out_dir + "/rho.csv");
  rho << "strategy,rep,m,rho\n";
  for (std::size_t s = 0; s < table.strategies.size(); ++s) {
    for (std::size_t rep = 0; rep < table.rho[s].size(); ++rep) {
      for (std::size_t mi = 0; mi < table.m_grid.size(); ++mi) {
        const double r = table.rho[s][rep][mi];
        rho << to_string(table.strategies[s]) << "," << rep << "," << table.m_grid[mi] << ",";
        if (!std::isnan(r)) rho << fmt17(r);
        rho << "\n";
      }
    }
  }
  finish_out(rho, cfg.out_dir + "/rho.csv");

  auto summary = open_out(cfg.out_dir + "/min_m_summary.csv");
  summary << "strategy,median_min_m\n";
  for (std::size_t s = 0; s < table.strategies.size(); ++s) {
    summary << to_string(table.strategies[s]) << "," << table.median_min_m(s, cfg.rho_target) << "\n";
  }
  finish_out(summary, cfg.out_dir + "/min_m_summary.csv");

  auto traces = open_out(cfg.out_dir + "/traces.csv");
  traces << "item_id,strategy,m,score\n";
  const std::size_t n_traced = std::min<std::size_t>(5, table.item_ids.size());
  for (std::size_t i = 0; i < n_traced; ++i) {
    for (std::size_t s = 0; s < table.strategies.size(); ++s) {
      for (std::size_t mi = 0; mi < table.m_grid.size(); ++mi) {
        traces << table.item_ids[i] << "," << to_string(table.strategies[s]) << "," << table.m_grid[mi] << ","
               << fmt17(table.scores[s][0][mi][i]) << "\n";
      }
    }
  }
  finish_out(traces, cfg.out_dir + "/traces.csv");
}

void run_fastcheck_study(const StudyConfig& cfg) {
  const ModelParams params = load_checkpoint(cfg);
  const Dataset ds = study_dataset(cfg, 0, /*per_seed=*/false);
  const DatasetSplit split = study_split(cfg, ds, 0, /*per_seed=*/false);
  const FastcheckTable table = fastcheck_table(params, ds, split, cfg);

  for (std::size_t mi = 0; mi < table.m_grid.size(); ++mi) {
    const std::string path = cfg.out_dir + "/scatter_m" + std::to_string(table.m_grid[mi]) + ".csv";
    auto out = open_out(path);
    out << "item_id,fast,exact\n";
    for (std::size_t i = 0; i < table.item_ids.size(); ++i) {
      out << table.item_ids[i] << "," << fmt17(table.fast[mi][i]) << "," << fmt17(table.exact[mi][i]) << "\n";
    }
    finish_out(out, path);
  }

  auto rho = open_out(cfg.out_dir + "/fast_rho.csv");
  rho << "m,rho,n_items\n";
  for (std::size_t mi = 0; mi < table.m_grid.size(); ++mi) {
    rho << table.m_grid[mi] << ",";
    if (!std::isnan(table.rho[mi])) rho << fmt17(table.rho[mi]);
    rho << "," << table.item_ids.size() << "\n";
  }
  finish_out(rho, cfg.out_dir + "/fast_rho.csv");
}

void run_study(const StudyConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_manifest(cfg);
  switch (cfg.study) {
    case StudyKind::kSavings: run_savings_study(cfg); break;
    case StudyKind::kOverlap: run_overlap_study(cfg); break;
    case StudyKind::kGoal: run_goal_study(cfg); break;
    case StudyKind::kConvergence: run_convergence_study(cfg); break;
    case StudyKind::kFastcheck: run_fastcheck_study(cfg); break;
  }
}

// ---- output validation ----------------------------------------------------

namespace {

enum class Cell { kInt, kUInt, kDouble, kDouble01, kMaybeDouble, kStr };

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

bool parse_ll(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

bool parse_d(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

[[noreturn]] void bad(const std::string& path, int line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

void check_cell(const std::string& path, int line_no, const std::string& col, const std::string& v, Cell kind) {
  long long ll = 0;
  double d = 0.0;
  switch (kind) {
    case Cell::kInt:
      if (!parse_ll(v, ll)) bad(path, line_no, col + ": expected integer, got '" + v + "'");
      break;
    case Cell::kUInt:
      if (!parse_ll(v, ll) || ll < 0) bad(path, line_no, col + ": expected nonnegative integer, got '" + v + "'");
      break;
    case Cell::kDouble:
      if (!parse_d(v, d)) bad(path, line_no, col + ": expected number, got '" + v + "'");
      break;
    case Cell::kDouble01:
      if (!parse_d(v, d) || d < 0.0 || d > 1.0) bad(path, line_no, col + ": expected number in [0,1], got '" + v + "'");
      break;
    case Cell::kMaybeDouble:
      if (!v.empty() && !parse_d(v, d)) bad(path, line_no, col + ": expected number or empty, got '" + v + "'");
      break;
    case Cell::kStr:
      if (v.empty()) bad(path, line_no, col + ": expected nonempty string");
      break;
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void validate_fixed_csv(const std::string& path, const std::string& expected_header,
                        const std::vector<Cell>& kinds) {
  const auto lines = read_lines(path);
  if (lines.empty()) bad(path, 1, "empty file");
  if (lines[0] != expected_header) bad(path, 1, "header mismatch, expected '" + expected_header + "'");
  const auto cols = split_csv(expected_header);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].starts_with("#")) continue;
    const auto cells = split_csv(lines[i]);
    if (cells.size() != cols.size()) bad(path, static_cast<int>(i + 1), "wrong column count");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      check_cell(path, static_cast<int>(i + 1), cols[c], cells[c], kinds[c]);
    }
  }
}

void validate_curve_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) bad(path, 1, "empty file");
  const auto cols = split_csv(lines[0]);
  const std::vector<std::string> head = {"iteration", "train_size", "accuracy", "wallclock_score_ms",
                                         "selected_count"};
  if (cols.size() < head.size() + 2) bad(path, 1, "too few columns");
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (cols[i] != head[i]) bad(path, 1, "column " + std::to_string(i + 1) + " must be " + head[i]);
  }
  if (cols[cols.size() - 2] != "floored_divisions" || cols.back() != "mask_seed") {
    bad(path, 1, "last columns must be floored_divisions,mask_seed");
  }
  std::vector<Cell> kinds = {Cell::kInt, Cell::kInt, Cell::kDouble01, Cell::kDouble, Cell::kUInt};
  for (std::size_t c = head.size(); c + 2 < cols.size(); ++c) {
    if (!cols[c].starts_with("count_")) bad(path, 1, "expected count_* column, got " + cols[c]);
    kinds.push_back(Cell::kUInt);
  }
  kinds.push_back(Cell::kUInt);
  kinds.push_back(Cell::kUInt);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].starts_with("#")) continue;
    const auto cells = split_csv(lines[i]);
    if (cells.size() != cols.size()) bad(path, static_cast<int>(i + 1), "wrong column count");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      check_cell(path, static_cast<int>(i + 1), cols[c], cells[c], kinds[c]);
    }
  }
}

void validate_overlap_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) bad(path, 1, "empty file");
  const auto cols = split_csv(lines[0]);
  if (cols.size() < 3 || cols[0] != "strategy") bad(path, 1, "expected 'strategy,<names...>' header");
  const std::size_t n = cols.size() - 1;
  std::size_t data_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].starts_with("#")) continue;
    ++data_rows;
    const auto cells = split_csv(lines[i]);
    if (cells.size() != cols.size()) bad(path, static_cast<int>(i + 1), "wrong column count");
    check_cell(path, static_cast<int>(i + 1), "strategy", cells[0], Cell::kStr);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      check_cell(path, static_cast<int>(i + 1), cols[c], cells[c], Cell::kMaybeDouble);
    }
  }
  if (data_rows != n) bad(path, 1, "overlap matrix is not square");
}

void validate_magic(const std::string& path, const std::string& magic) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != magic) bad(path, 1, "bad magic, expected '" + magic + "'");
}

void validate_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) bad(path, 1, "not valid JSON");
  for (const char* key : {"study", "config", "config_hash", "seeds", "artifact"}) {
    if (!j.contains(key)) bad(path, 1, std::string("manifest is missing '") + key + "'");
  }
}

}  // namespace

void validate_outputs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error(dir + " contains no output files");

  for (const auto& name : names) {
    const std::string path = dir + "/" + name;
    if (name == "manifest.json") {
      validate_manifest(path);
    } else if (name.ends_with(".model")) {
      validate_magic(path, "mmal-model 1");
    } else if (name.ends_with(".mmal")) {
      validate_magic(path, "mmal-dataset 1");
    } else if (name.starts_with("curve_") && name.ends_with("_selected.csv")) {
      validate_fixed_csv(path, "iteration,item_id", {Cell::kInt, Cell::kInt});
    } else if (name.starts_with("curve_") && name.ends_with(".csv")) {
      validate_curve_csv(path);
    } else if (name.starts_with("overlap_seed") && name.ends_with(".csv")) {
      validate_overlap_csv(path);
    } else if (name == "savings.csv") {
      validate_fixed_csv(path, "seed,strategy,target_accuracy,queries_passive,queries_to_target,savings_pct,reached",
                         {Cell::kUInt, Cell::kStr, Cell::kDouble01, Cell::kInt, Cell::kInt, Cell::kMaybeDouble,
                          Cell::kUInt});
    } else if (name == "breakpoint.csv") {
      validate_fixed_csv(path, "n_initial,strategy,final_accuracy,final_queries",
                         {Cell::kInt, Cell::kStr, Cell::kDouble01, Cell::kInt});
    } else if (name == "overlap_summary.csv") {
      validate_fixed_csv(path, "seed,mean_active_active,mean_active_passive,ratio",
                         {Cell::kUInt, Cell::kDouble, Cell::kDouble, Cell::kMaybeDouble});
    } else if (name == "composition.csv") {
      validate_fixed_csv(path, "seed,label,iteration,selected_count,target_count,target_fraction,pool_base_rate",
                         {Cell::kUInt, Cell::kStr, Cell::kInt, Cell::kUInt, Cell::kUInt, Cell::kDouble01,
                          Cell::kDouble01});
    } else if (name == "goal_summary.csv") {
      validate_fixed_csv(path, "seed,label,final_accuracy,queries_total",
                         {Cell::kUInt, Cell::kStr, Cell::kDouble01, Cell::kInt});
    } else if (name == "rho.csv") {
      validate_fixed_csv(path, "strategy,rep,m,rho", {Cell::kStr, Cell::kUInt, Cell::kUInt, Cell::kMaybeDouble});
    } else if (name == "min_m_summary.csv") {
      validate_fixed_csv(path, "strategy,median_min_m", {Cell::kStr, Cell::kInt});
    } else if (name == "traces.csv") {
      validate_fixed_csv(path, "item_id,strategy,m,score", {Cell::kInt, Cell::kStr, Cell::kUInt, Cell::kDouble});
    } else if (name == "fast_rho.csv") {
      validate_fixed_csv(path, "m,rho,n_items", {Cell::kUInt, Cell::kMaybeDouble, Cell::kUInt});
    } else if (name.starts_with("scatter_m") && name.ends_with(".csv")) {
      validate_fixed_csv(path, "item_id,fast,exact", {Cell::kInt, Cell::kDouble, Cell::kDouble});
    } else {
      throw std::runtime_error(path + ": unknown output file");
    }
  }
}

}  // namespace mmal
