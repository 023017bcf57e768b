#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmal/studies.hpp"

using namespace mmal;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string base_json(const std::string& out_dir, const std::string& study) {
  std::ostringstream os;
  os << R"({
    "study": ")" << study << R"(",
    "out_dir": ")" << out_dir << R"(",
    "dataset": {"n_items": 160, "dim_a": 2, "dim_b": 2, "num_classes": 3,
                "type_mix": [["binary", 0.4], ["open", 0.6]], "seed": 41},
    "split": {"n_initial": 15, "t_test": 20, "n_eval": 25, "seed": 11},
    "loop": {"iterations": 2, "mc_samples": 3, "select_per_iter": 4, "epochs": 4,
             "batch_size": 8, "hidden": [6]},
    "seeds": [1, 2]
  })";
  return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// curve CSVs modulo the wall-clock column
std::string curve_without_time(const std::string& path) {
  std::string out;
  for (const auto& line : read_lines(path)) {
    if (!line.empty() && line[0] == '#') {
      out += line + "\n";
      continue;
    }
    auto fields = split_fields(line);
    if (fields.size() > 3) fields.erase(fields.begin() + 3);
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + fields[i];
    out += "\n";
  }
  return out;
}

// a small but genuinely trained model compatible with the base dataset
std::string make_checkpoint(const std::string& dir) {
  SynthConfig synth;
  synth.n_items = 160;
  synth.dim_a = 2;
  synth.dim_b = 2;
  synth.num_classes = 3;
  synth.type_mix = {{"binary", 0.4}, {"open", 0.6}};
  synth.seed = 41;
  const Dataset ds = generate_synthetic(synth);

  TrainSet train;
  for (int i = 0; i < 40; ++i) train.push_back({ds.fused_features(i), ds.label(i)});
  ModelParams params = random_init({4, 8, 3}, 77);
  TrainOptions opt;
  opt.epochs = 30;
  opt.learning_rate = 0.05;
  opt.batch_size = 8;
  opt.seed = 78;
  params = train_epochs(params, train, opt).params;

  const std::string path = dir + "/seed.model";
  save_model(params, path);
  return path;
}

}  // namespace

TEST_CASE("config parsing: defaults, fields, overrides") {
  const StudyConfig defaults = parse_study_config("{}");
  CHECK(defaults.study == StudyKind::kSavings);
  CHECK(defaults.out_dir == "out");
  CHECK(defaults.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(defaults.loop.iterations == 10);
  CHECK(defaults.split.n_initial == 50);
  CHECK(defaults.rho_target == 0.9);

  const StudyConfig cfg = parse_study_config(base_json("/tmp/x", "overlap"));
  CHECK(cfg.study == StudyKind::kOverlap);
  CHECK(cfg.out_dir == "/tmp/x");
  CHECK(cfg.dataset.n_items == 160);
  CHECK(cfg.dataset.type_mix ==
        std::vector<std::pair<std::string, double>>{{"binary", 0.4}, {"open", 0.6}});
  CHECK(cfg.split.n_eval == 25);
  CHECK(cfg.loop.hidden == std::vector<int>{6});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});

  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"loop.epochs", "7"},
      {"seeds", "[9]"},
      {"study", "\"goal\""},
      {"split.target_type", "binary"},  // bare strings work too
  };
  const StudyConfig overridden = parse_study_config(base_json("/tmp/x", "savings"), overrides);
  CHECK(overridden.loop.epochs == 7);
  CHECK(overridden.seeds == std::vector<std::uint64_t>{9});
  CHECK(overridden.study == StudyKind::kGoal);
  CHECK(overridden.split.target_type == "binary");

  CHECK_THROWS_AS(parse_study_config("not json"), std::invalid_argument);
  CHECK_THROWS_AS(parse_study_config("[1,2]"), std::invalid_argument);
  CHECK_THROWS_AS(parse_study_config(R"({"seeds": []})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_study_config(R"({"study": "mystery"})"), std::invalid_argument);
  const std::vector<std::pair<std::string, std::string>> bad = {{"study.kind.deep", "1"}};
  CHECK_THROWS_AS(parse_study_config("{}", bad), std::invalid_argument);
  const std::vector<std::pair<std::string, std::string>> through_scalar = {{"out_dir.x", "1"}};
  CHECK_THROWS_AS(parse_study_config(R"({"out_dir": "a"})", through_scalar), std::invalid_argument);
}

TEST_CASE("canonical config echo hashes stably") {
  const StudyConfig a = parse_study_config(base_json("/tmp/x", "savings"));
  const StudyConfig b = parse_study_config(base_json("/tmp/x", "savings"));
  const std::string ja = study_config_to_json(a);
  CHECK(ja == study_config_to_json(b));

  const std::string ha = config_hash_hex(ja);
  CHECK(ha.size() == 16);
  CHECK(ha.find_first_not_of("0123456789abcdef") == std::string::npos);

  const std::vector<std::pair<std::string, std::string>> tweak = {{"loop.epochs", "9"}};
  const StudyConfig c = parse_study_config(base_json("/tmp/x", "savings"), tweak);
  CHECK(config_hash_hex(study_config_to_json(c)) != ha);
}

TEST_CASE("queries_to_accuracy walks the learning curve") {
  ExperimentLog log;
  for (int i = 0; i <= 3; ++i) {
    IterationRecord row;
    row.iteration = i;
    row.train_size = 20 + i * 10;
    row.accuracy = 0.5 + 0.1 * i;
    log.rows.push_back(row);
  }
  CHECK(queries_to_accuracy(log, 0.4) == 0);
  CHECK(queries_to_accuracy(log, 0.65) == 20);
  CHECK(queries_to_accuracy(log, 0.8) == 30);
  CHECK(queries_to_accuracy(log, 0.9) == -1);
  const ExperimentLog empty;
  CHECK_THROWS_AS(queries_to_accuracy(empty, 0.5), std::invalid_argument);
}

TEST_CASE("savings study writes curves, summary, and a checkpoint") {
  const std::string dir = fresh_dir("mmal_savings");
  const StudyConfig cfg = parse_study_config(base_json(dir, "savings"));
  run_study(cfg);

  for (const char* name : {"manifest.json", "savings.csv", "breakpoint.csv", "checkpoint.model"}) {
    CHECK(fs::exists(fs::path(dir) / name));
  }
  for (const char* label : {"passive", "entropy", "curiosity", "goal"}) {
    for (int s : {1, 2}) {
      CHECK(fs::exists(fs::path(dir) / ("curve_" + std::string(label) + "_seed" + std::to_string(s) + ".csv")));
      CHECK(fs::exists(fs::path(dir) /
                       ("curve_" + std::string(label) + "_seed" + std::to_string(s) + "_selected.csv")));
    }
  }

  const auto savings = read_lines(dir + "/savings.csv");
  REQUIRE(!savings.empty());
  CHECK(savings[0] == "seed,strategy,target_accuracy,queries_passive,queries_to_target,savings_pct,reached");
  CHECK(savings.size() == 1 + 2 * 3);  // two seeds, three active strategies

  validate_outputs(dir);
}

TEST_CASE("savings study respects the strategy filter") {
  const std::string dir = fresh_dir("mmal_savings_filtered");
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"strategies", R"(["passive", "goal"])"}};
  const StudyConfig cfg = parse_study_config(base_json(dir, "savings"), overrides);
  run_study(cfg);
  CHECK(fs::exists(fs::path(dir) / "curve_goal_seed1.csv"));
  CHECK_FALSE(fs::exists(fs::path(dir) / "curve_entropy_seed1.csv"));

  const std::vector<std::pair<std::string, std::string>> nothing = {{"strategies", R"(["cheat"])"}};
  const StudyConfig bad = parse_study_config(base_json(fresh_dir("mmal_savings_bad"), "savings"), nothing);
  CHECK_THROWS_AS(run_study(bad), std::invalid_argument);
}

TEST_CASE("savings study reruns byte-identically modulo wall-clock") {
  const std::string dir_a = fresh_dir("mmal_repro_a");
  const std::string dir_b = fresh_dir("mmal_repro_b");
  const std::vector<std::pair<std::string, std::string>> only_two = {
      {"strategies", R"(["passive", "curiosity"])"}, {"seeds", "[3]"}};
  run_study(parse_study_config(base_json(dir_a, "savings"), only_two));
  run_study(parse_study_config(base_json(dir_b, "savings"), only_two));

  for (const char* label : {"passive", "curiosity"}) {
    const std::string name = "curve_" + std::string(label) + "_seed3.csv";
    CHECK(curve_without_time(dir_a + "/" + name) == curve_without_time(dir_b + "/" + name));
    const std::string sel = "curve_" + std::string(label) + "_seed3_selected.csv";
    CHECK(read_lines(dir_a + "/" + sel) == read_lines(dir_b + "/" + sel));
  }
  CHECK(read_lines(dir_a + "/savings.csv") == read_lines(dir_b + "/savings.csv"));
}

TEST_CASE("overlap study summarizes pairwise selection agreement") {
  const std::string dir = fresh_dir("mmal_overlap");
  const StudyConfig cfg = parse_study_config(base_json(dir, "overlap"));
  run_study(cfg);

  CHECK(fs::exists(fs::path(dir) / "overlap_seed1.csv"));
  CHECK(fs::exists(fs::path(dir) / "overlap_seed2.csv"));
  const auto summary = read_lines(dir + "/overlap_summary.csv");
  REQUIRE(summary.size() == 3);
  CHECK(summary[0] == "seed,mean_active_active,mean_active_passive,ratio");

  validate_outputs(dir);

  const std::vector<std::pair<std::string, std::string>> one = {{"strategies", R"(["goal"])"}};
  const StudyConfig bad = parse_study_config(base_json(fresh_dir("mmal_overlap_bad"), "overlap"), one);
  CHECK_THROWS_AS(run_study(bad), std::invalid_argument);
}

TEST_CASE("goal study tracks target composition; the cheat arm is pure") {
  const std::string dir = fresh_dir("mmal_goal");
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"split.target_type", "binary"}, {"dataset.n_items", "220"}};
  const StudyConfig cfg = parse_study_config(base_json(dir, "goal"), overrides);
  run_study(cfg);

  const auto composition = read_lines(dir + "/composition.csv");
  REQUIRE(composition.size() > 1);
  CHECK(composition[0] == "seed,label,iteration,selected_count,target_count,target_fraction,pool_base_rate");
  int cheat_rows = 0;
  for (std::size_t i = 1; i < composition.size(); ++i) {
    const auto f = split_fields(composition[i]);
    REQUIRE(f.size() == 7);
    if (f[1] == "cheat") {
      ++cheat_rows;
      CHECK(std::stod(f[5]) == 1.0);
    }
    const double base = std::stod(f[6]);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
  }
  CHECK(cheat_rows == 2 * 2);  // two seeds, two iterations each

  const auto summary = read_lines(dir + "/goal_summary.csv");
  CHECK(summary[0] == "seed,label,final_accuracy,queries_total");
  CHECK(summary.size() == 1 + 2 * 5);

  validate_outputs(dir);

  const StudyConfig unfiltered = parse_study_config(base_json(fresh_dir("mmal_goal_bad"), "goal"));
  CHECK_THROWS_AS(run_study(unfiltered), std::invalid_argument);
}

TEST_CASE("convergence study compares strategies against a high-M reference") {
  const std::string dir = fresh_dir("mmal_convergence");
  const std::string ckpt = make_checkpoint(dir);
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"checkpoint", ckpt},
      {"m_grid", "[1, 2, 5]"},
      {"sample_items", "20"},
      {"repetitions", "2"},
  };
  const StudyConfig cfg = parse_study_config(base_json(dir, "convergence"), overrides);
  run_study(cfg);

  const auto rho = read_lines(dir + "/rho.csv");
  CHECK(rho[0] == "strategy,rep,m,rho");
  CHECK(rho.size() == 1 + 3 * 2 * 3);

  // the reference point correlates perfectly with itself
  std::map<std::string, std::vector<std::string>> last_m;
  for (std::size_t i = 1; i < rho.size(); ++i) {
    const auto f = split_fields(rho[i]);
    REQUIRE(f.size() == 4);
    if (f[2] == "5") {
      REQUIRE(!f[3].empty());
      CHECK(std::stod(f[3]) == 1.0);
    }
  }

  const auto summary = read_lines(dir + "/min_m_summary.csv");
  CHECK(summary[0] == "strategy,median_min_m");
  REQUIRE(summary.size() == 4);
  for (std::size_t i = 1; i < summary.size(); ++i) {
    const auto f = split_fields(summary[i]);
    const int med = std::stoi(f[1]);
    CHECK(med >= -1);
    if (med > 0) CHECK(med <= 5);
  }

  const auto traces = read_lines(dir + "/traces.csv");
  CHECK(traces[0] == "item_id,strategy,m,score");
  CHECK(traces.size() == 1 + 5 * 3 * 3);

  validate_outputs(dir);

  StudyConfig no_ckpt = cfg;
  no_ckpt.checkpoint.clear();
  no_ckpt.out_dir = fresh_dir("mmal_convergence_bad");
  CHECK_THROWS_AS(run_study(no_ckpt), std::runtime_error);
}

TEST_CASE("fastcheck study writes per-M scatters and correlations") {
  const std::string dir = fresh_dir("mmal_fastcheck");
  const std::string ckpt = make_checkpoint(dir);
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"checkpoint", ckpt},
      {"m_grid", "[2, 5]"},
      {"sample_items", "15"},
  };
  const StudyConfig cfg = parse_study_config(base_json(dir, "fastcheck"), overrides);
  run_study(cfg);

  for (const char* name : {"scatter_m2.csv", "scatter_m5.csv", "fast_rho.csv"}) {
    CHECK(fs::exists(fs::path(dir) / name));
  }
  const auto scatter = read_lines(dir + "/scatter_m5.csv");
  CHECK(scatter[0] == "item_id,fast,exact");
  CHECK(scatter.size() == 1 + 15);
  for (std::size_t i = 1; i < scatter.size(); ++i) {
    const auto f = split_fields(scatter[i]);
    REQUIRE(f.size() == 3);
    CHECK(std::isfinite(std::stod(f[1])));
    CHECK(std::isfinite(std::stod(f[2])));
  }

  const auto rho = read_lines(dir + "/fast_rho.csv");
  CHECK(rho[0] == "m,rho,n_items");
  REQUIRE(rho.size() == 3);

  validate_outputs(dir);
}

TEST_CASE("validate_outputs rejects damaged directories") {
  CHECK_THROWS_AS(validate_outputs("/no/such/dir"), std::runtime_error);

  const std::string dir = fresh_dir("mmal_validate_bad");
  const std::vector<std::pair<std::string, std::string>> only_two = {
      {"strategies", R"(["passive", "goal"])"}, {"seeds", "[1]"}};
  run_study(parse_study_config(base_json(dir, "savings"), only_two));
  validate_outputs(dir);

  SUBCASE("corrupted header") {
    auto lines = read_lines(dir + "/savings.csv");
    lines[0] = "seed,strategy,oops";
    std::ofstream out(dir + "/savings.csv");
    for (const auto& l : lines) out << l << "\n";
    out.close();
    CHECK_THROWS_AS(validate_outputs(dir), std::runtime_error);
  }
  SUBCASE("non-numeric cell") {
    auto lines = read_lines(dir + "/curve_goal_seed1.csv");
    REQUIRE(lines.size() > 1);
    auto fields = split_fields(lines[1]);
    fields[1] = "many";
    lines[1] = fields[0];
    for (std::size_t i = 1; i < fields.size(); ++i) lines[1] += "," + fields[i];
    std::ofstream out(dir + "/curve_goal_seed1.csv");
    for (const auto& l : lines) out << l << "\n";
    out.close();
    CHECK_THROWS_AS(validate_outputs(dir), std::runtime_error);
  }
  SUBCASE("unknown file") {
    std::ofstream out(dir + "/surprise.txt");
    out << "hello\n";
    out.close();
    CHECK_THROWS_AS(validate_outputs(dir), std::runtime_error);
  }
}
