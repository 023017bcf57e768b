#include "mmal/scoring.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mmal/rng.hpp"

namespace mmal {

namespace {

constexpr double kDivisorFloor = 1e-12;

double shannon_entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  }
  return std::max(h, 0.0);
}

// (1/M) * A * diag(1/mean) * A^T for one predictive matrix, flooring tiny
// divisors and counting them.
Eigen::MatrixXd sample_pair_matrix(const PredictiveMatrix& pm, DivisionFloorStats* stats) {
  const Eigen::VectorXd mean = pm.probs.colwise().mean().transpose();
  Eigen::VectorXd inv(mean.size());
  for (long a = 0; a < mean.size(); ++a) {
    double d = mean(a);
    if (d < kDivisorFloor) {
      d = kDivisorFloor;
      if (stats) ++stats->floored;
    }
    inv(a) = 1.0 / d;
  }
  return (pm.probs * inv.asDiagonal() * pm.probs.transpose()) / static_cast<double>(pm.draws());
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kPassive: return "passive";
    case Strategy::kEntropy: return "entropy";
    case Strategy::kCuriosity: return "curiosity";
    case Strategy::kGoal: return "goal";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "passive") return Strategy::kPassive;
  if (name == "entropy") return Strategy::kEntropy;
  if (name == "curiosity") return Strategy::kCuriosity;
  if (name == "goal") return Strategy::kGoal;
  throw std::invalid_argument("unknown strategy: " + name);
}

ScoreVector score_passive(std::span<const int> pool_ids, std::uint64_t seed) {
  if (pool_ids.empty()) throw std::invalid_argument("pool is empty");
  Rng rng(seed);
  ScoreVector out;
  out.strategy = Strategy::kPassive;
  out.seed = seed;
  out.ids.assign(pool_ids.begin(), pool_ids.end());
  out.values.reserve(pool_ids.size());
  for (std::size_t i = 0; i < pool_ids.size(); ++i) out.values.push_back(rng.uniform01());
  return out;
}

double score_entropy(const PredictiveMatrix& pm) { return shannon_entropy(posterior_mean(pm)); }

double score_curiosity(const PredictiveMatrix& pm) {
  const double marginal = score_entropy(pm);
  double conditional = 0.0;
  for (long m = 0; m < pm.probs.rows(); ++m) {
    conditional += shannon_entropy(pm.probs.row(m).transpose());
  }
  conditional /= static_cast<double>(pm.draws());
  return std::max(marginal - conditional, 0.0);
}

TestSummaryVector build_test_summary(std::span<const PredictiveMatrix> test_pms, DivisionFloorStats* stats) {
  if (test_pms.empty()) throw std::invalid_argument("test set is empty");
  const int m = test_pms.front().draws();
  const std::uint64_t seed = test_pms.front().mask_seed;
  TestSummaryVector ts;
  ts.m_samples = m;
  ts.t_count = static_cast<int>(test_pms.size());
  ts.mask_seed = seed;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
  for (const auto& pm : test_pms) {
    if (pm.draws() != m || pm.mask_seed != seed) {
      throw std::invalid_argument("test item " + std::to_string(pm.item_id) +
                                  " does not share the common mask draws");
    }
    acc += sample_pair_matrix(pm, stats);
  }
  ts.entries = Eigen::Map<Eigen::VectorXd>(acc.data(), m * m);  // symmetric, layout moot
  return ts;
}

double score_goal_fast(const PredictiveMatrix& pm, const TestSummaryVector& ts, DivisionFloorStats* stats) {
  if (pm.draws() != ts.m_samples || pm.mask_seed != ts.mask_seed) {
    throw std::invalid_argument("pool item " + std::to_string(pm.item_id) +
                                " does not share the test summary's mask draws");
  }
  const Eigen::MatrixXd pair = sample_pair_matrix(pm, stats);
  const Eigen::Map<const Eigen::VectorXd> pool_vec(pair.data(), pair.size());
  return 0.5 * (pool_vec.dot(ts.entries) - static_cast<double>(ts.t_count));
}

ScoreVector score_pool(Strategy strategy, std::span<const PredictiveMatrix> pool_pms,
                       const TestSummaryVector* ts, std::uint64_t passive_seed, DivisionFloorStats* stats) {
  if (pool_pms.empty()) throw std::invalid_argument("pool is empty");
  if (strategy == Strategy::kGoal && ts == nullptr) {
    throw std::invalid_argument("goal strategy requires a test summary");
  }
  if (strategy != Strategy::kGoal && ts != nullptr) {
    throw std::invalid_argument(to_string(strategy) + " strategy does not take a test summary");
  }

  if (strategy == Strategy::kPassive) {
    std::vector<int> ids;
    ids.reserve(pool_pms.size());
    for (const auto& pm : pool_pms) ids.push_back(pm.item_id);
    return score_passive(ids, passive_seed);
  }

  ScoreVector out;
  out.strategy = strategy;
  out.m_samples = pool_pms.front().draws();
  out.seed = pool_pms.front().mask_seed;
  out.t_count = ts ? ts->t_count : 0;
  out.ids.reserve(pool_pms.size());
  out.values.reserve(pool_pms.size());
  for (const auto& pm : pool_pms) {
    out.ids.push_back(pm.item_id);
    switch (strategy) {
      case Strategy::kEntropy: out.values.push_back(score_entropy(pm)); break;
      case Strategy::kCuriosity: out.values.push_back(score_curiosity(pm)); break;
      case Strategy::kGoal: out.values.push_back(score_goal_fast(pm, *ts, stats)); break;
      case Strategy::kPassive: break;  // handled above
    }
  }
  return out;
}

void save_scores(const ScoreVector& scores, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "# strategy=" << to_string(scores.strategy) << " M=" << scores.m_samples << " seed=" << scores.seed;
  if (scores.strategy == Strategy::kGoal) out << " T=" << scores.t_count;
  out << "\nitem_id,score\n";
  char buf[64];
  for (std::size_t i = 0; i < scores.ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", scores.values[i]);
    out << scores.ids[i] << "," << buf << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace mmal
