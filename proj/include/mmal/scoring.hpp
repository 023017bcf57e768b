#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmal/bayes_mlp.hpp"

namespace mmal {

enum class Strategy { kPassive, kEntropy, kCuriosity, kGoal };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

// Per-item acquisition scores over the current pool, ids ascending.
struct ScoreVector {
  Strategy strategy = Strategy::kPassive;
  std::vector<int> ids;
  std::vector<double> values;
  int m_samples = 0;       // draws behind the scores (0 for passive)
  std::uint64_t seed = 0;  // mask seed, or the passive draw seed
  int t_count = 0;         // test-domain size when goal-driven
};

// Divisions whose posterior-mean divisor fell below the 1e-12 floor.
struct DivisionFloorStats {
  long long floored = 0;
};

// i.i.d. uniform(0,1) scores; the do-nothing baseline.
ScoreVector score_passive(std::span<const int> pool_ids, std::uint64_t seed);

// Shannon entropy (natural log) of the posterior mean distribution.
double score_entropy(const PredictiveMatrix& pm);

// H(mean) minus mean row entropy, clamped at 0. The gap measures how much
// the sampled models disagree about this item.
double score_curiosity(const PredictiveMatrix& pm);

// Length M*M aggregation of the whole test domain. Entry (m, m') is
// (1/M) * sum_t sum_a M2(t)[m,a] * M2(t)[m',a] / mean_t[a]; building it
// touches each test item once, and it is shared by all pool items.
struct TestSummaryVector {
  Eigen::VectorXd entries;  // row-major over (m, m')
  int m_samples = 0;
  int t_count = 0;
  std::uint64_t mask_seed = 0;
};

TestSummaryVector build_test_summary(std::span<const PredictiveMatrix> test_pms,
                                     DivisionFloorStats* stats = nullptr);

// Fast goal-driven score: 0.5 * (pool M^2-vector . test summary - T).
// The pool-side vector is materialized transiently per item.
double score_goal_fast(const PredictiveMatrix& pm, const TestSummaryVector& ts,
                       DivisionFloorStats* stats = nullptr);

// Scores the whole pool under one strategy. Goal requires ts, the other
// strategies reject it. passive_seed feeds only the passive draws.
ScoreVector score_pool(Strategy strategy, std::span<const PredictiveMatrix> pool_pms,
                       const TestSummaryVector* ts = nullptr, std::uint64_t passive_seed = 0,
                       DivisionFloorStats* stats = nullptr);

// Two-column table (item id, score) with a header naming strategy, M, seed.
void save_scores(const ScoreVector& scores, const std::string& path);

}  // namespace mmal
