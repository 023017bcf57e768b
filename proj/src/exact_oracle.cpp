#include "mmal/exact_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmal {

namespace {

constexpr double kTinyJoint = 1e-15;

void check_shared_draws(const PredictiveMatrix& a, const PredictiveMatrix& b) {
  if (a.draws() != b.draws()) {
    throw std::invalid_argument("mismatched draw counts: " + std::to_string(a.draws()) + " vs " +
                                std::to_string(b.draws()));
  }
  if (a.mask_seed != b.mask_seed) {
    throw std::invalid_argument("predictive matrices come from different mask draws");
  }
}

void check_budget(std::size_t t_count, int j1, int j2) {
  const double cost = static_cast<double>(t_count) * j1 * j2;
  if (cost > 1e7) {
    throw std::invalid_argument("exact oracle call too large: T*J^2 = " + std::to_string(cost));
  }
}

}  // namespace

JointMatrix joint_exact(const PredictiveMatrix& pool, const PredictiveMatrix& test) {
  check_shared_draws(pool, test);
  JointMatrix joint;
  joint.pool_id = pool.item_id;
  joint.test_id = test.item_id;
  joint.p = pool.probs.transpose() * test.probs / static_cast<double>(pool.draws());
  return joint;
}

double mi_exact(const PredictiveMatrix& pool, std::span<const PredictiveMatrix> tests) {
  if (tests.empty()) throw std::invalid_argument("test set is empty");
  for (const auto& t : tests) check_shared_draws(pool, t);
  check_budget(tests.size(), pool.classes(), static_cast<int>(tests.front().classes()));

  const int m_draws = pool.draws();
  const int j1 = pool.classes();
  std::vector<double> pool_mean(static_cast<std::size_t>(j1), 0.0);
  for (int a = 0; a < j1; ++a) {
    for (int m = 0; m < m_draws; ++m) pool_mean[static_cast<std::size_t>(a)] += pool.probs(m, a);
    pool_mean[static_cast<std::size_t>(a)] /= m_draws;
  }

  double total = 0.0;
  for (const auto& test : tests) {
    const int j2 = test.classes();
    for (int b = 0; b < j2; ++b) {
      double test_mean = 0.0;
      for (int m = 0; m < m_draws; ++m) test_mean += test.probs(m, b);
      test_mean /= m_draws;
      for (int a = 0; a < j1; ++a) {
        double joint = 0.0;
        for (int m = 0; m < m_draws; ++m) joint += pool.probs(m, a) * test.probs(m, b);
        joint /= m_draws;
        if (joint < kTinyJoint) continue;
        total += joint * std::log(joint / (pool_mean[static_cast<std::size_t>(a)] * test_mean));
      }
    }
  }
  return total;
}

double mi_matrix_form(const PredictiveMatrix& pool, std::span<const PredictiveMatrix> tests) {
  if (tests.empty()) throw std::invalid_argument("test set is empty");
  for (const auto& t : tests) check_shared_draws(pool, t);
  check_budget(tests.size(), pool.classes(), static_cast<int>(tests.front().classes()));

  const double m_draws = static_cast<double>(pool.draws());
  const Eigen::VectorXd pool_mean = pool.probs.colwise().mean().transpose();
  double total = 0.0;
  for (const auto& test : tests) {
    const Eigen::MatrixXd joint = pool.probs.transpose() * test.probs / m_draws;
    const Eigen::VectorXd test_mean = test.probs.colwise().mean().transpose();
    const Eigen::MatrixXd marginal_product = pool_mean * test_mean.transpose();
    for (long a = 0; a < joint.rows(); ++a) {
      for (long b = 0; b < joint.cols(); ++b) {
        if (joint(a, b) < kTinyJoint) continue;
        total += joint(a, b) * std::log(joint(a, b) / marginal_product(a, b));
      }
    }
  }
  return total;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("score vectors differ in length");
  if (a.size() < 2) throw std::invalid_argument("need at least two scores");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace mmal
