#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "mmal/bayes_mlp.hpp"

// Brute-force reference implementations for validation studies and tests.
// Nothing here is called by the active-learning loop itself.

namespace mmal {

// J x J joint answer distribution of a pool item and one test item,
// averaged over the shared parameter draws.
struct JointMatrix {
  int pool_id = 0;
  int test_id = 0;
  Eigen::MatrixXd p;
};

// (1/M) * M1^T * M2. Throws when the two matrices disagree on M or mask seed.
JointMatrix joint_exact(const PredictiveMatrix& pool, const PredictiveMatrix& test);

// Total mutual information between the pool item's answer and each test
// item's answer, by direct summation over the J x J joints. 0*log(0) := 0;
// joint entries below 1e-15 are skipped. Guarded to T*J^2 <= 1e7 per call.
double mi_exact(const PredictiveMatrix& pool, std::span<const PredictiveMatrix> tests);

// Same quantity via the matrix rewrite (GEMM joints, elementwise log ratio).
// Agrees with mi_exact to float noise; only the Taylor step in the fast
// scorer approximates.
double mi_matrix_form(const PredictiveMatrix& pool, std::span<const PredictiveMatrix> tests);

// 1-based ranks, average rank for ties.
std::vector<double> average_ranks(std::span<const double> v);

// Pearson correlation of average ranks. Empty when either input is constant
// (the correlation is undefined there). Requires equal lengths >= 2.
std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b);

}  // namespace mmal
