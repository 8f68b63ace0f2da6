/**
 * @file ot.hpp
 * @brief Exact discrete optimal transport.
 *
 * Cost matrices under Euclidean ground metrics, the optimal assignment
 * problem (shortest augmenting path), the Kantorovich linear program
 * (transportation simplex), Wasserstein distances between point clouds,
 * the closed-form 2-Wasserstein distance between Gaussians, and the
 * push-forward of a discrete measure through an assignment.
 */

#ifndef OTSA_OT_HPP
#define OTSA_OT_HPP

#include <Eigen/Dense>
#include <vector>

#include "otsa/common.hpp"

namespace otsa {

/// Discrete measure: n points of dimension p with a probability weight each.
struct PointCloud {
  Eigen::MatrixXd points;   ///< n x p, one point per row
  Eigen::VectorXd weights;  ///< length n, nonnegative, sums to 1

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// Builds a cloud with uniform weights 1/n.
PointCloud make_cloud(const Eigen::MatrixXd& points);

/// Builds a cloud with explicit weights; validates the simplex constraint.
PointCloud make_cloud(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights);

/// Pairwise ground costs d(x_i, y_j)^ground_exponent.
struct CostMatrix {
  Eigen::MatrixXd entries;  ///< n x m, nonnegative
  double ground_exponent = 1.0;

  int rows() const { return static_cast<int>(entries.rows()); }
  int cols() const { return static_cast<int>(entries.cols()); }
};

/// Solution of the discrete-uniform Monge problem.
struct Assignment {
  std::vector<int> sigma;  ///< row i is matched to column sigma[i]
  double total_cost = 0.0; ///< (1/n) * sum_i C(i, sigma(i))
};

/// Solution of the Kantorovich linear program.
struct Coupling {
  Eigen::MatrixXd plan;          ///< n x m, nonnegative, vertex of U(a,b)
  Eigen::VectorXd row_marginal;  ///< a
  Eigen::VectorXd col_marginal;  ///< b
  double total_cost = 0.0;       ///< <C, plan>
};

/// Multivariate Gaussian given by mean and PSD covariance.
struct GaussianSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// entries[i][j] = ||a_i - b_j||_2 ^ exponent. Requires exponent >= 1 and
/// matching point dimensions.
CostMatrix build_cost_matrix(const PointCloud& a, const PointCloud& b, double exponent);

/// Exact minimum-mean-cost bijection on a square cost matrix, found by the
/// Jonker-Volgenant shortest-augmenting-path method with dual potentials.
/// All scans run in fixed index order, so ties between equal-cost optima
/// resolve the same way on every run.
Assignment solve_assignment(const CostMatrix& c);

/// Exact vertex-optimal coupling between marginals a and b under cost c,
/// found by the transportation simplex. Both marginals must lie on the
/// probability simplex (tolerance 1e-9).
Coupling solve_kantorovich(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           const CostMatrix& c);

/// p-Wasserstein distance between clouds under the Euclidean ground metric:
/// the order-th root of the optimal coupling cost for C = D^order. Uses the
/// assignment solver when both clouds are uniform and equal-sized, the
/// Kantorovich solver otherwise.
double wasserstein(const PointCloud& a, const PointCloud& b, double order);

/// Closed-form 2-Wasserstein distance between Gaussians:
/// sqrt(||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})).
double gaussian_wasserstein2(const GaussianSpec& g1, const GaussianSpec& g2);

/// Push-forward of the source measure through the assignment map:
/// point i becomes target[sigma(i)] and keeps the source weight.
PointCloud push_forward(const Assignment& sigma, const PointCloud& source,
                        const PointCloud& target);

}  // namespace otsa

#endif  // OTSA_OT_HPP
