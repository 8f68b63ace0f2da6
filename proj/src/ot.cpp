#include "otsa/ot.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace otsa {

namespace {

constexpr double kSimplexTol = 1e-9;

void check_weights(const Eigen::VectorXd& w, const char* what) {
  if (w.size() == 0) throw ParameterError(std::string(what) + ": empty weight vector");
  if (w.minCoeff() < 0.0)
    throw ParameterError(std::string(what) + ": negative weight " + fmt_g9(w.minCoeff()));
  const double s = w.sum();
  if (std::abs(s - 1.0) > kSimplexTol)
    throw ParameterError(std::string(what) + ": weights sum to " + fmt_g9(s) +
                         ", expected 1");
}

}  // namespace

PointCloud make_cloud(const Eigen::MatrixXd& points) {
  if (points.rows() == 0 || points.cols() == 0)
    throw ParameterError("point cloud: needs at least one point and one dimension");
  const int n = static_cast<int>(points.rows());
  PointCloud c;
  c.points = points;
  c.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
  return c;
}

PointCloud make_cloud(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights) {
  if (points.rows() == 0 || points.cols() == 0)
    throw ParameterError("point cloud: needs at least one point and one dimension");
  if (weights.size() != points.rows())
    throw DimensionError("point cloud: " + std::to_string(points.rows()) +
                         " points but " + std::to_string(weights.size()) + " weights");
  check_weights(weights, "point cloud");
  PointCloud c;
  c.points = points;
  c.weights = weights;
  return c;
}

CostMatrix build_cost_matrix(const PointCloud& a, const PointCloud& b, double exponent) {
  if (a.dim() != b.dim())
    throw DimensionError("cost matrix: point dimensions differ (a: " +
                         std::to_string(a.dim()) + ", b: " + std::to_string(b.dim()) +
                         ")");
  if (exponent < 1.0)
    throw ParameterError("cost matrix: ground exponent " + fmt_g9(exponent) +
                         " < 1");
  const int n = a.size();
  const int m = b.size();
  CostMatrix c;
  c.ground_exponent = exponent;
  c.entries.resize(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = (a.points.row(i) - b.points.row(j)).norm();
      c.entries(i, j) = (exponent == 1.0)   ? d
                        : (exponent == 2.0) ? d * d
                                            : std::pow(d, exponent);
    }
  }
  return c;
}

// Jonker-Volgenant: column reduction, reduction transfer, two rounds of
// augmenting row reduction, then shortest augmenting paths for the rows
// still free. Every scan runs in fixed index order, so equal-cost optima
// resolve identically on every run.
Assignment solve_assignment(const CostMatrix& c) {
  const int n = c.rows();
  if (n != c.cols())
    throw DimensionError("assignment: cost matrix is " + std::to_string(n) + "x" +
                         std::to_string(c.cols()) + ", expected square");

  // row-major copy keeps the column scans contiguous
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<std::size_t>(i) * n + j] = c.entries(i, j);
  const auto at = [&](int i, int j) -> double {
    return cost[static_cast<std::size_t>(i) * n + j];
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> row_to_col(n, -1), col_to_row(n, -1);
  std::vector<double> v(n, 0.0);
  std::vector<int> matches(n, 0), free_rows(n, 0);

  // column reduction
  for (int j = n - 1; j >= 0; --j) {
    double min_cost = at(0, j);
    int imin = 0;
    for (int i = 1; i < n; ++i) {
      if (at(i, j) < min_cost) {
        min_cost = at(i, j);
        imin = i;
      }
    }
    v[j] = min_cost;
    if (++matches[imin] == 1) {
      row_to_col[imin] = j;
      col_to_row[j] = imin;
    } else {
      col_to_row[j] = -1;
    }
  }

  // reduction transfer
  int num_free = 0;
  for (int i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows[num_free++] = i;
    } else if (matches[i] == 1 && n > 1) {
      const int j1 = row_to_col[i];
      double min_slack = inf;
      for (int j = 0; j < n; ++j)
        if (j != j1 && at(i, j) - v[j] < min_slack) min_slack = at(i, j) - v[j];
      v[j1] -= min_slack;
    }
  }

  // augmenting row reduction, two rounds; a row is only re-queued in place
  // when the dual strictly moved, otherwise rounding on near-ties can
  // ping-pong two rows forever
  for (int round = 0; round < 2 && n > 1; ++round) {
    int k = 0;
    const int prev_free = num_free;
    num_free = 0;
    long budget = 50L * n + 1000;
    while (k < prev_free) {
      const int i = free_rows[k++];
      double umin = at(i, 0) - v[0], usubmin = inf;
      int j1 = 0, j2 = -1;
      for (int j = 1; j < n; ++j) {
        const double h = at(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      int i0 = col_to_row[j1];
      bool moved = false;
      if (umin < usubmin) {
        const double before = v[j1];
        v[j1] -= usubmin - umin;
        moved = v[j1] < before;
      } else if (i0 >= 0) {
        j1 = j2;
        i0 = col_to_row[j1];
      }
      row_to_col[i] = j1;
      col_to_row[j1] = i;
      if (i0 >= 0) {
        if (moved && --budget > 0)
          free_rows[--k] = i0;
        else
          free_rows[num_free++] = i0;  // leave it to exact augmentation
      }
    }
  }

  // shortest augmenting path for each remaining free row
  std::vector<double> d(n);
  std::vector<int> pred(n), col_list(n);
  for (int f = 0; f < num_free; ++f) {
    const int free_row = free_rows[f];
    for (int j = 0; j < n; ++j) {
      d[j] = at(free_row, j) - v[j];
      pred[j] = free_row;
      col_list[j] = j;
    }
    int low = 0, up = 0, last = -1, end_col = -1;
    double min_d = 0.0;
    bool found = false;
    do {
      if (up == low) {
        last = low - 1;
        min_d = d[col_list[up++]];
        for (int k = up; k < n; ++k) {
          const int j = col_list[k];
          const double h = d[j];
          if (h <= min_d) {
            if (h < min_d) {
              up = low;
              min_d = h;
            }
            col_list[k] = col_list[up];
            col_list[up++] = j;
          }
        }
        for (int k = low; k < up; ++k) {
          if (col_to_row[col_list[k]] < 0) {
            end_col = col_list[k];
            found = true;
            break;
          }
        }
      }
      if (!found) {
        const int j1 = col_list[low++];
        const int i = col_to_row[j1];
        const double h = at(i, j1) - v[j1] - min_d;
        for (int k = up; k < n; ++k) {
          const int j = col_list[k];
          const double reduced = at(i, j) - v[j] - h;
          if (reduced < d[j]) {
            pred[j] = i;
            if (reduced == min_d) {
              if (col_to_row[j] < 0) {
                end_col = j;
                found = true;
                break;
              }
              col_list[k] = col_list[up];
              col_list[up++] = j;
            }
            d[j] = reduced;
          }
        }
      }
    } while (!found);

    for (int k = 0; k <= last; ++k) {
      const int j1 = col_list[k];
      v[j1] += d[j1] - min_d;
    }
    int i;
    do {
      i = pred[end_col];
      col_to_row[end_col] = i;
      const int j1 = end_col;
      end_col = row_to_col[i];
      row_to_col[i] = j1;
    } while (i != free_row);
  }

  Assignment out;
  out.sigma = row_to_col;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (out.sigma[i] < 0) throw InternalError("assignment: solver left a free row");
    total += c.entries(i, out.sigma[i]);
  }
  out.total_cost = total / n;
  return out;
}

namespace {

// Transportation simplex state: the basis is a spanning tree over the
// bipartite node set {rows} + {cols}, one flow value per basic cell.
struct BasicEdge {
  int row;
  int col;
  double flow;
};

struct TransportSimplex {
  int n, m;
  const Eigen::MatrixXd& cost;
  std::vector<BasicEdge> basis;
  std::vector<std::vector<int>> adj;  // node -> indices into basis
  std::vector<char> in_basis;         // n*m flags
  std::vector<double> u, v;           // duals: rows then cols

  TransportSimplex(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                   const Eigen::MatrixXd& c)
      : n(static_cast<int>(a.size())),
        m(static_cast<int>(b.size())),
        cost(c),
        adj(n + m),
        in_basis(static_cast<std::size_t>(n) * m, 0),
        u(n),
        v(m) {
    northwest_corner(a, b);
    rebuild_adjacency();
  }

  int node_row(int i) const { return i; }
  int node_col(int j) const { return n + j; }

  void northwest_corner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    Eigen::VectorXd arem = a, brem = b;
    int i = 0, j = 0;
    while (true) {
      const double f = std::min(arem[i], brem[j]);
      basis.push_back({i, j, f});
      in_basis[static_cast<std::size_t>(i) * m + j] = 1;
      arem[i] -= f;
      brem[j] -= f;
      if (i == n - 1 && j == m - 1) break;
      if (arem[i] == 0.0 && i < n - 1)
        ++i;
      else if (j < m - 1)
        ++j;
      else
        ++i;
    }
    if (static_cast<int>(basis.size()) != n + m - 1)
      throw InternalError("transport simplex: malformed initial basis");
  }

  void rebuild_adjacency() {
    for (auto& lst : adj) lst.clear();
    for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
      adj[node_row(basis[e].row)].push_back(e);
      adj[node_col(basis[e].col)].push_back(e);
    }
  }

  void compute_duals() {
    std::vector<char> seen(n + m, 0);
    std::deque<int> queue;
    u[0] = 0.0;
    seen[node_row(0)] = 1;
    queue.push_back(node_row(0));
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      for (int e : adj[node]) {
        const BasicEdge& be = basis[e];
        const int other = (node == node_row(be.row)) ? node_col(be.col) : node_row(be.row);
        if (seen[other]) continue;
        seen[other] = 1;
        if (other >= n)
          v[other - n] = cost(be.row, be.col) - u[be.row];
        else
          u[other] = cost(be.row, be.col) - v[be.col];
        queue.push_back(other);
      }
    }
    for (char s : seen)
      if (!s) throw InternalError("transport simplex: basis tree disconnected");
  }

  // Most negative reduced cost (ties to the smallest cell); Bland mode takes
  // the first negative cell instead, which cannot cycle.
  bool find_entering(double tol, bool bland, int& ei, int& ej) {
    double best = -tol;
    ei = -1;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        if (in_basis[static_cast<std::size_t>(i) * m + j]) continue;
        const double rc = cost(i, j) - u[i] - v[j];
        if (bland) {
          if (rc < -tol) {
            ei = i;
            ej = j;
            return true;
          }
        } else if (rc < best) {
          best = rc;
          ei = i;
          ej = j;
        }
      }
    }
    return ei >= 0;
  }

  // Unique tree path from the entering row node to the entering col node.
  std::vector<int> tree_path(int from, int to) {
    std::vector<int> parent_edge(n + m, -1), parent_node(n + m, -1);
    std::vector<char> seen(n + m, 0);
    std::deque<int> queue{from};
    seen[from] = 1;
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      if (node == to) break;
      for (int e : adj[node]) {
        const BasicEdge& be = basis[e];
        const int other = (node == node_row(be.row)) ? node_col(be.col) : node_row(be.row);
        if (seen[other]) continue;
        seen[other] = 1;
        parent_edge[other] = e;
        parent_node[other] = node;
        queue.push_back(other);
      }
    }
    if (!seen[to]) throw InternalError("transport simplex: cycle not found");
    std::vector<int> edges;
    for (int node = to; node != from; node = parent_node[node])
      edges.push_back(parent_edge[node]);
    std::reverse(edges.begin(), edges.end());
    return edges;
  }

  void pivot(int ei, int ej) {
    // cycle = entering cell (+) then alternating -,+,... along the tree path
    const std::vector<int> path = tree_path(node_row(ei), node_col(ej));
    double theta = std::numeric_limits<double>::infinity();
    int leave_pos = -1;
    for (std::size_t k = 0; k < path.size(); ++k) {
      if (k % 2 == 0) {  // minus edge
        const BasicEdge& be = basis[path[k]];
        if (be.flow < theta ||
            (be.flow == theta && leave_pos >= 0 &&
             (be.row < basis[path[leave_pos]].row ||
              (be.row == basis[path[leave_pos]].row &&
               be.col < basis[path[leave_pos]].col)))) {
          theta = be.flow;
          leave_pos = static_cast<int>(k);
        }
      }
    }
    if (leave_pos < 0) throw InternalError("transport simplex: unbounded pivot");
    for (std::size_t k = 0; k < path.size(); ++k)
      basis[path[k]].flow += (k % 2 == 0) ? -theta : theta;
    const int le = path[leave_pos];
    in_basis[static_cast<std::size_t>(basis[le].row) * m + basis[le].col] = 0;
    in_basis[static_cast<std::size_t>(ei) * m + ej] = 1;
    basis[le] = {ei, ej, theta};
    rebuild_adjacency();
  }

  void solve() {
    const double tol = 1e-11 * (1.0 + cost.cwiseAbs().maxCoeff());
    const long bland_after = 1000 + 20L * (n + m);
    const long cap = 1000000;
    for (long iter = 0; iter < cap; ++iter) {
      compute_duals();
      int ei, ej;
      if (!find_entering(tol, iter >= bland_after, ei, ej)) return;
      pivot(ei, ej);
    }
    throw InternalError("transport simplex: iteration cap reached");
  }
};

}  // namespace

Coupling solve_kantorovich(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           const CostMatrix& c) {
  if (a.size() != c.rows() || b.size() != c.cols())
    throw DimensionError("kantorovich: marginals (" + std::to_string(a.size()) + ", " +
                         std::to_string(b.size()) + ") do not match cost " +
                         std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
  check_weights(a, "kantorovich row marginal");
  check_weights(b, "kantorovich column marginal");

  // consistent totals keep the northwest-corner walk balanced
  Eigen::VectorXd an = a / a.sum();
  Eigen::VectorXd bn = b / b.sum();

  TransportSimplex simplex(an, bn, c.entries);
  simplex.solve();

  Coupling out;
  out.plan = Eigen::MatrixXd::Zero(c.rows(), c.cols());
  for (const BasicEdge& e : simplex.basis) out.plan(e.row, e.col) += e.flow;
  out.row_marginal = a;
  out.col_marginal = b;
  out.total_cost = (out.plan.array() * c.entries.array()).sum();
  return out;
}

double wasserstein(const PointCloud& a, const PointCloud& b, double order) {
  if (order < 1.0)
    throw ParameterError("wasserstein: order " + fmt_g9(order) + " < 1");

  bool uniform_pair = a.size() == b.size();
  if (uniform_pair) {
    const double wa = 1.0 / a.size();
    uniform_pair = (a.weights.array() - wa).abs().maxCoeff() <= 1e-12 &&
                   (b.weights.array() - wa).abs().maxCoeff() <= 1e-12;
  }

  double optimum;
  if (uniform_pair && order == 2.0) {
    // For squared-Euclidean costs the optimal bijection only depends on the
    // cross terms <a_i, b_j>, so it is invariant to translating either
    // cloud. Solving on mean-centered copies is much faster when the clouds
    // are far apart; the true cost is then evaluated on the originals.
    PointCloud ca = a, cb = b;
    ca.points.rowwise() -= a.points.colwise().mean();
    cb.points.rowwise() -= b.points.colwise().mean();
    const Assignment s = solve_assignment(build_cost_matrix(ca, cb, 2.0));
    double total = 0.0;
    for (int i = 0; i < a.size(); ++i)
      total += (a.points.row(i) - b.points.row(s.sigma[i])).squaredNorm();
    optimum = total / a.size();
  } else if (uniform_pair) {
    optimum = solve_assignment(build_cost_matrix(a, b, order)).total_cost;
  } else {
    const CostMatrix c = build_cost_matrix(a, b, order);
    optimum = solve_kantorovich(a.weights, b.weights, c).total_cost;
  }
  return std::pow(std::max(optimum, 0.0), 1.0 / order);
}

namespace {

// Symmetric PSD square root by eigendecomposition; eigenvalues below the
// clamp threshold are treated as zero, genuine negatives are rejected.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success)
    throw InternalError(std::string(what) + ": eigendecomposition failed");
  Eigen::VectorXd lam = eig.eigenvalues();
  if (lam.minCoeff() < -1e-10)
    throw ParameterError(std::string(what) + ": covariance not PSD (eigenvalue " +
                         fmt_g9(lam.minCoeff()) + ")");
  for (int i = 0; i < lam.size(); ++i)
    lam[i] = lam[i] < 1e-12 ? 0.0 : std::sqrt(lam[i]);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

void check_gaussian(const GaussianSpec& g, const char* what) {
  if (g.covariance.rows() != g.dim() || g.covariance.cols() != g.dim())
    throw DimensionError(std::string(what) + ": covariance is " +
                         std::to_string(g.covariance.rows()) + "x" +
                         std::to_string(g.covariance.cols()) + " for mean dim " +
                         std::to_string(g.dim()));
  const double asym = (g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12)
    throw ParameterError(std::string(what) + ": covariance asymmetric by " +
                         fmt_g9(asym));
}

}  // namespace

double gaussian_wasserstein2(const GaussianSpec& g1, const GaussianSpec& g2) {
  if (g1.dim() != g2.dim())
    throw DimensionError("gaussian W2: dimensions differ (" + std::to_string(g1.dim()) +
                         " vs " + std::to_string(g2.dim()) + ")");
  check_gaussian(g1, "gaussian W2");
  check_gaussian(g2, "gaussian W2");

  const double mean_sq = (g1.mean - g2.mean).squaredNorm();

  // equal covariances cancel the trace term analytically
  if ((g1.covariance - g2.covariance).cwiseAbs().maxCoeff() == 0.0) {
    sqrt_psd(g1.covariance, "gaussian W2");  // still validates PSD
    return std::sqrt(mean_sq);
  }

  const Eigen::MatrixXd s1h = sqrt_psd(g1.covariance, "gaussian W2");
  Eigen::MatrixXd inner = s1h * g2.covariance * s1h;
  inner = 0.5 * (inner + inner.transpose().eval());
  const Eigen::MatrixXd cross = sqrt_psd(inner, "gaussian W2");

  const double trace_term =
      g1.covariance.trace() + g2.covariance.trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(mean_sq + trace_term, 0.0));
}

PointCloud push_forward(const Assignment& sigma, const PointCloud& source,
                        const PointCloud& target) {
  if (static_cast<int>(sigma.sigma.size()) != source.size())
    throw InternalError("push forward: assignment length " +
                        std::to_string(sigma.sigma.size()) + " vs source size " +
                        std::to_string(source.size()));
  PointCloud out;
  out.points.resize(source.size(), target.dim());
  out.weights = source.weights;
  for (int i = 0; i < source.size(); ++i) {
    const int j = sigma.sigma[i];
    if (j < 0 || j >= target.size())
      throw InternalError("push forward: index " + std::to_string(j) +
                          " outside target of size " + std::to_string(target.size()));
    out.points.row(i) = target.points.row(j);
  }
  return out;
}

}  // namespace otsa
