/**
 * @file analysis.hpp
 * @brief Trajectory diagnostics: class-by-class optimal transport between
 *        scaled inputs and best-epoch projections, matching fraction,
 *        distance/cost/path metrics, and classification accuracies.
 */

#ifndef OTSA_ANALYSIS_HPP
#define OTSA_ANALYSIS_HPP

#include <Eigen/Dense>
#include <vector>

#include "otsa/nn.hpp"
#include "otsa/ot.hpp"

namespace otsa {

/// Per-class view of a training trace: the scaled input points of each
/// class (flattened over instances and timesteps, identity preserved) and
/// the matching projection cloud at every epoch.
struct TrajectoryRecord {
  int num_classes = 0;
  int best_epoch = 0;
  std::vector<std::vector<std::pair<int, int>>> class_points;   ///< per class: (instance, timestep)
  std::vector<Eigen::MatrixXd> class_inputs;                    ///< per class: m_k x p
  std::vector<std::vector<Eigen::MatrixXd>> class_projections;  ///< per epoch, per class
};

/// Splits a trace into per-class input/projection clouds.
TrajectoryRecord build_record(const TrainingTrace& trace);

/// Every diagnostic of one repetition. Fields that a pipeline does not
/// produce stay NaN.
struct MetricsReport {
  double accuracy_pointwise = std::numeric_limits<double>::quiet_NaN();
  double accuracy_instancewise = std::numeric_limits<double>::quiet_NaN();
  double computational_time_s = std::numeric_limits<double>::quiet_NaN();
  double matching = std::numeric_limits<double>::quiet_NaN();
  double wasserstein_distance = std::numeric_limits<double>::quiet_NaN();
  double transformer_distance = std::numeric_limits<double>::quiet_NaN();
  double transformer_cost = std::numeric_limits<double>::quiet_NaN();
  double monge_gap = std::numeric_limits<double>::quiet_NaN();
  double efficiency = std::numeric_limits<double>::quiet_NaN();
  double optimality = std::numeric_limits<double>::quiet_NaN();
  double best_epoch = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> recalls;
  bool degenerate = false;  ///< a ratio had a zero denominator and was set to 1
};

/// Exact assignment between each class's input cloud and its best-epoch
/// projection cloud under the straight-line (exponent 1) Euclidean cost.
std::vector<Assignment> ot_reference(const TrajectoryRecord& record);

/// Fraction of points whose own best-epoch image is also their OT match
/// (sigma fixes the point index), pooled over classes.
double matching_fraction(const TrajectoryRecord& record,
                         const std::vector<Assignment>& ot);

/// Sum over all points of the straight-line input-to-best-projection length.
double transformer_distance(const TrajectoryRecord& record);

/// Cumulative per-point displacement through every epoch up to the best one,
/// starting from the scaled input.
double transformer_cost(const TrajectoryRecord& record);

/// Sum over classes of the optimal matched straight-line length (the OT
/// counterpart of transformer_distance).
double trajectory_wasserstein(const TrajectoryRecord& record,
                              const std::vector<Assignment>& ot);

/// transformer_distance - wasserstein; nonnegative up to solver tolerance.
double monge_gap(const TrajectoryRecord& record, const std::vector<Assignment>& ot);

/// wasserstein / transformer_distance; 1.0 when the denominator is zero
/// (stationary perfect solution), reported through *degenerate.
double optimality(const TrajectoryRecord& record, const std::vector<Assignment>& ot,
                  bool* degenerate = nullptr);

/// transformer_distance / transformer_cost; same zero-denominator rule.
double efficiency(const TrajectoryRecord& record, bool* degenerate = nullptr);

/// Fraction of (instance, timestep) points whose argmax matches the label;
/// argmax ties break to the lowest class index.
double accuracy_pointwise(const std::vector<Eigen::MatrixXd>& probs,
                          const std::vector<int>& labels);

/// Fraction of instances whose time-averaged probability argmax matches.
double accuracy_instancewise(const std::vector<Eigen::MatrixXd>& probs,
                             const std::vector<int>& labels);

/// Instance-wise recall per class; a class with no instances reports NaN.
std::vector<double> recall_per_class(const std::vector<Eigen::MatrixXd>& probs,
                                     const std::vector<int>& labels, int num_classes);

/// Assembles the full report for one repetition.
MetricsReport compute_report(const TrajectoryRecord& record,
                             const std::vector<Eigen::MatrixXd>& probs,
                             const std::vector<int>& labels, double elapsed_s);

}  // namespace otsa

#endif  // OTSA_ANALYSIS_HPP
