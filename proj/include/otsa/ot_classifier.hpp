/**
 * @file ot_classifier.hpp
 * @brief Classifier that replaces learned attention remapping with optimal
 *        transport: per-label dummy Gaussian targets, an exact OT matching
 *        from real to dummy points, an MLP that generalizes the matching,
 *        and centroid-distance softmax prediction.
 */

#ifndef OTSA_OT_CLASSIFIER_HPP
#define OTSA_OT_CLASSIFIER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "otsa/nn.hpp"
#include "otsa/synthetic.hpp"

namespace otsa {

struct OTFitConfig {
  ClassLayout dummy;  ///< dummy targets; empty specs = default layout
  int mlp_epochs = 50;
  std::vector<int> mlp_units = {32, 32};
  double dropout = 0.3;
  double learning_rate = 0.01;
  int ot_batch_size = 0;  ///< 0 = match each label's full cloud at once
  int nn_batch_size = 32;
  std::uint64_t seed = 0;
};

struct OTClassifierModel {
  Eigen::MatrixXd centroids;     ///< K x p dummy class means
  MlpNet mapping_net;            ///< p -> p transport-map regressor
  Eigen::VectorXd input_offset;  ///< training-input mean, see remap
  Eigen::VectorXd target_offset; ///< dummy-target mean
  Standardizer scaler;           ///< the transform fit's inputs were in
  int num_classes = 0;
  int best_epoch = 0;            ///< mapping-net epoch of minimum MSE
  double ot_cost = 0.0;          ///< summed matched distance of the fit

  bool fitted() const { return !mapping_net.weights.empty(); }
};

/// Well-separated unit Gaussians with pairwise centroid distance `distance`:
/// collinear (K=2), equilateral (K=3), regular simplex when the dimension
/// allows, and for K=4 in the plane a square with side `distance` (the two
/// diagonal pairs sit farther apart, which biases those class pairs).
ClassLayout default_dummy_layout(int k, int dim, double distance = 10.0);

/// Per-label dummy clouds of the requested cardinalities, drawn label by
/// label from one seeded stream. fit() uses this exact procedure.
std::vector<Eigen::MatrixXd> sample_dummy_clouds(const ClassLayout& layout,
                                                 const std::vector<int>& counts,
                                                 std::uint64_t seed);

/// Fits the model on (already standardized) data: samples dummy points with
/// the cardinality of each label's real points, matches real to dummy with
/// an exact exponent-1 assignment (optionally in shuffled batches of
/// ot_batch_size), and trains the mapping net on the matched pairs.
/// The mapping net learns on mean-centered inputs and targets, which makes
/// the decision rule exactly translation-covariant.
OTClassifierModel fit_ot_classifier(const DatasetTensor& data, const OTFitConfig& cfg,
                                    const Standardizer& scaler = {});

/// Applies the fitted map pointwise to raw feature rows.
Eigen::MatrixXd remap_points(const OTClassifierModel& model, const Eigen::MatrixXd& pts);

/// Applies the fitted map to every (instance, timestep) point.
DatasetTensor remap(const OTClassifierModel& model, const DatasetTensor& x);

struct OTPrediction {
  std::vector<Eigen::MatrixXd> point_probs;  ///< n of t x K
  Eigen::MatrixXd instance_probs;            ///< n x K
  std::vector<int> instance_labels;          ///< argmax, ties to lowest class
};

/// Point level: softmax over negated remapped-point-to-centroid distances.
/// Instance level: softmax over the per-timestep distance sums.
OTPrediction predict_proba(const OTClassifierModel& model, const DatasetTensor& x);

}  // namespace otsa

#endif  // OTSA_OT_CLASSIFIER_HPP
