/**
 * @file synthetic.hpp
 * @brief Gaussian-cloud dataset generation, standardization, and dummy
 *        (rotated) configurations.
 */

#ifndef OTSA_SYNTHETIC_HPP
#define OTSA_SYNTHETIC_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "otsa/ot.hpp"

namespace otsa {

/// Labeled data cube: n instances of t timesteps with p features each.
struct DatasetTensor {
  std::vector<Eigen::MatrixXd> instances;  ///< n matrices, each t x p
  std::vector<int> labels;                 ///< length n, values in [0, K)

  int size() const { return static_cast<int>(instances.size()); }
  int timesteps() const { return instances.empty() ? 0 : static_cast<int>(instances[0].rows()); }
  int features() const { return instances.empty() ? 0 : static_cast<int>(instances[0].cols()); }
  int num_classes() const;
};

/// One Gaussian generator per class, built to hit a target separation.
struct ClassLayout {
  std::vector<GaussianSpec> specs;
  double target_separation = 0.0;  ///< pairwise W2 (mean pairwise for K >= 3)

  int num_classes() const { return static_cast<int>(specs.size()); }
  int dim() const { return specs.empty() ? 0 : specs[0].dim(); }
};

/// A class layout whose means are rotated about their centroid; rotation 0
/// reproduces the base exactly.
struct DummyLayout {
  ClassLayout base;
  double rotation_degrees = 0.0;
};

/// Per-feature z-scoring transform fitted on one dataset and reusable on
/// another (e.g. fitted on train, applied to test).
struct Standardizer {
  Eigen::VectorXd means;
  Eigen::VectorXd sds;

  DatasetTensor apply(const DatasetTensor& d) const;
  DatasetTensor invert(const DatasetTensor& d) const;
  bool is_identity() const { return means.size() == 0; }
};

/// Unit-covariance Gaussians on a regular figure with the requested
/// separation: collinear for K = 2, equilateral for K = 3 (side = mean
/// pairwise W2 = separation), tetrahedron / simplex for larger K when the
/// dimension allows, otherwise a regular polygon in the first two features
/// with mean pairwise W2 = separation.
ClassLayout make_layout(int k, double separation, int dim);

/// Draws n/K instances per class, each timestep i.i.d. from the class
/// Gaussian; deterministic under the seed. n must be divisible by K.
DatasetTensor sample_dataset(const ClassLayout& layout, int n, int t, std::uint64_t seed);

/// Z-scores every feature over all n*t points in place and returns the
/// transformed data plus the fitted transform. A zero-variance feature is
/// rejected by name.
std::pair<DatasetTensor, Standardizer> standardize(const DatasetTensor& d);

/// Rotates the layout means in the first-two-features plane about the
/// centroid of all means, then samples exactly like sample_dataset.
DatasetTensor make_dummy_dataset(const DummyLayout& layout, int n, int t,
                                 std::uint64_t seed);

/// The rotated class layout itself (what make_dummy_dataset samples from).
ClassLayout rotated_layout(const DummyLayout& layout);

/// Long-format CSV: header "instance,timestep,label,f1..fp"; full double
/// precision so the round trip is lossless.
void export_dataset_csv(const DatasetTensor& d, const std::string& path);
DatasetTensor import_dataset_csv(const std::string& path);

}  // namespace otsa

#endif  // OTSA_SYNTHETIC_HPP
