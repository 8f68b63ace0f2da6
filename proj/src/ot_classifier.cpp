#include "otsa/ot_classifier.hpp"

#include <cmath>
#include <numeric>

#include "otsa/ot.hpp"

namespace otsa {

ClassLayout default_dummy_layout(int k, int dim, double distance) {
  if (k == 4 && dim == 2) {
    ClassLayout layout;
    layout.target_separation = distance;
    Eigen::MatrixXd corners(4, 2);
    corners << 0, 0, distance, 0, distance, distance, 0, distance;
    for (int i = 0; i < 4; ++i) {
      GaussianSpec g;
      g.mean = corners.row(i).transpose();
      g.covariance = Eigen::MatrixXd::Identity(2, 2);
      layout.specs.push_back(std::move(g));
    }
    return layout;
  }
  return make_layout(k, distance, dim);
}

std::vector<Eigen::MatrixXd> sample_dummy_clouds(const ClassLayout& layout,
                                                 const std::vector<int>& counts,
                                                 std::uint64_t seed) {
  if (static_cast<int>(counts.size()) != layout.num_classes())
    throw DimensionError("dummy clouds: " + std::to_string(counts.size()) +
                         " counts for " + std::to_string(layout.num_classes()) +
                         " classes");
  Rng rng(seed);
  const int p = layout.dim();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(counts.size());
  for (int k = 0; k < layout.num_classes(); ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(layout.specs[k].covariance);
    if (eig.eigenvalues().minCoeff() < -1e-10)
      throw ParameterError("dummy clouds: covariance of class " + std::to_string(k) +
                           " not PSD");
    const Eigen::MatrixXd factor =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::MatrixXd cloud(counts[k], p);
    Eigen::VectorXd z(p);
    for (int r = 0; r < counts[k]; ++r) {
      for (int f = 0; f < p; ++f) z[f] = rng.normal();
      cloud.row(r) = (layout.specs[k].mean + factor * z).transpose();
    }
    out.push_back(std::move(cloud));
  }
  return out;
}

namespace {

// Exact exponent-1 matching of real points to dummy points, optionally in
// shuffled batches; fills target rows and returns the summed matched length.
double match_label(const Eigen::MatrixXd& real, const Eigen::MatrixXd& dummy,
                   int batch_size, Rng& shuffle_rng, Eigen::MatrixXd& targets) {
  const int m = static_cast<int>(real.rows());
  targets.resize(m, real.cols());

  const auto solve_block = [&](const std::vector<int>& real_idx,
                               const std::vector<int>& dummy_idx) {
    const int size = static_cast<int>(real_idx.size());
    Eigen::MatrixXd sub_real(size, real.cols()), sub_dummy(size, real.cols());
    for (int i = 0; i < size; ++i) {
      sub_real.row(i) = real.row(real_idx[i]);
      sub_dummy.row(i) = dummy.row(dummy_idx[i]);
    }
    const Assignment a = solve_assignment(
        build_cost_matrix(make_cloud(sub_real), make_cloud(sub_dummy), 1.0));
    for (int i = 0; i < size; ++i)
      targets.row(real_idx[i]) = sub_dummy.row(a.sigma[i]);
    return a.total_cost * size;
  };

  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  if (batch_size <= 0 || batch_size >= m)
    return solve_block(order, order);

  shuffle_rng.shuffle(order);
  double cost = 0.0;
  for (int start = 0; start < m; start += batch_size) {
    const int stop = std::min(start + batch_size, m);
    std::vector<int> real_idx(order.begin() + start, order.begin() + stop);
    std::vector<int> dummy_idx(stop - start);
    std::iota(dummy_idx.begin(), dummy_idx.end(), start);
    cost += solve_block(real_idx, dummy_idx);
  }
  return cost;
}

}  // namespace

OTClassifierModel fit_ot_classifier(const DatasetTensor& data, const OTFitConfig& cfg,
                                    const Standardizer& scaler) {
  const int k = data.num_classes();
  if (k < 2) throw ParameterError("ot classifier: need at least 2 classes");
  const int p = data.features();
  const int t = data.timesteps();

  ClassLayout dummy = cfg.dummy.specs.empty() ? default_dummy_layout(k, p) : cfg.dummy;
  if (dummy.num_classes() != k)
    throw DimensionError("ot classifier: dummy layout has " +
                         std::to_string(dummy.num_classes()) + " classes, data has " +
                         std::to_string(k));
  if (dummy.dim() != p)
    throw DimensionError("ot classifier: dummy layout dim " + std::to_string(dummy.dim()) +
                         " vs data features " + std::to_string(p));

  // per-label real point clouds, instance-major order
  std::vector<std::vector<int>> label_instances(k);
  for (int i = 0; i < data.size(); ++i) label_instances[data.labels[i]].push_back(i);
  std::vector<int> counts(k);
  std::vector<Eigen::MatrixXd> real_clouds(k);
  for (int cls = 0; cls < k; ++cls) {
    counts[cls] = static_cast<int>(label_instances[cls].size()) * t;
    if (counts[cls] == 0)
      throw ParameterError("ot classifier: class " + std::to_string(cls) +
                           " has no instances");
    real_clouds[cls].resize(counts[cls], p);
    int row = 0;
    for (int i : label_instances[cls])
      for (int s = 0; s < t; ++s) real_clouds[cls].row(row++) = data.instances[i].row(s);
  }

  const std::vector<Eigen::MatrixXd> dummy_clouds =
      sample_dummy_clouds(dummy, counts, mix_seed(cfg.seed, 1));

  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  const int total = std::accumulate(counts.begin(), counts.end(), 0);
  Eigen::MatrixXd x(total, p), y(total, p);
  double ot_cost = 0.0;
  int offset = 0;
  for (int cls = 0; cls < k; ++cls) {
    Eigen::MatrixXd targets;
    ot_cost += match_label(real_clouds[cls], dummy_clouds[cls], cfg.ot_batch_size,
                           shuffle_rng, targets);
    x.middleRows(offset, counts[cls]) = real_clouds[cls];
    y.middleRows(offset, counts[cls]) = targets;
    offset += counts[cls];
  }

  OTClassifierModel model;
  model.num_classes = k;
  model.scaler = scaler;
  model.ot_cost = ot_cost;
  model.centroids.resize(k, p);
  for (int cls = 0; cls < k; ++cls)
    model.centroids.row(cls) = dummy.specs[cls].mean.transpose();

  model.input_offset = x.colwise().mean().transpose();
  model.target_offset = y.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - model.input_offset.transpose();
  const Eigen::MatrixXd yc = y.rowwise() - model.target_offset.transpose();

  MlpTrainResult reg =
      train_mlp_regression(xc, yc, cfg.mlp_units, cfg.dropout, cfg.learning_rate,
                           cfg.mlp_epochs, cfg.nn_batch_size, mix_seed(cfg.seed, 3));
  model.mapping_net = std::move(reg.net);
  model.best_epoch = reg.best_epoch;
  return model;
}

Eigen::MatrixXd remap_points(const OTClassifierModel& model, const Eigen::MatrixXd& pts) {
  if (!model.fitted()) throw ParameterError("ot classifier: model not fitted");
  const Eigen::MatrixXd centered = pts.rowwise() - model.input_offset.transpose();
  return mlp_forward(model.mapping_net, centered).rowwise() +
         model.target_offset.transpose();
}

DatasetTensor remap(const OTClassifierModel& model, const DatasetTensor& x) {
  DatasetTensor out = x;
  for (auto& inst : out.instances) inst = remap_points(model, inst);
  return out;
}

OTPrediction predict_proba(const OTClassifierModel& model, const DatasetTensor& x) {
  if (!model.fitted()) throw ParameterError("ot classifier: model not fitted");
  const int k = model.num_classes;
  OTPrediction pred;
  pred.point_probs.reserve(x.size());
  pred.instance_probs.resize(x.size(), k);
  pred.instance_labels.reserve(x.size());

  const auto softmax_neg = [](const Eigen::RowVectorXd& d) {
    const Eigen::ArrayXd shifted = -(d.array() - d.minCoeff());
    const Eigen::ArrayXd e = shifted.exp();
    return Eigen::RowVectorXd((e / e.sum()).matrix().transpose());
  };

  for (int i = 0; i < x.size(); ++i) {
    const Eigen::MatrixXd mapped = remap_points(model, x.instances[i]);
    const int t = static_cast<int>(mapped.rows());
    Eigen::MatrixXd dists(t, k);
    for (int cls = 0; cls < k; ++cls)
      dists.col(cls) =
          (mapped.rowwise() - model.centroids.row(cls)).rowwise().norm();

    Eigen::MatrixXd point_probs(t, k);
    for (int s = 0; s < t; ++s) point_probs.row(s) = softmax_neg(dists.row(s));
    pred.point_probs.push_back(std::move(point_probs));

    const Eigen::RowVectorXd summed = dists.colwise().sum();
    pred.instance_probs.row(i) = softmax_neg(summed);
    int best = 0;
    for (int cls = 1; cls < k; ++cls)
      if (pred.instance_probs(i, cls) > pred.instance_probs(i, best)) best = cls;
    pred.instance_labels.push_back(best);
  }
  return pred;
}

}  // namespace otsa
