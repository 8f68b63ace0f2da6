#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "otsa/ot_classifier.hpp"

using namespace otsa;

namespace {

DatasetTensor gaussian_data(int k, double separation, int n, int t, std::uint64_t seed) {
  return sample_dataset(make_layout(k, separation, 2), n, t, seed);
}

OTClassifierModel affine_model(const Eigen::Matrix2d& w, const Eigen::MatrixXd& centroids) {
  OTClassifierModel m;
  m.num_classes = static_cast<int>(centroids.rows());
  m.centroids = centroids;
  Rng rng(1);
  m.mapping_net = make_mlp(2, 2, {}, 0.0, rng);
  m.mapping_net.weights[0].value = w;
  m.mapping_net.biases[0].value.setZero();
  m.input_offset = Eigen::Vector2d::Zero();
  m.target_offset = Eigen::Vector2d::Zero();
  return m;
}

DatasetTensor translate(const DatasetTensor& d, const Eigen::RowVector2d& v) {
  DatasetTensor out = d;
  for (auto& inst : out.instances) inst.rowwise() += v;
  return out;
}

}  // namespace

TEST_CASE("fit on data equal to its own dummy sample costs nothing") {
  OTFitConfig cfg;
  cfg.seed = 5;
  cfg.dropout = 0.0;  // a pure fit-machinery check, noise-free
  const ClassLayout layout = default_dummy_layout(2, 2);
  cfg.dummy = layout;

  // mirror fit's dummy draw: label-major blocks, t rows per instance
  const int per_class = 15, t = 10;
  const std::vector<int> counts = {per_class * t, per_class * t};
  const auto clouds = sample_dummy_clouds(layout, counts, mix_seed(cfg.seed, 1));
  DatasetTensor data;
  for (int cls = 0; cls < 2; ++cls) {
    int row = 0;
    for (int i = 0; i < per_class; ++i) {
      Eigen::MatrixXd inst(t, 2);
      for (int s = 0; s < t; ++s) inst.row(s) = clouds[cls].row(row++);
      data.instances.push_back(inst);
      data.labels.push_back(cls);
    }
  }

  const OTClassifierModel model = fit_ot_classifier(data, cfg);
  CHECK(model.ot_cost <= 1e-9);

  // the matched pairs are fixed points, so the net learns ~identity
  double mse = 0.0;
  long points = 0;
  for (const auto& inst : data.instances) {
    mse += (remap_points(model, inst) - inst).squaredNorm();
    points += inst.size();
  }
  CHECK(mse / points < 0.05);
}

TEST_CASE("remap preserves shape and labels") {
  OTFitConfig cfg;
  cfg.seed = 6;
  const DatasetTensor data = gaussian_data(2, 8.0, 20, 5, 7);
  const OTClassifierModel model = fit_ot_classifier(data, cfg);
  const DatasetTensor mapped = remap(model, data);
  CHECK(mapped.size() == data.size());
  CHECK(mapped.timesteps() == data.timesteps());
  CHECK(mapped.features() == data.features());
  CHECK(mapped.labels == data.labels);
}

TEST_CASE("remapped training points cluster around their own centroid") {
  OTFitConfig cfg;
  cfg.seed = 8;
  const DatasetTensor data = gaussian_data(2, 8.0, 30, 10, 9);
  const OTClassifierModel model = fit_ot_classifier(data, cfg);

  long nearer = 0, total = 0;
  for (int i = 0; i < data.size(); ++i) {
    const Eigen::MatrixXd mapped = remap_points(model, data.instances[i]);
    for (int s = 0; s < mapped.rows(); ++s) {
      const double own = (mapped.row(s) - model.centroids.row(data.labels[i])).norm();
      const double other =
          (mapped.row(s) - model.centroids.row(1 - data.labels[i])).norm();
      nearer += own < other;
      ++total;
    }
  }
  CHECK(static_cast<double>(nearer) / total >= 0.9);
}

TEST_CASE("equidistant remapped point gets uniform probabilities") {
  Eigen::MatrixXd centroids(4, 2);
  centroids << 1, 0, -1, 0, 0, 1, 0, -1;
  const OTClassifierModel model = affine_model(Eigen::Matrix2d::Zero(), centroids);

  DatasetTensor x;
  Eigen::MatrixXd inst(1, 2);
  inst << 3.7, -1.2;  // remaps to the origin under the zero map
  x.instances = {inst};
  x.labels = {0};
  const OTPrediction pred = predict_proba(model, x);
  CHECK((pred.point_probs[0].array() - 0.25).abs().maxCoeff() <= 1e-12);
  CHECK((pred.instance_probs.array() - 0.25).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("distances (0, ln 3) give probabilities (0.75, 0.25)") {
  Eigen::MatrixXd centroids(2, 2);
  centroids << 0, 0, std::log(3.0), 0;
  const OTClassifierModel model = affine_model(Eigen::Matrix2d::Zero(), centroids);

  DatasetTensor x;
  x.instances = {Eigen::MatrixXd::Zero(1, 2)};
  x.labels = {0};
  const OTPrediction pred = predict_proba(model, x);
  CHECK(pred.point_probs[0](0, 0) == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(pred.point_probs[0](0, 1) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(pred.instance_probs(0, 0) == doctest::Approx(0.75).epsilon(1e-9));
}

TEST_CASE("probabilities normalize at point and instance level") {
  OTFitConfig cfg;
  cfg.seed = 10;
  const DatasetTensor data = gaussian_data(3, 4.0, 30, 6, 11);
  const OTClassifierModel model = fit_ot_classifier(data, cfg);
  const OTPrediction pred = predict_proba(model, data);
  for (const auto& probs : pred.point_probs)
    CHECK((probs.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
  CHECK((pred.instance_probs.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("a point at a centroid is claimed by that class") {
  Eigen::MatrixXd centroids(3, 2);
  centroids << 0, 0, 6, 0, 0, 6;
  const OTClassifierModel model =
      affine_model(Eigen::Matrix2d::Identity(), centroids);  // identity remap
  DatasetTensor x;
  for (int cls = 0; cls < 3; ++cls) {
    Eigen::MatrixXd inst(1, 2);
    inst = centroids.row(cls);
    x.instances.push_back(inst);
    x.labels.push_back(cls);
  }
  const OTPrediction pred = predict_proba(model, x);
  for (int cls = 0; cls < 3; ++cls) CHECK(pred.instance_labels[cls] == cls);
}

TEST_CASE("full-size OT batches reproduce the unbatched fit exactly") {
  const DatasetTensor data = gaussian_data(2, 6.0, 20, 4, 12);

  OTFitConfig plain;
  plain.seed = 13;
  const OTClassifierModel a = fit_ot_classifier(data, plain);

  OTFitConfig batched = plain;
  batched.ot_batch_size = 10 * 4;  // exactly one label's point count
  const OTClassifierModel b = fit_ot_classifier(data, batched);

  CHECK(a.ot_cost == b.ot_cost);
  const OTPrediction pa = predict_proba(a, data);
  const OTPrediction pb = predict_proba(b, data);
  CHECK((pa.instance_probs - pb.instance_probs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("small OT batches still classify separated data perfectly") {
  const DatasetTensor data = gaussian_data(2, 8.0, 20, 4, 14);
  OTFitConfig cfg;
  cfg.seed = 15;
  cfg.ot_batch_size = 10;
  const OTClassifierModel model = fit_ot_classifier(data, cfg);
  const OTPrediction pred = predict_proba(model, data);
  for (int i = 0; i < data.size(); ++i) CHECK(pred.instance_labels[i] == data.labels[i]);
}

TEST_CASE("translating data and dummy layout together keeps every label") {
  const DatasetTensor data = gaussian_data(2, 6.0, 20, 5, 16);
  OTFitConfig cfg;
  cfg.seed = 17;
  cfg.dummy = default_dummy_layout(2, 2);
  const OTClassifierModel base = fit_ot_classifier(data, cfg);
  const OTPrediction base_pred = predict_proba(base, data);

  const Eigen::RowVector2d v(3.5, -2.25);
  const DatasetTensor moved = translate(data, v);
  OTFitConfig moved_cfg = cfg;
  for (auto& spec : moved_cfg.dummy.specs) spec.mean += v.transpose();
  const OTClassifierModel shifted = fit_ot_classifier(moved, moved_cfg);
  const OTPrediction shifted_pred = predict_proba(shifted, moved);

  CHECK(shifted_pred.instance_labels == base_pred.instance_labels);
}

TEST_CASE("permuting label identities permutes predictions") {
  const DatasetTensor data = gaussian_data(2, 8.0, 20, 5, 18);
  OTFitConfig cfg;
  cfg.seed = 19;
  cfg.dummy = default_dummy_layout(2, 2);
  const OTPrediction base = predict_proba(fit_ot_classifier(data, cfg), data);

  DatasetTensor swapped = data;
  for (int& label : swapped.labels) label = 1 - label;
  OTFitConfig swapped_cfg = cfg;
  std::swap(swapped_cfg.dummy.specs[0], swapped_cfg.dummy.specs[1]);
  const OTPrediction perm = predict_proba(fit_ot_classifier(swapped, swapped_cfg), swapped);

  for (std::size_t i = 0; i < base.instance_labels.size(); ++i)
    CHECK(perm.instance_labels[i] == 1 - base.instance_labels[i]);
}

TEST_CASE("fits are deterministic under the seed") {
  const DatasetTensor data = gaussian_data(3, 4.0, 18, 4, 20);
  OTFitConfig cfg;
  cfg.seed = 21;
  const OTClassifierModel a = fit_ot_classifier(data, cfg);
  const OTClassifierModel b = fit_ot_classifier(data, cfg);
  CHECK(a.ot_cost == b.ot_cost);
  CHECK(a.best_epoch == b.best_epoch);
  const OTPrediction pa = predict_proba(a, data);
  const OTPrediction pb = predict_proba(b, data);
  CHECK((pa.instance_probs - pb.instance_probs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unfitted model and mismatched layouts are rejected") {
  OTClassifierModel empty;
  DatasetTensor x;
  x.instances = {Eigen::MatrixXd::Zero(1, 2)};
  x.labels = {0};
  CHECK_THROWS_AS(predict_proba(empty, x), ParameterError);

  const DatasetTensor data = gaussian_data(2, 4.0, 10, 2, 22);
  OTFitConfig cfg;
  cfg.dummy = default_dummy_layout(3, 2);  // wrong class count
  CHECK_THROWS_AS(fit_ot_classifier(data, cfg), DimensionError);
}
