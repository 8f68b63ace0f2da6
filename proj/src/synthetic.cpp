#include "otsa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace otsa {

int DatasetTensor::num_classes() const {
  int k = 0;
  for (int label : labels) {
    if (label < 0) throw ParameterError("dataset: negative label");
    k = std::max(k, label + 1);
  }
  return k;
}

DatasetTensor Standardizer::apply(const DatasetTensor& d) const {
  if (is_identity()) return d;
  if (d.features() != means.size())
    throw DimensionError("standardizer: fitted on " + std::to_string(means.size()) +
                         " features, got " + std::to_string(d.features()));
  DatasetTensor out = d;
  for (auto& inst : out.instances)
    inst = (inst.rowwise() - means.transpose()).array().rowwise() /
           sds.transpose().array();
  return out;
}

DatasetTensor Standardizer::invert(const DatasetTensor& d) const {
  if (is_identity()) return d;
  DatasetTensor out = d;
  for (auto& inst : out.instances)
    inst = (inst.array().rowwise() * sds.transpose().array()).matrix().rowwise() +
           means.transpose();
  return out;
}

namespace {

Eigen::MatrixXd polygon_means(int k, double separation) {
  Eigen::MatrixXd unit(k, 2);
  for (int i = 0; i < k; ++i) {
    const double angle = 2.0 * M_PI * i / k;
    unit.row(i) << std::cos(angle), std::sin(angle);
  }
  double mean_pairwise = 0.0;
  int pairs = 0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      mean_pairwise += (unit.row(i) - unit.row(j)).norm();
      ++pairs;
    }
  mean_pairwise /= pairs;
  return unit * (separation / mean_pairwise);
}

}  // namespace

ClassLayout make_layout(int k, double separation, int dim) {
  if (k < 2) throw ParameterError("layout: class count " + std::to_string(k) + " < 2");
  if (separation <= 0.0)
    throw ParameterError("layout: separation " + fmt_g9(separation) + " <= 0");
  if (dim < 2) throw ParameterError("layout: feature count " + std::to_string(dim) + " < 2");

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(k, dim);
  const double s = separation;
  if (k == 2) {
    means(1, 0) = s;
  } else if (k == 3) {
    means(1, 0) = s;
    means(2, 0) = 0.5 * s;
    means(2, 1) = 0.5 * std::sqrt(3.0) * s;
  } else if (k == 4 && dim >= 3) {
    Eigen::MatrixXd tetra(4, 3);
    tetra << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
    means.leftCols(3) = tetra * (s / (2.0 * std::sqrt(2.0)));
  } else if (dim >= k) {
    for (int i = 0; i < k; ++i) means(i, i) = s / std::sqrt(2.0);
  } else {
    means.leftCols(2) = polygon_means(k, s);
  }

  ClassLayout layout;
  layout.target_separation = separation;
  layout.specs.reserve(k);
  for (int i = 0; i < k; ++i) {
    GaussianSpec g;
    g.mean = means.row(i).transpose();
    g.covariance = Eigen::MatrixXd::Identity(dim, dim);
    layout.specs.push_back(std::move(g));
  }
  return layout;
}

namespace {

// Sampling factor F with F F^T = covariance; eigendecomposition tolerates
// semidefinite inputs where Cholesky would fail.
Eigen::MatrixXd gaussian_factor(const GaussianSpec& g) {
  if ((g.covariance - Eigen::MatrixXd::Identity(g.dim(), g.dim())).cwiseAbs().maxCoeff() ==
      0.0)
    return Eigen::MatrixXd::Identity(g.dim(), g.dim());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g.covariance);
  if (eig.eigenvalues().minCoeff() < -1e-10)
    throw ParameterError("gaussian sample: covariance not PSD");
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

DatasetTensor sample_from_specs(const ClassLayout& layout, int n, int t,
                                std::uint64_t seed) {
  const int k = layout.num_classes();
  if (n < 1 || t < 1)
    throw ParameterError("sample: need n >= 1 and t >= 1, got n=" + std::to_string(n) +
                         " t=" + std::to_string(t));
  if (n % k != 0)
    throw ParameterError("sample: n=" + std::to_string(n) +
                         " not divisible by K=" + std::to_string(k));

  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(k);
  for (const auto& spec : layout.specs) factors.push_back(gaussian_factor(spec));

  const int per_class = n / k;
  const int dim = layout.dim();
  Rng rng(seed);
  DatasetTensor d;
  d.instances.reserve(n);
  d.labels.reserve(n);
  Eigen::VectorXd z(dim);
  for (int i = 0; i < n; ++i) {
    const int label = i / per_class;
    Eigen::MatrixXd inst(t, dim);
    for (int s = 0; s < t; ++s) {
      for (int f = 0; f < dim; ++f) z[f] = rng.normal();
      inst.row(s) = (layout.specs[label].mean + factors[label] * z).transpose();
    }
    d.instances.push_back(std::move(inst));
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace

DatasetTensor sample_dataset(const ClassLayout& layout, int n, int t,
                             std::uint64_t seed) {
  return sample_from_specs(layout, n, t, seed);
}

std::pair<DatasetTensor, Standardizer> standardize(const DatasetTensor& d) {
  if (d.size() == 0) throw ParameterError("standardize: empty dataset");
  const int p = d.features();
  const double count = static_cast<double>(d.size()) * d.timesteps();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& inst : d.instances) mean += inst.colwise().sum().transpose();
  mean /= count;

  Eigen::VectorXd var = Eigen::VectorXd::Zero(p);
  for (const auto& inst : d.instances)
    var += (inst.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  var /= count;

  Standardizer sc;
  sc.means = mean;
  sc.sds = var.cwiseSqrt();
  for (int f = 0; f < p; ++f)
    if (sc.sds[f] < 1e-12)
      throw ParameterError("standardize: feature f" + std::to_string(f + 1) +
                           " has zero variance");
  return {sc.apply(d), sc};
}

ClassLayout rotated_layout(const DummyLayout& layout) {
  if (layout.rotation_degrees < 0.0 || layout.rotation_degrees >= 360.0)
    throw ParameterError("dummy layout: rotation " + fmt_g9(layout.rotation_degrees) +
                         " outside [0, 360)");
  ClassLayout out = layout.base;
  if (layout.rotation_degrees == 0.0) return out;

  Eigen::VectorXd centroid = Eigen::VectorXd::Zero(out.dim());
  for (const auto& spec : out.specs) centroid += spec.mean;
  centroid /= out.num_classes();

  const double rad = layout.rotation_degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  for (auto& spec : out.specs) {
    // rotate in the first-two-features plane about the mean centroid
    const double x = spec.mean[0] - centroid[0];
    const double y = spec.mean[1] - centroid[1];
    spec.mean[0] = centroid[0] + c * x - s * y;
    spec.mean[1] = centroid[1] + s * x + c * y;
  }
  return out;
}

DatasetTensor make_dummy_dataset(const DummyLayout& layout, int n, int t,
                                 std::uint64_t seed) {
  return sample_from_specs(rotated_layout(layout), n, t, seed);
}

void export_dataset_csv(const DatasetTensor& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InternalError("dataset export: cannot open " + path);
  out << "instance,timestep,label";
  for (int f = 0; f < d.features(); ++f) out << ",f" << f + 1;
  out << "\n";
  for (int i = 0; i < d.size(); ++i) {
    for (int s = 0; s < d.timesteps(); ++s) {
      out << i << "," << s << "," << d.labels[i];
      for (int f = 0; f < d.features(); ++f) out << "," << fmt_g17(d.instances[i](s, f));
      out << "\n";
    }
  }
  if (!out) throw InternalError("dataset export: write failed for " + path);
}

DatasetTensor import_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("dataset import: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParameterError("dataset import: " + path + " is empty");
  if (line.rfind("instance,timestep,label", 0) != 0)
    throw ParameterError("dataset import: unexpected header in " + path + ": " + line);
  const int p = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 2;
  if (p < 1) throw ParameterError("dataset import: no feature columns in " + path);

  struct Row {
    int instance, timestep, label;
    Eigen::VectorXd x;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Row r;
    r.x.resize(p);
    try {
      std::getline(ss, cell, ',');
      r.instance = std::stoi(cell);
      std::getline(ss, cell, ',');
      r.timestep = std::stoi(cell);
      std::getline(ss, cell, ',');
      r.label = std::stoi(cell);
      for (int f = 0; f < p; ++f) {
        if (!std::getline(ss, cell, ',')) throw std::invalid_argument("missing field");
        r.x[f] = std::stod(cell);
      }
    } catch (const std::exception&) {
      throw ParameterError("dataset import: parse error at " + path + ":" +
                           std::to_string(line_no));
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParameterError("dataset import: no data rows in " + path);

  int n = 0, t = 0;
  for (const Row& r : rows) {
    n = std::max(n, r.instance + 1);
    t = std::max(t, r.timestep + 1);
  }
  if (static_cast<int>(rows.size()) != n * t)
    throw ParameterError("dataset import: expected " + std::to_string(n * t) +
                         " rows, found " + std::to_string(rows.size()));

  DatasetTensor d;
  d.instances.assign(n, Eigen::MatrixXd::Zero(t, p));
  d.labels.assign(n, -1);
  for (const Row& r : rows) {
    d.instances[r.instance].row(r.timestep) = r.x.transpose();
    if (d.labels[r.instance] >= 0 && d.labels[r.instance] != r.label)
      throw ParameterError("dataset import: instance " + std::to_string(r.instance) +
                           " has conflicting labels");
    d.labels[r.instance] = r.label;
  }
  return d;
}

}  // namespace otsa
