#include "otsa/analysis.hpp"

#include <cmath>

namespace otsa {

namespace {

int argmax_row(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (int c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;  // ties keep the lowest index
  return best;
}

}  // namespace

TrajectoryRecord build_record(const TrainingTrace& trace) {
  if (trace.projections.empty())
    throw ParameterError("trajectory record: trace has no projections");
  const int n = static_cast<int>(trace.input.size());
  const int t = static_cast<int>(trace.input[0].rows());
  const int p = static_cast<int>(trace.input[0].cols());

  TrajectoryRecord rec;
  rec.best_epoch = trace.best_epoch;
  int k = 0;
  for (int label : trace.labels) k = std::max(k, label + 1);
  rec.num_classes = k;

  rec.class_points.assign(k, {});
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < t; ++s)
      rec.class_points[trace.labels[i]].push_back({i, s});

  const auto gather = [&](const std::vector<Eigen::MatrixXd>& frames, int cls) {
    Eigen::MatrixXd cloud(rec.class_points[cls].size(), p);
    for (std::size_t r = 0; r < rec.class_points[cls].size(); ++r) {
      const auto [i, s] = rec.class_points[cls][r];
      cloud.row(r) = frames[i].row(s);
    }
    return cloud;
  };

  rec.class_inputs.reserve(k);
  for (int cls = 0; cls < k; ++cls) rec.class_inputs.push_back(gather(trace.input, cls));

  rec.class_projections.reserve(trace.projections.size());
  for (const auto& frame : trace.projections) {
    std::vector<Eigen::MatrixXd> per_class;
    per_class.reserve(k);
    for (int cls = 0; cls < k; ++cls) per_class.push_back(gather(frame, cls));
    rec.class_projections.push_back(std::move(per_class));
  }
  return rec;
}

std::vector<Assignment> ot_reference(const TrajectoryRecord& record) {
  std::vector<Assignment> out;
  out.reserve(record.num_classes);
  const auto& best = record.class_projections.at(record.best_epoch);
  for (int cls = 0; cls < record.num_classes; ++cls) {
    if (record.class_inputs[cls].rows() != best[cls].rows())
      throw DimensionError("ot reference: class " + std::to_string(cls) + " has " +
                           std::to_string(record.class_inputs[cls].rows()) +
                           " inputs vs " + std::to_string(best[cls].rows()) +
                           " projections");
    const CostMatrix cost = build_cost_matrix(make_cloud(record.class_inputs[cls]),
                                              make_cloud(best[cls]), 1.0);
    out.push_back(solve_assignment(cost));
  }
  return out;
}

double matching_fraction(const TrajectoryRecord& record,
                         const std::vector<Assignment>& ot) {
  long hits = 0, total = 0;
  for (int cls = 0; cls < record.num_classes; ++cls) {
    const auto& sigma = ot[cls].sigma;
    for (std::size_t i = 0; i < sigma.size(); ++i) hits += sigma[i] == static_cast<int>(i);
    total += static_cast<long>(sigma.size());
  }
  return static_cast<double>(hits) / total;
}

double transformer_distance(const TrajectoryRecord& record) {
  double sum = 0.0;
  const auto& best = record.class_projections.at(record.best_epoch);
  for (int cls = 0; cls < record.num_classes; ++cls)
    sum += (record.class_inputs[cls] - best[cls]).rowwise().norm().sum();
  return sum;
}

double transformer_cost(const TrajectoryRecord& record) {
  if (record.class_projections.empty())
    throw ParameterError("transformer cost: no epochs recorded");
  double sum = 0.0;
  for (int cls = 0; cls < record.num_classes; ++cls) {
    const Eigen::MatrixXd* prev = &record.class_inputs[cls];
    for (int e = 0; e <= record.best_epoch; ++e) {
      const Eigen::MatrixXd& cur = record.class_projections[e][cls];
      sum += (cur - *prev).rowwise().norm().sum();
      prev = &cur;
    }
  }
  return sum;
}

double trajectory_wasserstein(const TrajectoryRecord& record,
                              const std::vector<Assignment>& ot) {
  double sum = 0.0;
  for (int cls = 0; cls < record.num_classes; ++cls)
    sum += ot[cls].total_cost * static_cast<double>(ot[cls].sigma.size());
  return sum;
}

double monge_gap(const TrajectoryRecord& record, const std::vector<Assignment>& ot) {
  return transformer_distance(record) - trajectory_wasserstein(record, ot);
}

double optimality(const TrajectoryRecord& record, const std::vector<Assignment>& ot,
                  bool* degenerate) {
  const double td = transformer_distance(record);
  if (td == 0.0) {
    if (degenerate != nullptr) *degenerate = true;
    return 1.0;
  }
  return trajectory_wasserstein(record, ot) / td;
}

double efficiency(const TrajectoryRecord& record, bool* degenerate) {
  const double tc = transformer_cost(record);
  if (tc == 0.0) {
    if (degenerate != nullptr) *degenerate = true;
    return 1.0;
  }
  return transformer_distance(record) / tc;
}

double accuracy_pointwise(const std::vector<Eigen::MatrixXd>& probs,
                          const std::vector<int>& labels) {
  long correct = 0, total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (int s = 0; s < probs[i].rows(); ++s) {
      correct += argmax_row(probs[i].row(s)) == labels[i];
      ++total;
    }
  }
  return static_cast<double>(correct) / total;
}

double accuracy_instancewise(const std::vector<Eigen::MatrixXd>& probs,
                             const std::vector<int>& labels) {
  long correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    correct += argmax_row(probs[i].colwise().mean()) == labels[i];
  return static_cast<double>(correct) / probs.size();
}

std::vector<double> recall_per_class(const std::vector<Eigen::MatrixXd>& probs,
                                     const std::vector<int>& labels, int num_classes) {
  std::vector<long> hits(num_classes, 0), counts(num_classes, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int predicted = argmax_row(probs[i].colwise().mean());
    ++counts[labels[i]];
    hits[labels[i]] += predicted == labels[i];
  }
  std::vector<double> out(num_classes);
  for (int k = 0; k < num_classes; ++k)
    out[k] = counts[k] == 0 ? std::numeric_limits<double>::quiet_NaN()
                            : static_cast<double>(hits[k]) / counts[k];
  return out;
}

MetricsReport compute_report(const TrajectoryRecord& record,
                             const std::vector<Eigen::MatrixXd>& probs,
                             const std::vector<int>& labels, double elapsed_s) {
  MetricsReport rep;
  const std::vector<Assignment> ot = ot_reference(record);
  rep.matching = matching_fraction(record, ot);
  rep.wasserstein_distance = trajectory_wasserstein(record, ot);
  rep.transformer_distance = transformer_distance(record);
  rep.transformer_cost = transformer_cost(record);
  rep.monge_gap = rep.transformer_distance - rep.wasserstein_distance;
  rep.optimality = optimality(record, ot, &rep.degenerate);
  rep.efficiency = efficiency(record, &rep.degenerate);
  rep.best_epoch = record.best_epoch;
  rep.accuracy_pointwise = accuracy_pointwise(probs, labels);
  rep.accuracy_instancewise = accuracy_instancewise(probs, labels);
  rep.recalls = recall_per_class(probs, labels, record.num_classes);
  rep.computational_time_s = elapsed_s;
  return rep;
}

}  // namespace otsa
