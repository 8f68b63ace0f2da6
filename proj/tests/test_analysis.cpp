#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "otsa/analysis.hpp"

using namespace otsa;

namespace {

// Trace over 1-D-instance points: every instance has one timestep, so the
// class clouds are easy to write down by hand.
TrainingTrace flat_trace(const Eigen::MatrixXd& input, const std::vector<int>& labels,
                         const std::vector<Eigen::MatrixXd>& epochs, int best_epoch) {
  TrainingTrace trace;
  const int n = static_cast<int>(input.rows());
  for (int i = 0; i < n; ++i) trace.input.push_back(input.row(i));
  trace.labels = labels;
  for (const auto& frame : epochs) {
    std::vector<Eigen::MatrixXd> per_instance;
    for (int i = 0; i < n; ++i) per_instance.push_back(frame.row(i));
    trace.projections.push_back(per_instance);
  }
  trace.losses.assign(epochs.size(), 1.0);
  trace.best_epoch = best_epoch;
  return trace;
}

double brute_force_min_sum(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const int n = static_cast<int>(a.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += (a.row(i) - b.row(perm[i])).norm();
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<Eigen::MatrixXd> one_hot_probs(const std::vector<int>& labels, int t, int k) {
  std::vector<Eigen::MatrixXd> probs;
  for (int label : labels) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(t, k);
    m.col(label).setOnes();
    probs.push_back(m);
  }
  return probs;
}

}  // namespace

TEST_CASE("identity training gives identity assignment at zero cost") {
  Eigen::MatrixXd input(4, 2);
  input << 0, 0, 1, 0, 5, 5, 6, 5;
  const std::vector<int> labels = {0, 0, 1, 1};
  const TrainingTrace trace = flat_trace(input, labels, {input}, 0);
  const TrajectoryRecord rec = build_record(trace);
  const std::vector<Assignment> ot = ot_reference(rec);
  for (const auto& a : ot) {
    CHECK(a.total_cost == doctest::Approx(0.0));
    for (std::size_t i = 0; i < a.sigma.size(); ++i) CHECK(a.sigma[i] == static_cast<int>(i));
  }
  CHECK(matching_fraction(rec, ot) == doctest::Approx(1.0));
  CHECK(transformer_distance(rec) == doctest::Approx(0.0));
  CHECK(transformer_cost(rec) == doctest::Approx(0.0));
}

TEST_CASE("translation keeps the identity matching optimal") {
  Eigen::MatrixXd input(5, 2);
  input << 0, 0, 1, 0.5, 2, -0.5, 3.5, 1, 4, 0;
  const std::vector<int> labels = {0, 0, 0, 0, 0};
  Eigen::MatrixXd shifted = input;
  shifted.col(0).array() += 2.0;
  shifted.col(1).array() += 1.0;
  const TrainingTrace trace = flat_trace(input, labels, {shifted}, 0);
  const TrajectoryRecord rec = build_record(trace);
  const std::vector<Assignment> ot = ot_reference(rec);
  for (std::size_t i = 0; i < ot[0].sigma.size(); ++i) CHECK(ot[0].sigma[i] == static_cast<int>(i));
  CHECK(ot[0].total_cost * 5.0 == doctest::Approx(brute_force_min_sum(input, shifted)));
}

TEST_CASE("per-class OT cost matches brute force on random epochs") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    Eigen::MatrixXd input(6, 2), proj(6, 2);
    for (int i = 0; i < 6; ++i)
      for (int c = 0; c < 2; ++c) {
        input(i, c) = rng.normal();
        proj(i, c) = rng.normal();
      }
    const std::vector<int> labels(6, 0);
    const TrainingTrace trace = flat_trace(input, labels, {proj}, 0);
    const TrajectoryRecord rec = build_record(trace);
    const std::vector<Assignment> ot = ot_reference(rec);
    CHECK(trajectory_wasserstein(rec, ot) ==
          doctest::Approx(brute_force_min_sum(input, proj)).epsilon(1e-9));
  }
}

TEST_CASE("full derangement scores zero matching") {
  Eigen::MatrixXd input(2, 1), proj(2, 1);
  input << 0, 1;
  proj << 1, 0;  // optimal matching crosses
  const TrainingTrace trace = flat_trace(input, {0, 0}, {proj}, 0);
  const TrajectoryRecord rec = build_record(trace);
  const std::vector<Assignment> ot = ot_reference(rec);
  CHECK(matching_fraction(rec, ot) == doctest::Approx(0.0));
}

TEST_CASE("transformer distance tracks single-point displacement") {
  Eigen::MatrixXd input(2, 2), proj(2, 2);
  input << 0, 0, 1, 1;
  proj << 3, 0, 1, 1;  // first point moved by 3
  const TrainingTrace trace = flat_trace(input, {0, 1}, {proj}, 0);
  const TrajectoryRecord rec = build_record(trace);
  CHECK(transformer_distance(rec) == doctest::Approx(3.0));
}

TEST_CASE("one straight jump makes cost equal distance; zig-zag exceeds it") {
  Eigen::MatrixXd input(1, 2), out(1, 2), back(1, 2);
  input << 0, 0;
  out << 2, 0;
  back << 0, 0;

  const TrainingTrace one_jump = flat_trace(input, {0}, {out}, 0);
  const TrajectoryRecord rec1 = build_record(one_jump);
  CHECK(transformer_cost(rec1) == doctest::Approx(transformer_distance(rec1)));

  // out by 2, back, out again: path length 6, final displacement 2
  const TrainingTrace zigzag = flat_trace(input, {0}, {out, back, out}, 2);
  const TrajectoryRecord rec2 = build_record(zigzag);
  CHECK(transformer_distance(rec2) == doctest::Approx(2.0));
  CHECK(transformer_cost(rec2) == doctest::Approx(6.0));
  CHECK(transformer_cost(rec2) > transformer_distance(rec2));

  const TrainingTrace stationary = flat_trace(input, {0}, {input, input}, 1);
  CHECK(transformer_cost(build_record(stationary)) == doctest::Approx(0.0));
}

TEST_CASE("path truncates at the best epoch") {
  Eigen::MatrixXd input(1, 2), a(1, 2), b(1, 2);
  input << 0, 0;
  a << 1, 0;
  b << 5, 0;
  const TrainingTrace trace = flat_trace(input, {0}, {a, b}, 0);  // best epoch 0
  const TrajectoryRecord rec = build_record(trace);
  CHECK(transformer_cost(rec) == doctest::Approx(1.0));  // the move to b is ignored
  CHECK(transformer_distance(rec) == doctest::Approx(1.0));
}

TEST_CASE("ratio metrics and their degenerate fallbacks") {
  Eigen::MatrixXd input(3, 2), proj(3, 2);
  input << 0, 0, 1, 0, 2, 0;
  proj << 0, 1, 1, 1, 2, 1;  // pure translation: identity optimal
  const TrainingTrace trace = flat_trace(input, {0, 0, 0}, {proj}, 0);
  const TrajectoryRecord rec = build_record(trace);
  const std::vector<Assignment> ot = ot_reference(rec);
  CHECK(monge_gap(rec, ot) == doctest::Approx(0.0));
  bool degenerate = false;
  CHECK(optimality(rec, ot, &degenerate) == doctest::Approx(1.0));
  CHECK_FALSE(degenerate);

  // stationary perfect solution: both denominators vanish
  const TrainingTrace still = flat_trace(input, {0, 0, 0}, {input}, 0);
  const TrajectoryRecord rec2 = build_record(still);
  const std::vector<Assignment> ot2 = ot_reference(rec2);
  bool flag = false;
  CHECK(optimality(rec2, ot2, &flag) == doctest::Approx(1.0));
  CHECK(flag);
  flag = false;
  CHECK(efficiency(rec2, &flag) == doctest::Approx(1.0));
  CHECK(flag);
}

TEST_CASE("accuracy metrics on hand-built probability tensors") {
  const std::vector<int> labels = {0, 1, 1};
  const auto perfect = one_hot_probs(labels, 4, 2);
  CHECK(accuracy_pointwise(perfect, labels) == doctest::Approx(1.0));
  CHECK(accuracy_instancewise(perfect, labels) == doctest::Approx(1.0));
  const auto recalls = recall_per_class(perfect, labels, 2);
  CHECK(recalls[0] == doctest::Approx(1.0));
  CHECK(recalls[1] == doctest::Approx(1.0));

  // uniform probabilities: ties break to class 0
  std::vector<Eigen::MatrixXd> uniform(2, Eigen::MatrixXd::Constant(4, 2, 0.5));
  const std::vector<int> two_labels = {0, 1};
  const auto tied = recall_per_class(uniform, two_labels, 2);
  CHECK(tied[0] == doctest::Approx(1.0));
  CHECK(tied[1] == doctest::Approx(0.0));

  // 60% of timesteps favor the true class at equal confidence
  Eigen::MatrixXd majority(5, 2);
  majority << 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9;
  const std::vector<Eigen::MatrixXd> probs = {majority};
  const std::vector<int> one_label = {0};
  CHECK(accuracy_pointwise(probs, one_label) == doctest::Approx(0.6));
  CHECK(accuracy_instancewise(probs, one_label) == doctest::Approx(1.0));

  // empty class reports NaN recall
  const auto missing = recall_per_class(probs, one_label, 2);
  CHECK(std::isnan(missing[1]));
}

TEST_CASE("accuracies agree with a direct confusion-matrix oracle") {
  Rng rng(42);
  const int n = 20, t = 3, k = 3;
  std::vector<Eigen::MatrixXd> probs;
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd m(t, k);
    for (int s = 0; s < t; ++s) {
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        m(s, c) = rng.uniform(0.01, 1.0);
        sum += m(s, c);
      }
      m.row(s) /= sum;
    }
    probs.push_back(m);
    labels.push_back(static_cast<int>(rng.uniform_int(k)));
  }

  long point_hits = 0;
  Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(k, k);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < t; ++s) {
      int arg = 0;
      for (int c = 1; c < k; ++c)
        if (probs[i](s, c) > probs[i](s, arg)) arg = c;
      point_hits += arg == labels[i];
    }
    Eigen::RowVectorXd avg = probs[i].colwise().mean();
    int arg = 0;
    for (int c = 1; c < k; ++c)
      if (avg(c) > avg(arg)) arg = c;
    confusion(labels[i], arg) += 1;
  }
  CHECK(accuracy_pointwise(probs, labels) ==
        doctest::Approx(static_cast<double>(point_hits) / (n * t)));
  CHECK(accuracy_instancewise(probs, labels) ==
        doctest::Approx(static_cast<double>(confusion.diagonal().sum()) / n));
  const auto recalls = recall_per_class(probs, labels, k);
  for (int c = 0; c < k; ++c) {
    const int row_total = confusion.row(c).sum();
    if (row_total == 0)
      CHECK(std::isnan(recalls[c]));
    else
      CHECK(recalls[c] == doctest::Approx(static_cast<double>(confusion(c, c)) / row_total));
  }
}

TEST_CASE("identity trace with a perfect classifier reports the fixed point") {
  Eigen::MatrixXd input(4, 2);
  input << 0, 0, 1, 0, 5, 5, 6, 5;
  const std::vector<int> labels = {0, 0, 1, 1};
  const TrainingTrace trace = flat_trace(input, labels, {input}, 0);
  const TrajectoryRecord rec = build_record(trace);
  const auto probs = one_hot_probs(labels, 1, 2);
  const MetricsReport rep = compute_report(rec, probs, labels, 0.5);

  CHECK(rep.accuracy_pointwise == doctest::Approx(1.0));
  CHECK(rep.accuracy_instancewise == doctest::Approx(1.0));
  CHECK(rep.matching == doctest::Approx(1.0));
  CHECK(rep.wasserstein_distance == doctest::Approx(0.0));
  CHECK(rep.transformer_distance == doctest::Approx(0.0));
  CHECK(rep.transformer_cost == doctest::Approx(0.0));
  CHECK(rep.monge_gap == doctest::Approx(0.0));
  CHECK(rep.optimality == doctest::Approx(1.0));
  CHECK(rep.efficiency == doctest::Approx(1.0));
  CHECK(rep.degenerate);
  CHECK(rep.best_epoch == doctest::Approx(0.0));
  CHECK(rep.computational_time_s == doctest::Approx(0.5));
  CHECK(rep.recalls.size() == 2);
}

TEST_CASE("metric inequalities hold on fuzzed traces") {
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(5000 + seed);
    const int n = 4 + static_cast<int>(rng.uniform_int(6));
    const int epochs = 1 + static_cast<int>(rng.uniform_int(5));
    const int k = 1 + static_cast<int>(rng.uniform_int(2));

    Eigen::MatrixXd input(n, 2);
    for (int i = 0; i < n; ++i) {
      input(i, 0) = rng.normal();
      input(i, 1) = rng.normal();
    }
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(i % k);

    // random-walk projections mimic a wandering training trajectory
    std::vector<Eigen::MatrixXd> frames;
    Eigen::MatrixXd cur = input;
    for (int e = 0; e < epochs; ++e) {
      for (int i = 0; i < n; ++i) {
        cur(i, 0) += rng.normal();
        cur(i, 1) += rng.normal();
      }
      frames.push_back(cur);
    }
    const int best = static_cast<int>(rng.uniform_int(epochs));
    const TrainingTrace trace = flat_trace(input, labels, frames, best);
    const TrajectoryRecord rec = build_record(trace);
    const std::vector<Assignment> ot = ot_reference(rec);

    const double wd = trajectory_wasserstein(rec, ot);
    const double td = transformer_distance(rec);
    const double tc = transformer_cost(rec);
    CHECK(wd <= td + 1e-9);
    CHECK(monge_gap(rec, ot) >= -1e-9);
    CHECK(optimality(rec, ot) <= 1.0 + 1e-9);
    CHECK(tc >= td - 1e-9);
    CHECK(efficiency(rec) <= 1.0 + 1e-9);
    // matching 1 exactly when the identity permutation is optimal per class
    if (matching_fraction(rec, ot) == 1.0) {
      double identity_sum = 0.0;
      for (int cls = 0; cls < rec.num_classes; ++cls)
        identity_sum +=
            (rec.class_inputs[cls] - rec.class_projections[best][cls]).rowwise().norm().sum();
      CHECK(identity_sum <= wd + 1e-9);
    }
  }
}
