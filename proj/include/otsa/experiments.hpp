/**
 * @file experiments.hpp
 * @brief Simulation orchestration: pipeline configs, seeded repetitions on a
 *        worker pool, per-repetition and summary CSVs, trajectory dumps, and
 *        real-CSV ingestion.
 */

#ifndef OTSA_EXPERIMENTS_HPP
#define OTSA_EXPERIMENTS_HPP

#include <optional>
#include <string>
#include <vector>

#include "otsa/analysis.hpp"
#include "otsa/checkpoint.hpp"
#include "otsa/nn.hpp"
#include "otsa/ot_classifier.hpp"
#include "otsa/synthetic.hpp"

namespace otsa {

struct ExperimentConfig {
  std::string pipeline = "transformer";  ///< transformer | pretrained | ot-model
  int classes = 2;
  std::vector<double> separations = {2.0, 4.0, 6.0, 8.0};
  int reps = 20;
  int instances = 30;
  int timesteps = 10;
  int features = 2;
  TrainConfig train;
  OTFitConfig ot;
  double ot_dummy_distance = 10.0;
  double rotation_degrees = 0.0;
  int pretrain_epochs = 0;  ///< 0 = same as train.epochs
  /// "full": phase 1 trains the whole model on dummy data; "mlp-only":
  /// phase 1 trains just the head, attention stack held at initialization.
  std::string pretrain_scope = "full";
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int jobs = 0;  ///< worker threads; 0 = hardware concurrency
  bool write_artifacts = true;  ///< trajectory/loss/model files for the first rep
};

/// Desk-scale defaults for a pipeline and class count (30x10x2, 60 epochs,
/// 20 repetitions; encoder blocks default to classes - 1).
ExperimentConfig default_config(const std::string& pipeline, int classes);

/// Restores the full-size protocol: 90x20x2 datasets, 200 epochs, 100 reps.
void apply_paper_scale(ExperimentConfig& cfg);

ExperimentConfig config_from_json_text(const std::string& text,
                                       const ExperimentConfig& base);
std::string config_to_json_text(const ExperimentConfig& cfg);

struct RepOutcome {
  double separation = 0.0;
  int rep = 0;
  bool ok = false;
  std::string error;
  MetricsReport report;
};

struct ExperimentResult {
  std::vector<RepOutcome> rows;  ///< separation-major, repetition-minor order
  int classes = 0;
};

/// Runs every separation x repetition on the worker pool. Row order (and
/// every metric) is independent of scheduling; only wall-clock timings vary
/// between runs.
ExperimentResult run_simulation(const ExperimentConfig& cfg);

/// run_simulation plus all file outputs under cfg.out_dir: reps.csv,
/// timings.csv, summary.csv, and for the first repetition trajectory.csv,
/// loss.csv, and model.ckpt (pipeline permitting).
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes reps.csv (deterministic bytes), timings.csv, and summary.csv.
void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentResult& result);

/// One summary row: quartiles by linear interpolation between order
/// statistics over finite values of successful repetitions.
struct SummaryRow {
  double separation;
  std::string metric;
  double median, q1, q3;
  int n_used;
  int n_failed;
};

std::vector<SummaryRow> summarize(const ExperimentResult& result);

/// Linear-interpolation quantile of an unsorted sample (R default method).
double quantile_linear(std::vector<double> values, double q);

/// Long-format trace dump: trajectory.csv rows are epoch,instance,timestep,
/// class,x1..xp with epoch 0 holding the scaled input; loss.csv rows are
/// epoch,loss for epochs 1..E. 9 significant digits.
void dump_trajectory(const TrainingTrace& trace, const std::string& trajectory_path,
                     const std::string& loss_path);

/// Rebuilds a trace from dump_trajectory files (best epoch = argmin loss).
TrainingTrace read_trajectory(const std::string& trajectory_path,
                              const std::string& loss_path);

enum class LabelScheme { kBinary, kThree, kFour };

struct RealDataSplit {
  DatasetTensor train;
  DatasetTensor test;
  Standardizer scaler;  ///< fitted on train, already applied to both
};

/// Reads a feature CSV with an integer label column y in {0,1,2,3}, applies
/// the label scheme (binary: y>0 -> 1; three: drop y==3; four: keep all),
/// groups runs of group_rows consecutive same-label rows into instances,
/// and splits 80/20 stratified by label under the seed.
RealDataSplit ingest_real_csv(const std::string& path, LabelScheme scheme,
                              int group_rows, std::uint64_t seed);

}  // namespace otsa

#endif  // OTSA_EXPERIMENTS_HPP
