// Command-line front end: simulation studies, trajectory re-analysis,
// real-CSV pipelines, and config scaffolding.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "otsa/experiments.hpp"

namespace {

using namespace otsa;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_summary(const ExperimentResult& result) {
  std::cout << "separation,metric,median,q1,q3,n_used,n_failed\n";
  for (const SummaryRow& s : summarize(result)) {
    const auto fmt = [](double v) { return std::isnan(v) ? std::string() : fmt_g9(v); };
    std::cout << fmt_g9(s.separation) << "," << s.metric << "," << fmt(s.median) << ","
              << fmt(s.q1) << "," << fmt(s.q3) << "," << s.n_used << "," << s.n_failed
              << "\n";
  }
}

int cmd_simulate(const std::string& pipeline, int classes,
                 const std::vector<double>& separations, bool separations_set, int reps,
                 bool reps_set, int epochs, bool epochs_set, std::uint64_t seed,
                 bool seed_set, double rotation, bool rotation_set,
                 const std::string& config_path, const std::string& out_dir,
                 bool out_set, bool paper_scale, int jobs, bool no_artifacts) {
  ExperimentConfig cfg = default_config(pipeline, classes);
  if (paper_scale) apply_paper_scale(cfg);
  if (!config_path.empty()) {
    cfg = config_from_json_text(read_file(config_path), cfg);
    if (paper_scale) apply_paper_scale(cfg);
  }
  if (separations_set) cfg.separations = separations;
  if (reps_set) cfg.reps = reps;
  if (epochs_set) cfg.train.epochs = epochs;
  if (seed_set) cfg.seed = seed;
  if (rotation_set) cfg.rotation_degrees = rotation;
  if (out_set) cfg.out_dir = out_dir;
  if (jobs > 0) cfg.jobs = jobs;
  if (no_artifacts) cfg.write_artifacts = false;

  const ExperimentResult result = run_experiment(cfg);
  print_summary(result);
  int failed = 0;
  for (const RepOutcome& row : result.rows) failed += !row.ok;
  std::cout << "\nwrote " << cfg.out_dir << "/reps.csv, timings.csv, summary.csv";
  if (cfg.write_artifacts && cfg.pipeline != "ot-model")
    std::cout << ", trajectory.csv, loss.csv";
  if (cfg.write_artifacts) std::cout << ", model.ckpt";
  std::cout << "\n" << (result.rows.size() - failed) << "/" << result.rows.size()
            << " repetitions succeeded\n";
  return failed == 0 ? 0 : 1;
}

int cmd_analyze(const std::string& dir, std::string trajectory_path,
                std::string loss_path, const std::string& out_path) {
  namespace fs = std::filesystem;
  if (!dir.empty()) {
    trajectory_path = (fs::path(dir) / "trajectory.csv").string();
    loss_path = (fs::path(dir) / "loss.csv").string();
  }
  const TrainingTrace trace = read_trajectory(trajectory_path, loss_path);
  const TrajectoryRecord record = build_record(trace);
  const std::vector<Assignment> ot = ot_reference(record);

  MetricsReport rep;
  rep.matching = matching_fraction(record, ot);
  rep.wasserstein_distance = trajectory_wasserstein(record, ot);
  rep.transformer_distance = transformer_distance(record);
  rep.transformer_cost = transformer_cost(record);
  rep.monge_gap = rep.transformer_distance - rep.wasserstein_distance;
  rep.optimality = optimality(record, ot, &rep.degenerate);
  rep.efficiency = efficiency(record, &rep.degenerate);
  rep.best_epoch = record.best_epoch;

  std::ostringstream csv;
  csv << "matching,wasserstein_distance,transformer_distance,transformer_cost,"
         "monge_gap,efficiency,optimality,best_epoch,degenerate\n"
      << fmt_g9(rep.matching) << "," << fmt_g9(rep.wasserstein_distance) << ","
      << fmt_g9(rep.transformer_distance) << "," << fmt_g9(rep.transformer_cost) << ","
      << fmt_g9(rep.monge_gap) << "," << fmt_g9(rep.efficiency) << ","
      << fmt_g9(rep.optimality) << "," << fmt_g9(rep.best_epoch) << ","
      << (rep.degenerate ? 1 : 0) << "\n";
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path);
    if (!out) throw InternalError("cannot write " + out_path);
    out << csv.str();
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

struct RealEval {
  double accuracy;
  std::vector<double> recalls;
  double seconds;
  double best_epoch;
};

RealEval eval_instancewise(const std::vector<int>& predicted,
                           const std::vector<int>& labels, int classes) {
  RealEval eval;
  long correct = 0;
  std::vector<long> hits(classes, 0), counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += predicted[i] == labels[i];
    ++counts[labels[i]];
    hits[labels[i]] += predicted[i] == labels[i];
  }
  eval.accuracy = static_cast<double>(correct) / labels.size();
  for (int k = 0; k < classes; ++k)
    eval.recalls.push_back(counts[k] == 0
                               ? std::numeric_limits<double>::quiet_NaN()
                               : static_cast<double>(hits[k]) / counts[k]);
  return eval;
}

std::vector<int> argmax_instancewise(const std::vector<Eigen::MatrixXd>& probs) {
  std::vector<int> out;
  for (const auto& m : probs) {
    const Eigen::RowVectorXd avg = m.colwise().mean();
    int best = 0;
    for (int c = 1; c < avg.size(); ++c)
      if (avg(c) > avg(best)) best = c;
    out.push_back(best);
  }
  return out;
}

int cmd_real_data(const std::string& csv_path, const std::string& scheme_name,
                  const std::string& pipeline, int group_rows, std::uint64_t seed,
                  const std::string& out_dir, const std::string& config_path,
                  double dummy_separation) {
  LabelScheme scheme;
  int classes;
  if (scheme_name == "binary") {
    scheme = LabelScheme::kBinary;
    classes = 2;
  } else if (scheme_name == "three") {
    scheme = LabelScheme::kThree;
    classes = 3;
  } else if (scheme_name == "four") {
    scheme = LabelScheme::kFour;
    classes = 4;
  } else {
    throw ParameterError("real data: unknown label scheme '" + scheme_name + "'");
  }

  const RealDataSplit split = ingest_real_csv(csv_path, scheme, group_rows, seed);
  const int p = split.train.features();
  std::cout << "train " << split.train.size() << " x " << split.train.timesteps()
            << " x " << p << ", test " << split.test.size() << "\n";

  // real-data defaults; a config file's transformer/ot_model sections override
  ExperimentConfig cfg = default_config(pipeline == "ot-model" ? "ot-model" : pipeline,
                                        classes);
  cfg.train.blocks = classes - 1;
  cfg.train.heads = 10;
  cfg.train.head_dim = 64;
  cfg.train.ff_dim = 32;
  cfg.train.mlp_units = {32, 32};
  cfg.train.sa_dropout = 0.1;
  cfg.train.mlp_dropout = 0.1;
  cfg.train.batch_size = 64;
  cfg.train.epochs = 100;
  cfg.train.learning_rate = 0.001;
  cfg.ot.ot_batch_size = 50;
  cfg.ot.nn_batch_size = 64;
  cfg.ot.learning_rate = 0.001;
  if (!config_path.empty()) cfg = config_from_json_text(read_file(config_path), cfg);

  RealEval eval;
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();

  if (pipeline == "ot-model") {
    OTFitConfig fit_cfg = cfg.ot;
    fit_cfg.seed = seed;
    fit_cfg.dummy = default_dummy_layout(classes, p, cfg.ot_dummy_distance);
    const auto t0 = std::chrono::steady_clock::now();
    const OTClassifierModel model = fit_ot_classifier(split.train, fit_cfg, split.scaler);
    const OTPrediction pred = predict_proba(model, split.test);
    eval = eval_instancewise(pred.instance_labels, split.test.labels, classes);
    eval.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    eval.best_epoch = model.best_epoch;
    save_checkpoint(model, ckpt);
  } else if (pipeline == "transformer" || pipeline == "pretrained") {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult trained;
    if (pipeline == "pretrained") {
      // dummy pretraining set with the training cardinality (rounded to a
      // balanced class count)
      DummyLayout dummy_layout;
      dummy_layout.base = default_dummy_layout(classes, p, dummy_separation);
      dummy_layout.rotation_degrees = 0.0;
      const int n_dummy = std::max(classes, split.train.size() / classes * classes);
      const DatasetTensor dummy = make_dummy_dataset(
          dummy_layout, n_dummy, split.train.timesteps(), mix_seed(seed, 101));
      TrainConfig phase1_cfg = tc;
      phase1_cfg.seed = mix_seed(seed, 11);
      const TrainResult phase1 =
          train_full_batch(dummy, phase1_cfg, {}, nullptr, false);
      TrainConfig phase2_cfg = tc;
      phase2_cfg.seed = mix_seed(seed, 12);
      trained = train_full_batch(split.train, phase2_cfg, freeze_mlp(phase1.model),
                                 &phase1.model, false);
    } else {
      trained = train_full_batch(split.train, tc, {}, nullptr, false);
    }
    const ModelOutputs out = model_forward(trained.model, split.test);
    eval = eval_instancewise(argmax_instancewise(out.probs), split.test.labels, classes);
    eval.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    eval.best_epoch = trained.trace.best_epoch;
    save_checkpoint(trained.model, ckpt);
  } else {
    throw ParameterError("real data: unknown pipeline '" + pipeline + "'");
  }

  const std::string results = (fs::path(out_dir) / "real_results.csv").string();
  std::ofstream out(results);
  out << "pipeline,labels,accuracy";
  for (int k = 0; k < classes; ++k) out << ",recall_" << k;
  out << ",computational_time_s,best_epoch\n";
  out << pipeline << "," << scheme_name << "," << fmt_g9(eval.accuracy);
  for (double r : eval.recalls) out << "," << (std::isnan(r) ? "" : fmt_g9(r));
  out << "," << fmt_g9(eval.seconds) << "," << fmt_g9(eval.best_epoch) << "\n";

  std::cout << "accuracy " << fmt_g9(eval.accuracy) << " (";
  for (int k = 0; k < classes; ++k)
    std::cout << "recall_" << k << " " << fmt_g9(eval.recalls[k])
              << (k + 1 < classes ? ", " : "");
  std::cout << ") in " << fmt_g9(eval.seconds) << " s\nwrote " << results << " and "
            << ckpt << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-attention trajectory diagnostics and OT-based classification"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a simulation study");
  std::string pipeline = "transformer", config_path, out_dir = "out";
  int classes = 2, reps = 20, epochs = 60, jobs = 0;
  std::uint64_t seed = 1;
  double rotation = 0.0;
  std::vector<double> separations = {2.0, 4.0, 6.0, 8.0};
  bool paper_scale = false, no_artifacts = false;
  sim->add_option("--pipeline", pipeline, "transformer | pretrained | ot-model");
  sim->add_option("--classes", classes, "number of classes (2 or 3 in the studies)");
  auto* sep_opt = sim->add_option("--separations", separations,
                                  "class separations (Gaussian W2)")
                      ->delimiter(',');
  auto* reps_opt = sim->add_option("--reps", reps, "repetitions per separation");
  auto* epochs_opt = sim->add_option("--epochs", epochs, "training epochs");
  auto* seed_opt = sim->add_option("--seed", seed, "base seed");
  auto* rot_opt = sim->add_option("--rotation", rotation,
                                  "dummy rotation in degrees (pretrained pipeline)");
  sim->add_option("--config", config_path, "JSON config file (see dump-config)");
  auto* out_opt = sim->add_option("--out", out_dir, "output directory");
  sim->add_flag("--paper-scale", paper_scale,
                "full 90x20x2, 200 epochs, 100 repetitions protocol");
  sim->add_option("--jobs", jobs, "worker threads (default: hardware)");
  sim->add_flag("--no-artifacts", no_artifacts,
                "skip trajectory.csv / loss.csv / model.ckpt");

  // analyze
  auto* ana = app.add_subcommand("analyze", "Recompute metrics from a trajectory dump");
  std::string ana_dir, ana_traj, ana_loss, ana_out;
  ana->add_option("--dir", ana_dir, "directory holding trajectory.csv and loss.csv");
  ana->add_option("--trajectory", ana_traj, "trajectory.csv path");
  ana->add_option("--loss", ana_loss, "loss.csv path");
  ana->add_option("--out", ana_out, "write metrics CSV here instead of stdout");

  // real-data
  auto* real = app.add_subcommand("real-data", "Train and evaluate on a labeled CSV");
  std::string real_csv, real_scheme = "binary", real_pipeline = "ot-model",
              real_out = "out", real_config;
  int group_rows = 1;
  std::uint64_t real_seed = 1;
  double dummy_separation = 2.0;
  real->add_option("--csv", real_csv, "input CSV with feature columns and label y")
      ->required();
  real->add_option("--labels", real_scheme, "binary | three | four");
  real->add_option("--pipeline", real_pipeline, "transformer | pretrained | ot-model");
  real->add_option("--group-rows", group_rows,
                   "consecutive same-label rows per instance (default 1)");
  real->add_option("--seed", real_seed, "split/training seed");
  real->add_option("--out", real_out, "output directory");
  real->add_option("--config", real_config, "JSON config overriding model parameters");
  real->add_option("--dummy-separation", dummy_separation,
                   "dummy class distance for pretraining on real data");

  // dump-config
  auto* dump = app.add_subcommand("dump-config", "Print a config file to edit");
  std::string dump_pipeline = "transformer", dump_out;
  int dump_classes = 2;
  bool dump_paper = false;
  dump->add_option("--pipeline", dump_pipeline, "transformer | pretrained | ot-model");
  dump->add_option("--classes", dump_classes, "number of classes");
  dump->add_flag("--paper-scale", dump_paper, "full-scale protocol defaults");
  dump->add_option("--out", dump_out, "write to file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      return cmd_simulate(pipeline, classes, separations, sep_opt->count() > 0, reps,
                          reps_opt->count() > 0, epochs, epochs_opt->count() > 0, seed,
                          seed_opt->count() > 0, rotation, rot_opt->count() > 0,
                          config_path, out_dir, out_opt->count() > 0, paper_scale, jobs,
                          no_artifacts);
    }
    if (ana->parsed()) {
      if (ana_dir.empty() && (ana_traj.empty() || ana_loss.empty()))
        throw ParameterError("analyze: pass --dir or both --trajectory and --loss");
      return cmd_analyze(ana_dir, ana_traj, ana_loss, ana_out);
    }
    if (real->parsed())
      return cmd_real_data(real_csv, real_scheme, real_pipeline, group_rows, real_seed,
                           real_out, real_config, dummy_separation);
    if (dump->parsed()) {
      ExperimentConfig cfg = default_config(dump_pipeline, dump_classes);
      if (dump_paper) apply_paper_scale(cfg);
      const std::string text = config_to_json_text(cfg);
      if (dump_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(dump_out);
        if (!out) throw InternalError("cannot write " + dump_out);
        out << text;
        std::cout << "wrote " << dump_out << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
