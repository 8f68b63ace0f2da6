#include "otsa/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace otsa {

namespace {

using nlohmann::json;

void validate_pipeline(const std::string& pipeline) {
  if (pipeline != "transformer" && pipeline != "pretrained" && pipeline != "ot-model")
    throw ParameterError("experiment: unknown pipeline '" + pipeline + "'");
}

std::string fmt_csv(double x) { return std::isnan(x) ? "" : fmt_g9(x); }

}  // namespace

ExperimentConfig default_config(const std::string& pipeline, int classes) {
  validate_pipeline(pipeline);
  if (classes < 2) throw ParameterError("experiment: classes < 2");
  ExperimentConfig cfg;
  cfg.pipeline = pipeline;
  cfg.classes = classes;
  cfg.train.blocks = classes - 1;
  return cfg;
}

void apply_paper_scale(ExperimentConfig& cfg) {
  cfg.instances = 90;
  cfg.timesteps = 20;
  cfg.reps = 100;
  cfg.train.epochs = 200;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json doc;
  doc["pipeline"] = cfg.pipeline;
  doc["classes"] = cfg.classes;
  doc["separations"] = cfg.separations;
  doc["repetitions"] = cfg.reps;
  doc["dataset"] = {{"instances", cfg.instances},
                    {"timesteps", cfg.timesteps},
                    {"features", cfg.features}};
  doc["transformer"] = {{"epochs", cfg.train.epochs},
                        {"blocks", cfg.train.blocks},
                        {"heads", cfg.train.heads},
                        {"head_dim", cfg.train.head_dim},
                        {"ff_dim", cfg.train.ff_dim},
                        {"mlp_units", cfg.train.mlp_units},
                        {"sa_dropout", cfg.train.sa_dropout},
                        {"mlp_dropout", cfg.train.mlp_dropout},
                        {"learning_rate", cfg.train.learning_rate},
                        {"optimizer", cfg.train.optimizer},
                        {"batch_size", cfg.train.batch_size},
                        {"norm_placement", cfg.train.norm_placement},
                        {"residual_zero_init", cfg.train.residual_zero_init}};
  doc["pretraining"] = {{"rotation_degrees", cfg.rotation_degrees},
                        {"epochs", cfg.pretrain_epochs},
                        {"scope", cfg.pretrain_scope}};
  doc["ot_model"] = {{"mlp_epochs", cfg.ot.mlp_epochs},
                     {"mlp_units", cfg.ot.mlp_units},
                     {"dropout", cfg.ot.dropout},
                     {"learning_rate", cfg.ot.learning_rate},
                     {"ot_batch_size", cfg.ot.ot_batch_size},
                     {"nn_batch_size", cfg.ot.nn_batch_size},
                     {"dummy_distance", cfg.ot_dummy_distance}};
  doc["seed"] = cfg.seed;
  doc["output_dir"] = cfg.out_dir;
  doc["jobs"] = cfg.jobs;
  return doc.dump(2) + "\n";
}

ExperimentConfig config_from_json_text(const std::string& text,
                                       const ExperimentConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg = base;
  try {
    cfg.pipeline = doc.value("pipeline", cfg.pipeline);
    cfg.classes = doc.value("classes", cfg.classes);
    if (doc.contains("separations"))
      cfg.separations = doc.at("separations").get<std::vector<double>>();
    cfg.reps = doc.value("repetitions", cfg.reps);
    if (doc.contains("dataset")) {
      const json& d = doc.at("dataset");
      cfg.instances = d.value("instances", cfg.instances);
      cfg.timesteps = d.value("timesteps", cfg.timesteps);
      cfg.features = d.value("features", cfg.features);
    }
    if (doc.contains("transformer")) {
      const json& t = doc.at("transformer");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.blocks = t.value("blocks", cfg.train.blocks);
      cfg.train.heads = t.value("heads", cfg.train.heads);
      cfg.train.head_dim = t.value("head_dim", cfg.train.head_dim);
      cfg.train.ff_dim = t.value("ff_dim", cfg.train.ff_dim);
      if (t.contains("mlp_units"))
        cfg.train.mlp_units = t.at("mlp_units").get<std::vector<int>>();
      cfg.train.sa_dropout = t.value("sa_dropout", cfg.train.sa_dropout);
      cfg.train.mlp_dropout = t.value("mlp_dropout", cfg.train.mlp_dropout);
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.optimizer = t.value("optimizer", cfg.train.optimizer);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.norm_placement = t.value("norm_placement", cfg.train.norm_placement);
      cfg.train.residual_zero_init =
          t.value("residual_zero_init", cfg.train.residual_zero_init);
    }
    if (doc.contains("pretraining")) {
      const json& p = doc.at("pretraining");
      cfg.rotation_degrees = p.value("rotation_degrees", cfg.rotation_degrees);
      cfg.pretrain_epochs = p.value("epochs", cfg.pretrain_epochs);
      cfg.pretrain_scope = p.value("scope", cfg.pretrain_scope);
    }
    if (doc.contains("ot_model")) {
      const json& o = doc.at("ot_model");
      cfg.ot.mlp_epochs = o.value("mlp_epochs", cfg.ot.mlp_epochs);
      if (o.contains("mlp_units"))
        cfg.ot.mlp_units = o.at("mlp_units").get<std::vector<int>>();
      cfg.ot.dropout = o.value("dropout", cfg.ot.dropout);
      cfg.ot.learning_rate = o.value("learning_rate", cfg.ot.learning_rate);
      cfg.ot.ot_batch_size = o.value("ot_batch_size", cfg.ot.ot_batch_size);
      cfg.ot.nn_batch_size = o.value("nn_batch_size", cfg.ot.nn_batch_size);
      cfg.ot_dummy_distance = o.value("dummy_distance", cfg.ot_dummy_distance);
    }
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.out_dir = doc.value("output_dir", cfg.out_dir);
    cfg.jobs = doc.value("jobs", cfg.jobs);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: bad field type: ") + e.what());
  }
  validate_pipeline(cfg.pipeline);
  return cfg;
}

namespace {

struct FirstRepArtifacts {
  std::optional<TrainingTrace> trace;
  std::optional<TransformerModel> model;
  std::optional<OTClassifierModel> ot_model;
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MetricsReport transformer_rep(const ExperimentConfig& cfg, const DatasetTensor& data,
                              const Standardizer& scaler, std::uint64_t rep_seed,
                              const ClassLayout& layout, FirstRepArtifacts* artifacts) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult trained;
  if (cfg.pipeline == "pretrained") {
    DummyLayout dummy_layout;
    dummy_layout.base = layout;
    dummy_layout.rotation_degrees = cfg.rotation_degrees;
    const DatasetTensor dummy_raw = make_dummy_dataset(
        dummy_layout, cfg.instances, cfg.timesteps, mix_seed(rep_seed, 101));
    const DatasetTensor dummy = scaler.apply(dummy_raw);

    TrainConfig phase1_cfg = cfg.train;
    phase1_cfg.seed = mix_seed(rep_seed, 11);
    if (cfg.pretrain_epochs > 0) phase1_cfg.epochs = cfg.pretrain_epochs;
    FrozenSet phase1_frozen;
    if (cfg.pretrain_scope == "mlp-only") {
      Rng probe_rng(0);
      TransformerModel probe(data.features(), cfg.classes, phase1_cfg, probe_rng);
      for (Param* p : probe.parameters())
        if (p->name.rfind("head.", 0) != 0) phase1_frozen.insert(p->name);
    } else if (cfg.pretrain_scope != "full") {
      throw ParameterError("experiment: unknown pretrain scope '" +
                           cfg.pretrain_scope + "'");
    }
    const TrainResult phase1 = train_full_batch(dummy, phase1_cfg, phase1_frozen,
                                                nullptr, /*record_projections=*/false);

    TrainConfig phase2_cfg = cfg.train;
    phase2_cfg.seed = mix_seed(rep_seed, 12);
    trained = train_full_batch(data, phase2_cfg, freeze_mlp(phase1.model), &phase1.model);
  } else {
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = rep_seed;
    trained = train_full_batch(data, train_cfg);
  }

  const ModelOutputs out = model_forward(trained.model, data);
  const TrajectoryRecord record = build_record(trained.trace);
  MetricsReport report = compute_report(record, out.probs, data.labels, 0.0);
  report.computational_time_s = seconds_since(t0);

  if (artifacts != nullptr) {
    artifacts->model = std::move(trained.model);
    artifacts->trace = std::move(trained.trace);
  }
  return report;
}

MetricsReport ot_model_rep(const ExperimentConfig& cfg, const DatasetTensor& data,
                           const Standardizer& scaler, std::uint64_t rep_seed,
                           FirstRepArtifacts* artifacts) {
  const auto t0 = std::chrono::steady_clock::now();
  OTFitConfig fit_cfg = cfg.ot;
  fit_cfg.seed = rep_seed;
  if (fit_cfg.dummy.specs.empty())
    fit_cfg.dummy = default_dummy_layout(cfg.classes, data.features(), cfg.ot_dummy_distance);
  const OTClassifierModel model = fit_ot_classifier(data, fit_cfg, scaler);
  const OTPrediction pred = predict_proba(model, data);

  MetricsReport report;
  report.accuracy_pointwise = accuracy_pointwise(pred.point_probs, data.labels);
  long correct = 0;
  std::vector<long> hits(cfg.classes, 0), counts(cfg.classes, 0);
  for (int i = 0; i < data.size(); ++i) {
    correct += pred.instance_labels[i] == data.labels[i];
    ++counts[data.labels[i]];
    hits[data.labels[i]] += pred.instance_labels[i] == data.labels[i];
  }
  report.accuracy_instancewise = static_cast<double>(correct) / data.size();
  report.recalls.resize(cfg.classes);
  for (int k = 0; k < cfg.classes; ++k)
    report.recalls[k] = counts[k] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                       : static_cast<double>(hits[k]) / counts[k];
  report.best_epoch = model.best_epoch;
  report.computational_time_s = seconds_since(t0);

  if (artifacts != nullptr) artifacts->ot_model = model;
  return report;
}

MetricsReport run_one_rep(const ExperimentConfig& cfg, double separation, int rep,
                          FirstRepArtifacts* artifacts) {
  const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
  const ClassLayout layout = make_layout(cfg.classes, separation, cfg.features);
  const DatasetTensor raw =
      sample_dataset(layout, cfg.instances, cfg.timesteps, rep_seed);
  auto [data, scaler] = standardize(raw);

  if (cfg.pipeline == "ot-model")
    return ot_model_rep(cfg, data, scaler, rep_seed, artifacts);
  return transformer_rep(cfg, data, scaler, rep_seed, layout, artifacts);
}

}  // namespace

namespace {

// Worker pool over separation x repetition; artifacts, when requested, are
// captured by whichever worker draws global index 0.
ExperimentResult simulate_impl(const ExperimentConfig& cfg, FirstRepArtifacts* artifacts) {
  validate_pipeline(cfg.pipeline);
  if (cfg.reps < 1) throw ParameterError("experiment: reps < 1");
  if (cfg.separations.empty()) throw ParameterError("experiment: no separations");
  for (double s : cfg.separations)
    if (s <= 0.0) throw ParameterError("experiment: separation <= 0");

  const int total = static_cast<int>(cfg.separations.size()) * cfg.reps;
  ExperimentResult result;
  result.classes = cfg.classes;
  result.rows.resize(total);

  int jobs = cfg.jobs > 0 ? cfg.jobs
                          : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::clamp(jobs, 1, total);

  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
      const int sep_idx = i / cfg.reps;
      const int rep = i % cfg.reps;
      RepOutcome& row = result.rows[i];
      row.separation = cfg.separations[sep_idx];
      row.rep = rep;
      try {
        row.report = run_one_rep(cfg, row.separation, rep, i == 0 ? artifacts : nullptr);
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int w = 1; w < jobs; ++w) pool.emplace_back(worker);
  worker();
  for (auto& thread : pool) thread.join();
  return result;
}

}  // namespace

ExperimentResult run_simulation(const ExperimentConfig& cfg) {
  return simulate_impl(cfg, nullptr);
}

double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

namespace {

std::vector<std::pair<std::string, double>> metric_columns(const MetricsReport& r,
                                                           int classes) {
  std::vector<std::pair<std::string, double>> cols = {
      {"accuracy_pointwise", r.accuracy_pointwise},
      {"matching", r.matching},
      {"wasserstein_distance", r.wasserstein_distance},
      {"transformer_distance", r.transformer_distance},
      {"transformer_cost", r.transformer_cost},
      {"monge_gap", r.monge_gap},
      {"efficiency", r.efficiency},
      {"optimality", r.optimality},
      {"best_epoch", r.best_epoch},
      {"accuracy_instancewise", r.accuracy_instancewise},
  };
  for (int k = 0; k < classes; ++k) {
    const double value = k < static_cast<int>(r.recalls.size())
                             ? r.recalls[k]
                             : std::numeric_limits<double>::quiet_NaN();
    cols.push_back({"recall_" + std::to_string(k), value});
  }
  return cols;
}

}  // namespace

std::vector<SummaryRow> summarize(const ExperimentResult& result) {
  // separations in first-appearance order
  std::vector<double> separations;
  for (const RepOutcome& row : result.rows)
    if (separations.empty() || separations.back() != row.separation)
      separations.push_back(row.separation);

  std::vector<SummaryRow> out;
  for (double sep : separations) {
    std::vector<const RepOutcome*> ok_rows;
    int failed = 0;
    for (const RepOutcome& row : result.rows) {
      if (row.separation != sep) continue;
      if (row.ok)
        ok_rows.push_back(&row);
      else
        ++failed;
    }

    std::vector<std::string> names = {"accuracy_pointwise", "computational_time_s"};
    {
      MetricsReport probe;
      for (const auto& [name, value] : metric_columns(probe, result.classes))
        if (name != "accuracy_pointwise") names.push_back(name);
    }

    for (const std::string& name : names) {
      std::vector<double> values;
      for (const RepOutcome* row : ok_rows) {
        double v = std::numeric_limits<double>::quiet_NaN();
        if (name == "computational_time_s") {
          v = row->report.computational_time_s;
        } else {
          for (const auto& [n, value] : metric_columns(row->report, result.classes))
            if (n == name) v = value;
        }
        if (!std::isnan(v)) values.push_back(v);
      }
      SummaryRow s;
      s.separation = sep;
      s.metric = name;
      s.n_used = static_cast<int>(values.size());
      s.n_failed = failed;
      s.median = quantile_linear(values, 0.5);
      s.q1 = quantile_linear(values, 0.25);
      s.q3 = quantile_linear(values, 0.75);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  {
    std::ofstream reps(fs::path(cfg.out_dir) / "reps.csv");
    if (!reps) throw InternalError("experiment: cannot write reps.csv");
    reps << "separation,rep,accuracy_pointwise,matching,wasserstein_distance,"
            "transformer_distance,transformer_cost,monge_gap,efficiency,optimality,"
            "best_epoch,accuracy_instancewise";
    for (int k = 0; k < result.classes; ++k) reps << ",recall_" << k;
    reps << ",degenerate,status\n";
    for (const RepOutcome& row : result.rows) {
      reps << fmt_g9(row.separation) << "," << row.rep;
      for (const auto& [name, value] : metric_columns(row.report, result.classes))
        reps << "," << (row.ok ? fmt_csv(value) : "");
      reps << "," << (row.ok ? (row.report.degenerate ? "1" : "0") : "");
      if (row.ok) {
        reps << ",ok\n";
      } else {
        std::string msg = row.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        reps << ",error: " << msg << "\n";
      }
    }
  }

  {
    std::ofstream timings(fs::path(cfg.out_dir) / "timings.csv");
    timings << "separation,rep,computational_time_s\n";
    for (const RepOutcome& row : result.rows)
      timings << fmt_g9(row.separation) << "," << row.rep << ","
              << (row.ok ? fmt_csv(row.report.computational_time_s) : "") << "\n";
  }

  {
    std::ofstream summary(fs::path(cfg.out_dir) / "summary.csv");
    summary << "separation,metric,median,q1,q3,n_used,n_failed\n";
    for (const SummaryRow& s : summarize(result))
      summary << fmt_g9(s.separation) << "," << s.metric << "," << fmt_csv(s.median)
              << "," << fmt_csv(s.q1) << "," << fmt_csv(s.q3) << "," << s.n_used << ","
              << s.n_failed << "\n";
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  FirstRepArtifacts artifacts;
  ExperimentResult result =
      simulate_impl(cfg, cfg.write_artifacts ? &artifacts : nullptr);
  write_experiment_outputs(cfg, result);

  namespace fs = std::filesystem;
  if (artifacts.trace.has_value())
    dump_trajectory(*artifacts.trace, fs::path(cfg.out_dir) / "trajectory.csv",
                    fs::path(cfg.out_dir) / "loss.csv");
  if (artifacts.model.has_value())
    save_checkpoint(*artifacts.model, (fs::path(cfg.out_dir) / "model.ckpt").string());
  if (artifacts.ot_model.has_value())
    save_checkpoint(*artifacts.ot_model, (fs::path(cfg.out_dir) / "model.ckpt").string());
  return result;
}

void dump_trajectory(const TrainingTrace& trace, const std::string& trajectory_path,
                     const std::string& loss_path) {
  const int n = static_cast<int>(trace.input.size());
  if (n == 0) throw ParameterError("trajectory dump: empty trace");
  const int t = static_cast<int>(trace.input[0].rows());
  const int p = static_cast<int>(trace.input[0].cols());

  std::ofstream tf(trajectory_path);
  if (!tf) throw InternalError("trajectory dump: cannot write " + trajectory_path);
  tf << "epoch,instance,timestep,class";
  for (int f = 0; f < p; ++f) tf << ",x" << f + 1;
  tf << "\n";
  const auto write_frame = [&](int epoch, const std::vector<Eigen::MatrixXd>& frame) {
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < t; ++s) {
        tf << epoch << "," << i << "," << s << "," << trace.labels[i];
        for (int f = 0; f < p; ++f) tf << "," << fmt_g9(frame[i](s, f));
        tf << "\n";
      }
  };
  write_frame(0, trace.input);
  for (std::size_t e = 0; e < trace.projections.size(); ++e)
    write_frame(static_cast<int>(e) + 1, trace.projections[e]);
  if (!tf) throw InternalError("trajectory dump: write failed for " + trajectory_path);

  std::ofstream lf(loss_path);
  if (!lf) throw InternalError("trajectory dump: cannot write " + loss_path);
  lf << "epoch,loss\n";
  for (std::size_t e = 0; e < trace.losses.size(); ++e)
    lf << e + 1 << "," << fmt_g9(trace.losses[e]) << "\n";
}

TrainingTrace read_trajectory(const std::string& trajectory_path,
                              const std::string& loss_path) {
  std::ifstream lf(loss_path);
  if (!lf) throw ParameterError("trajectory read: cannot open " + loss_path);
  std::string line;
  if (!std::getline(lf, line) || line.rfind("epoch,loss", 0) != 0)
    throw ParameterError("trajectory read: bad loss header in " + loss_path);
  std::vector<double> losses;
  int line_no = 1;
  while (std::getline(lf, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    try {
      std::getline(ss, cell, ',');
      const int epoch = std::stoi(cell);
      std::getline(ss, cell, ',');
      const double loss = std::stod(cell);
      if (epoch != static_cast<int>(losses.size()) + 1)
        throw std::invalid_argument("epoch order");
      losses.push_back(loss);
    } catch (const std::exception&) {
      throw ParameterError("trajectory read: parse error at " + loss_path + ":" +
                           std::to_string(line_no));
    }
  }
  if (losses.empty()) throw ParameterError("trajectory read: no losses in " + loss_path);

  std::ifstream tf(trajectory_path);
  if (!tf) throw ParameterError("trajectory read: cannot open " + trajectory_path);
  if (!std::getline(tf, line) || line.rfind("epoch,instance,timestep,class", 0) != 0)
    throw ParameterError("trajectory read: bad header in " + trajectory_path);
  const int p = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 3;
  if (p < 1) throw ParameterError("trajectory read: no feature columns");

  struct Row {
    int epoch, instance, timestep, label;
    Eigen::VectorXd x;
  };
  std::vector<Row> rows;
  int n = 0, t = 0, epochs = 0;
  line_no = 1;
  while (std::getline(tf, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Row r;
    r.x.resize(p);
    try {
      std::getline(ss, cell, ',');
      r.epoch = std::stoi(cell);
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
      throw ParameterError("trajectory read: parse error at " + trajectory_path + ":" +
                           std::to_string(line_no));
    }
    n = std::max(n, r.instance + 1);
    t = std::max(t, r.timestep + 1);
    epochs = std::max(epochs, r.epoch);
    rows.push_back(std::move(r));
  }
  if (epochs != static_cast<int>(losses.size()))
    throw ParameterError("trajectory read: " + std::to_string(epochs) +
                         " projection epochs vs " + std::to_string(losses.size()) +
                         " losses");
  if (static_cast<long>(rows.size()) != static_cast<long>(epochs + 1) * n * t)
    throw ParameterError("trajectory read: expected " +
                         std::to_string(static_cast<long>(epochs + 1) * n * t) +
                         " rows, found " + std::to_string(rows.size()));

  TrainingTrace trace;
  trace.input.assign(n, Eigen::MatrixXd::Zero(t, p));
  trace.projections.assign(epochs, std::vector<Eigen::MatrixXd>(n, Eigen::MatrixXd::Zero(t, p)));
  trace.labels.assign(n, -1);
  for (const Row& r : rows) {
    if (r.epoch == 0)
      trace.input[r.instance].row(r.timestep) = r.x.transpose();
    else
      trace.projections[r.epoch - 1][r.instance].row(r.timestep) = r.x.transpose();
    if (trace.labels[r.instance] >= 0 && trace.labels[r.instance] != r.label)
      throw ParameterError("trajectory read: instance " + std::to_string(r.instance) +
                           " has conflicting labels");
    trace.labels[r.instance] = r.label;
  }
  trace.losses = losses;
  trace.best_epoch = 0;
  for (int e = 1; e < epochs; ++e)
    if (losses[e] < losses[trace.best_epoch]) trace.best_epoch = e;
  return trace;
}

RealDataSplit ingest_real_csv(const std::string& path, LabelScheme scheme,
                              int group_rows, std::uint64_t seed) {
  if (group_rows < 1) throw ParameterError("real data: group size < 1");
  std::ifstream in(path);
  if (!in) throw ParameterError("real data: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParameterError("real data: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int label_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == "y" || header[c] == "Y") label_col = static_cast<int>(c);
  if (label_col < 0) label_col = static_cast<int>(header.size()) - 1;  // last column
  const int p = static_cast<int>(header.size()) - 1;
  if (p < 1) throw ParameterError("real data: no feature columns in " + path);

  struct Row {
    Eigen::VectorXd x;
    int label = -1;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Row r;
    r.x.resize(p);
    int feature = 0;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
      if (!std::getline(ss, cell, ','))
        throw ParameterError("real data: missing column at " + path + ":" +
                             std::to_string(line_no));
      try {
        if (c == label_col) {
          std::size_t used = 0;
          const int y = std::stoi(cell, &used);
          if (used != cell.size() || y < 0 || y > 3)
            throw std::invalid_argument("label");
          r.label = y;
        } else {
          r.x[feature++] = std::stod(cell);
        }
      } catch (const std::exception&) {
        throw ParameterError("real data: bad value '" + cell + "' at " + path + ":" +
                             std::to_string(line_no));
      }
    }
    switch (scheme) {
      case LabelScheme::kBinary:
        r.label = r.label > 0 ? 1 : 0;
        break;
      case LabelScheme::kThree:
        if (r.label == 3) continue;  // dropped
        break;
      case LabelScheme::kFour:
        break;
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParameterError("real data: no usable rows in " + path);

  // group runs of consecutive same-label rows; leftovers shorter than the
  // group size are dropped
  DatasetTensor all;
  std::size_t i = 0;
  while (i + group_rows <= rows.size()) {
    bool same = true;
    for (int g = 1; g < group_rows; ++g)
      if (rows[i + g].label != rows[i].label) {
        same = false;
        i += g;  // restart at the label change
        break;
      }
    if (!same) continue;
    Eigen::MatrixXd inst(group_rows, p);
    for (int g = 0; g < group_rows; ++g) inst.row(g) = rows[i + g].x.transpose();
    all.instances.push_back(std::move(inst));
    all.labels.push_back(rows[i].label);
    i += group_rows;
  }
  if (all.size() == 0)
    throw ParameterError("real data: no instance groups of size " +
                         std::to_string(group_rows));

  // stratified 80/20 split
  const int num_classes = all.num_classes();
  std::vector<std::vector<int>> by_class(num_classes);
  for (int idx = 0; idx < all.size(); ++idx) by_class[all.labels[idx]].push_back(idx);
  Rng split_rng(mix_seed(seed, 7));
  std::vector<char> in_test(all.size(), 0);
  for (auto& members : by_class) {
    split_rng.shuffle(members);
    const long n_test = std::lround(0.2 * static_cast<double>(members.size()));
    for (long j = 0; j < n_test; ++j) in_test[members[j]] = 1;
  }

  DatasetTensor train_raw, test_raw;
  for (int idx = 0; idx < all.size(); ++idx) {
    auto& dst = in_test[idx] ? test_raw : train_raw;
    dst.instances.push_back(all.instances[idx]);
    dst.labels.push_back(all.labels[idx]);
  }
  if (train_raw.size() == 0 || test_raw.size() == 0)
    throw ParameterError("real data: split produced an empty side");

  RealDataSplit split;
  auto [train_std, scaler] = standardize(train_raw);
  split.train = std::move(train_std);
  split.scaler = scaler;
  split.test = scaler.apply(test_raw);
  return split;
}

}  // namespace otsa
