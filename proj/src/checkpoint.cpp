#include "otsa/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace otsa {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json entry;
  entry["rows"] = m.rows();
  entry["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  entry["data"] = std::move(data);
  return entry;
}

Eigen::MatrixXd matrix_from_json(const json& entry) {
  const int rows = entry.at("rows").get<int>();
  const int cols = entry.at("cols").get<int>();
  const auto data = entry.at("data").get<std::vector<double>>();
  if (static_cast<int>(data.size()) != rows * cols)
    throw ParameterError("checkpoint: array length does not match its shape");
  Eigen::MatrixXd m(rows, cols);
  std::size_t i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = data[i++];
  return m;
}

json params_to_json(const std::vector<const Param*>& params) {
  json arrays = json::object();
  for (const Param* p : params) arrays[p->name] = matrix_to_json(p->value);
  return arrays;
}

void params_from_json(const json& arrays, std::vector<Param*>& params) {
  for (Param* p : params) {
    if (!arrays.contains(p->name))
      throw ParameterError("checkpoint: missing array '" + p->name + "'");
    Eigen::MatrixXd value = matrix_from_json(arrays.at(p->name));
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
      throw ParameterError("checkpoint: shape mismatch for '" + p->name + "'");
    p->value = std::move(value);
  }
}

json load_file(const std::string& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw ParameterError("checkpoint: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParameterError("checkpoint: " + path + " is not valid JSON: " + e.what());
  }
  if (doc.value("kind", "") != kind)
    throw ParameterError("checkpoint: " + path + " holds '" + doc.value("kind", "?") +
                         "', expected '" + kind + "'");
  return doc;
}

void write_file(const json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InternalError("checkpoint: cannot write " + path);
  out << doc.dump(1) << "\n";
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::string& path) {
  json doc;
  doc["kind"] = "transformer";
  doc["format_version"] = 1;
  json meta;
  meta["features"] = model.features();
  meta["classes"] = model.classes();
  meta["blocks"] = model.blocks.size();
  meta["heads"] = model.blocks.at(0).attn.heads;
  meta["head_dim"] = model.blocks.at(0).attn.head_dim;
  meta["ff_dim"] = model.blocks.at(0).ff.w1.value.cols();
  meta["mlp_units"] = model.head.hidden_units;
  meta["sa_dropout"] = model.sa_dropout;
  meta["mlp_dropout"] = model.mlp_dropout;
  meta["norm_placement"] = model.blocks.at(0).pre_norm ? "pre" : "post";
  doc["meta"] = std::move(meta);
  doc["arrays"] = params_to_json(model.parameters());
  write_file(doc, path);
}

TransformerModel load_transformer_checkpoint(const std::string& path) {
  const json doc = load_file(path, "transformer");
  const json& meta = doc.at("meta");

  TrainConfig cfg;
  cfg.blocks = meta.at("blocks").get<int>();
  cfg.heads = meta.at("heads").get<int>();
  cfg.head_dim = meta.at("head_dim").get<int>();
  cfg.ff_dim = meta.at("ff_dim").get<int>();
  cfg.mlp_units = meta.at("mlp_units").get<std::vector<int>>();
  cfg.sa_dropout = meta.at("sa_dropout").get<double>();
  cfg.mlp_dropout = meta.at("mlp_dropout").get<double>();
  cfg.norm_placement = meta.value("norm_placement", "post");

  Rng scratch(0);
  TransformerModel model(meta.at("features").get<int>(), meta.at("classes").get<int>(),
                         cfg, scratch);
  std::vector<Param*> params = model.parameters();
  params_from_json(doc.at("arrays"), params);
  return model;
}

void save_checkpoint(const OTClassifierModel& model, const std::string& path) {
  if (!model.fitted()) throw ParameterError("checkpoint: ot classifier not fitted");
  json doc;
  doc["kind"] = "ot_classifier";
  doc["format_version"] = 1;
  json meta;
  meta["num_classes"] = model.num_classes;
  meta["best_epoch"] = model.best_epoch;
  meta["ot_cost"] = model.ot_cost;
  meta["mlp_units"] = model.mapping_net.hidden_units;
  meta["dropout"] = model.mapping_net.dropout;
  meta["in_dim"] = model.mapping_net.in_dim;
  meta["out_dim"] = model.mapping_net.out_dim;
  meta["centroids"] = matrix_to_json(model.centroids);
  meta["input_offset"] = matrix_to_json(model.input_offset);
  meta["target_offset"] = matrix_to_json(model.target_offset);
  meta["scaler_means"] = matrix_to_json(model.scaler.means);
  meta["scaler_sds"] = matrix_to_json(model.scaler.sds);
  doc["meta"] = std::move(meta);
  auto& net = const_cast<OTClassifierModel&>(model).mapping_net;
  std::vector<Param*> params = net.parameters();
  doc["arrays"] = params_to_json({params.begin(), params.end()});
  write_file(doc, path);
}

OTClassifierModel load_ot_classifier_checkpoint(const std::string& path) {
  const json doc = load_file(path, "ot_classifier");
  const json& meta = doc.at("meta");

  OTClassifierModel model;
  model.num_classes = meta.at("num_classes").get<int>();
  model.best_epoch = meta.at("best_epoch").get<int>();
  model.ot_cost = meta.at("ot_cost").get<double>();
  model.centroids = matrix_from_json(meta.at("centroids"));
  model.input_offset = matrix_from_json(meta.at("input_offset"));
  model.target_offset = matrix_from_json(meta.at("target_offset"));
  model.scaler.means = matrix_from_json(meta.at("scaler_means"));
  model.scaler.sds = matrix_from_json(meta.at("scaler_sds"));

  Rng scratch(0);
  model.mapping_net =
      make_mlp(meta.at("in_dim").get<int>(), meta.at("out_dim").get<int>(),
               meta.at("mlp_units").get<std::vector<int>>(),
               meta.at("dropout").get<double>(), scratch);
  std::vector<Param*> params = model.mapping_net.parameters();
  params_from_json(doc.at("arrays"), params);
  return model;
}

}  // namespace otsa
