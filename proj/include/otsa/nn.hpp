/**
 * @file nn.hpp
 * @brief Transformer encoder (multi-head self-attention, feed-forward,
 *        residual + layer norm) with an MLP softmax head, trained by
 *        full-batch gradient descent with manual reverse-mode gradients.
 *
 * Training records, per epoch, the loss of the training pass and the
 * encoder outputs that pass fed to the head ("projections", dropout noise
 * included); the model returned is the parameter state the minimum-loss
 * epoch was measured at. Any parameter subset can be frozen, which is how
 * the MLP head is held fixed while the attention stack keeps training.
 */

#ifndef OTSA_NN_HPP
#define OTSA_NN_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "otsa/common.hpp"
#include "otsa/synthetic.hpp"

namespace otsa {

/// Named weight matrix with its gradient accumulator.
struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

struct TrainConfig {
  int epochs = 60;
  int blocks = 1;
  int heads = 10;
  int head_dim = 16;
  int ff_dim = 32;
  std::vector<int> mlp_units = {8};
  double sa_dropout = 0.1;
  double mlp_dropout = 0.4;
  double learning_rate = 0.01;
  std::string optimizer = "adam";  ///< "adam" or "sgd"
  int batch_size = 0;              ///< 0 = full batch
  /// "pre": y = x + Att(LN(x)), z = y + FF(LN(y)) - the residual stream
  /// keeps the encoder output in the input's neighborhood, which is what
  /// the trajectory diagnostics measure. "post": z = LN(y + FF(y)) with
  /// y = LN(x + Att(x)), the original ordering.
  std::string norm_placement = "pre";
  /// Zero-initialize the attention output projection and the second FF
  /// layer so every residual branch starts at zero and the encoder begins
  /// as the identity map on its input.
  bool residual_zero_init = false;
  std::uint64_t seed = 0;
};

/// Per-head projections W_Q, W_K, W_V (p x d each) and the shared output
/// projection W_O ((h*d) x p).
struct AttentionParams {
  int heads = 0;
  int head_dim = 0;
  std::vector<Param> wq, wk, wv;
  Param wo;
};

struct LayerNormParams {
  Param scale;  ///< 1 x p, initialized to 1
  Param shift;  ///< 1 x p, initialized to 0
};

/// Two affine layers p -> ff_dim -> p with ReLU between.
struct FeedForwardParams {
  Param w1, b1, w2, b2;
};

struct EncoderBlockParams {
  AttentionParams attn;
  LayerNormParams ln1, ln2;
  FeedForwardParams ff;
  bool pre_norm = false;  ///< false keeps the original post-norm ordering
};

/// Hidden ReLU layers (with dropout) and a linear output layer; softmax is
/// applied per point at the model level.
struct MlpHeadParams {
  std::vector<Param> weights;
  std::vector<Param> biases;
  std::vector<int> hidden_units;
};

class TransformerModel {
 public:
  TransformerModel() = default;
  TransformerModel(int features, int classes, const TrainConfig& cfg, Rng& init_rng);

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  std::vector<Param*> head_parameters();

  int features() const { return features_; }
  int classes() const { return classes_; }

  std::vector<EncoderBlockParams> blocks;
  MlpHeadParams head;
  double sa_dropout = 0.0;
  double mlp_dropout = 0.0;

 private:
  int features_ = 0;
  int classes_ = 0;
};

struct AttentionResult {
  Eigen::MatrixXd output;               ///< t x p
  std::vector<Eigen::MatrixXd> scores;  ///< per head, t x t, rows sum to 1
};

/// Single multi-head attention application to one instance (t x p).
AttentionResult attention_forward(const Eigen::MatrixXd& x, const AttentionParams& params);

/// Full encoder stack in inference mode (dropout off); per post-norm block
/// y = LN(x + MultiHead(x)), z = LN(y + FF(y)), pre-norm blocks move the
/// normalization inside the residual branches. Optionally collects every
/// block's attention scores.
Eigen::MatrixXd encoder_forward(const Eigen::MatrixXd& x,
                                const std::vector<EncoderBlockParams>& blocks,
                                std::vector<std::vector<Eigen::MatrixXd>>* scores = nullptr);

struct ModelOutputs {
  std::vector<Eigen::MatrixXd> probs;        ///< n of t x K, rows sum to 1
  std::vector<Eigen::MatrixXd> projections;  ///< n of t x p encoder outputs
};

/// Whole-dataset forward pass; dropout_rng null means inference mode.
ModelOutputs model_forward(const TransformerModel& model, const DatasetTensor& data,
                           Rng* dropout_rng = nullptr,
                           std::vector<std::vector<Eigen::MatrixXd>>* scores = nullptr);

/// Mean point-wise cross-entropy over the indexed instances plus gradients
/// for every parameter (accumulated into Param::grad, zeroed first).
/// dropout_rng null runs the pass with dropout off.
double loss_and_grad(TransformerModel& model, const DatasetTensor& data,
                     const std::vector<int>& indices, Rng* dropout_rng);

/// Marker for parameters excluded from optimizer updates.
using FrozenSet = std::set<std::string>;

/// Marks every MLP-head parameter; encoder parameters stay trainable.
FrozenSet freeze_mlp(const TransformerModel& model);

struct TrainingTrace {
  std::vector<Eigen::MatrixXd> input;                     ///< scaled input (epoch 0)
  std::vector<int> labels;
  std::vector<std::vector<Eigen::MatrixXd>> projections;  ///< one entry per epoch
  std::vector<double> losses;                             ///< training loss per epoch
  int best_epoch = 0;                                     ///< argmin of losses (0-based)
};

struct TrainResult {
  TransformerModel model;  ///< parameters of the best epoch
  TrainingTrace trace;
};

/// Trains for cfg.epochs steps (Adam beta1 0.9, beta2 0.999, eps 1e-7, or
/// plain SGD) on the full batch unless cfg.batch_size > 0. Each epoch's
/// loss and projections come from the training pass itself, before its
/// update is applied. Throws if the loss goes non-finite, naming the last
/// finite epoch.
TrainResult train_full_batch(const DatasetTensor& data, const TrainConfig& cfg,
                             const FrozenSet& frozen = {},
                             const TransformerModel* warm_start = nullptr,
                             bool record_projections = true);

/// Plain MLP for pointwise regression (used to generalize transport maps).
struct MlpNet {
  std::vector<Param> weights;
  std::vector<Param> biases;
  std::vector<int> hidden_units;
  double dropout = 0.0;
  int in_dim = 0;
  int out_dim = 0;

  std::vector<Param*> parameters();
};

MlpNet make_mlp(int in_dim, int out_dim, const std::vector<int>& hidden, double dropout,
                Rng& init_rng);

/// Row-wise forward; dropout_rng null = inference.
Eigen::MatrixXd mlp_forward(const MlpNet& net, const Eigen::MatrixXd& x,
                            Rng* dropout_rng = nullptr);

struct MlpTrainResult {
  MlpNet net;                 ///< parameters of the best epoch
  std::vector<double> losses; ///< inference-mode MSE per epoch
  int best_epoch = 0;
};

/// Adam-trained least-squares regression x -> y with optional mini-batches
/// (batch_size 0 = full batch); retains the epoch of minimum loss.
MlpTrainResult train_mlp_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                    const std::vector<int>& hidden, double dropout,
                                    double learning_rate, int epochs, int batch_size,
                                    std::uint64_t seed);

}  // namespace otsa

#endif  // OTSA_NN_HPP
