#include "otsa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace otsa {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kProbFloor = 1e-12;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-7;

Param glorot_param(const std::string& name, int rows, int cols, Rng& rng) {
  Param p;
  p.name = name;
  p.value.resize(rows, cols);
  const double limit = std::sqrt(6.0 / (rows + cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) p.value(r, c) = rng.uniform(-limit, limit);
  p.grad = Eigen::MatrixXd::Zero(rows, cols);
  return p;
}

Param const_param(const std::string& name, int rows, int cols, double fill) {
  Param p;
  p.name = name;
  p.value = Eigen::MatrixXd::Constant(rows, cols, fill);
  p.grad = Eigen::MatrixXd::Zero(rows, cols);
  return p;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const Eigen::ArrayXd shifted = x.row(r).array() - x.row(r).maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

// d/dA of softmax_rows(A) composed with upstream dS, per row.
Eigen::MatrixXd softmax_backward_rows(const Eigen::MatrixXd& s, const Eigen::MatrixXd& ds) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (int r = 0; r < s.rows(); ++r) {
    const double dot = s.row(r).dot(ds.row(r));
    out.row(r) = s.row(r).cwiseProduct(ds.row(r).array().matrix() -
                                       Eigen::RowVectorXd::Constant(s.cols(), dot));
  }
  return out;
}

// Inverted dropout mask; entries drawn row-major so the stream is stable.
Eigen::MatrixXd dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ParameterError("train config: epochs < 1");
  if (cfg.blocks < 1) throw ParameterError("train config: blocks < 1");
  if (cfg.heads < 1) throw ParameterError("train config: heads < 1");
  if (cfg.head_dim < 1) throw ParameterError("train config: head dim < 1");
  if (cfg.ff_dim < 1) throw ParameterError("train config: ff dim < 1");
  for (int u : cfg.mlp_units)
    if (u < 1) throw ParameterError("train config: mlp unit count < 1");
  if (cfg.sa_dropout < 0.0 || cfg.sa_dropout >= 1.0)
    throw ParameterError("train config: sa dropout outside [0, 1)");
  if (cfg.mlp_dropout < 0.0 || cfg.mlp_dropout >= 1.0)
    throw ParameterError("train config: mlp dropout outside [0, 1)");
  if (cfg.learning_rate <= 0.0) throw ParameterError("train config: learning rate <= 0");
  if (cfg.optimizer != "adam" && cfg.optimizer != "sgd")
    throw ParameterError("train config: unknown optimizer '" + cfg.optimizer + "'");
  if (cfg.norm_placement != "pre" && cfg.norm_placement != "post")
    throw ParameterError("train config: unknown norm placement '" +
                         cfg.norm_placement + "'");
  if (cfg.batch_size < 0) throw ParameterError("train config: batch size < 0");
}

}  // namespace

TransformerModel::TransformerModel(int features, int classes, const TrainConfig& cfg,
                                   Rng& init_rng)
    : sa_dropout(cfg.sa_dropout),
      mlp_dropout(cfg.mlp_dropout),
      features_(features),
      classes_(classes) {
  validate_config(cfg);
  if (features < 1 || classes < 2)
    throw ParameterError("model: need features >= 1 and classes >= 2");

  const int p = features, d = cfg.head_dim, h = cfg.heads;
  blocks.reserve(cfg.blocks);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    EncoderBlockParams block;
    block.pre_norm = cfg.norm_placement == "pre";
    block.attn.heads = h;
    block.attn.head_dim = d;
    for (int i = 0; i < h; ++i) {
      const std::string hp = prefix + "attn.h" + std::to_string(i) + ".";
      block.attn.wq.push_back(glorot_param(hp + "wq", p, d, init_rng));
      block.attn.wk.push_back(glorot_param(hp + "wk", p, d, init_rng));
      block.attn.wv.push_back(glorot_param(hp + "wv", p, d, init_rng));
    }
    block.attn.wo = cfg.residual_zero_init
                        ? const_param(prefix + "attn.wo", h * d, p, 0.0)
                        : glorot_param(prefix + "attn.wo", h * d, p, init_rng);
    block.ln1.scale = const_param(prefix + "ln1.scale", 1, p, 1.0);
    block.ln1.shift = const_param(prefix + "ln1.shift", 1, p, 0.0);
    block.ff.w1 = glorot_param(prefix + "ff.w1", p, cfg.ff_dim, init_rng);
    block.ff.b1 = const_param(prefix + "ff.b1", 1, cfg.ff_dim, 0.0);
    block.ff.w2 = cfg.residual_zero_init
                      ? const_param(prefix + "ff.w2", cfg.ff_dim, p, 0.0)
                      : glorot_param(prefix + "ff.w2", cfg.ff_dim, p, init_rng);
    block.ff.b2 = const_param(prefix + "ff.b2", 1, p, 0.0);
    block.ln2.scale = const_param(prefix + "ln2.scale", 1, p, 1.0);
    block.ln2.shift = const_param(prefix + "ln2.shift", 1, p, 0.0);
    blocks.push_back(std::move(block));
  }

  head.hidden_units = cfg.mlp_units;
  int in_dim = p;
  for (std::size_t l = 0; l < cfg.mlp_units.size(); ++l) {
    const std::string lp = "head.l" + std::to_string(l) + ".";
    head.weights.push_back(glorot_param(lp + "w", in_dim, cfg.mlp_units[l], init_rng));
    head.biases.push_back(const_param(lp + "b", 1, cfg.mlp_units[l], 0.0));
    in_dim = cfg.mlp_units[l];
  }
  head.weights.push_back(glorot_param("head.out.w", in_dim, classes, init_rng));
  head.biases.push_back(const_param("head.out.b", 1, classes, 0.0));
}

std::vector<Param*> TransformerModel::parameters() {
  std::vector<Param*> out;
  for (auto& block : blocks) {
    for (int i = 0; i < block.attn.heads; ++i) {
      out.push_back(&block.attn.wq[i]);
      out.push_back(&block.attn.wk[i]);
      out.push_back(&block.attn.wv[i]);
    }
    out.push_back(&block.attn.wo);
    out.push_back(&block.ln1.scale);
    out.push_back(&block.ln1.shift);
    out.push_back(&block.ff.w1);
    out.push_back(&block.ff.b1);
    out.push_back(&block.ff.w2);
    out.push_back(&block.ff.b2);
    out.push_back(&block.ln2.scale);
    out.push_back(&block.ln2.shift);
  }
  for (auto& w : head.weights) out.push_back(&w);
  for (auto& b : head.biases) out.push_back(&b);
  return out;
}

std::vector<const Param*> TransformerModel::parameters() const {
  auto mutable_params = const_cast<TransformerModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Param*> TransformerModel::head_parameters() {
  std::vector<Param*> out;
  for (auto& w : head.weights) out.push_back(&w);
  for (auto& b : head.biases) out.push_back(&b);
  return out;
}

FrozenSet freeze_mlp(const TransformerModel& model) {
  FrozenSet out;
  auto& m = const_cast<TransformerModel&>(model);
  for (Param* p : m.head_parameters()) out.insert(p->name);
  return out;
}

namespace {

struct AttnCache {
  Eigen::MatrixXd x;
  std::vector<Eigen::MatrixXd> q, k, v, s;
  Eigen::MatrixXd concat;
};

struct LnCache {
  Eigen::MatrixXd xhat;
  Eigen::VectorXd inv_std;
};

struct BlockCache {
  AttnCache attn;
  Eigen::MatrixXd attn_mask;  // empty when dropout is off
  LnCache ln1;
  Eigen::MatrixXd y;      // post: attention-residual after LN1; pre: raw residual
  Eigen::MatrixXd ff_in;  // input of the feed-forward branch
  Eigen::MatrixXd ff_pre, ff_act;
  Eigen::MatrixXd ff_mask;
  LnCache ln2;
};

struct HeadCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to linear layer l
  std::vector<Eigen::MatrixXd> pre;     // hidden pre-activations
  std::vector<Eigen::MatrixXd> mask;    // hidden dropout masks (may be empty)
  Eigen::MatrixXd logits, probs;
};

Eigen::MatrixXd attention_cached(const Eigen::MatrixXd& x, const AttentionParams& p,
                                 AttnCache& c) {
  const int h = p.heads, d = p.head_dim;
  const int t = static_cast<int>(x.rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.x = x;
  c.q.resize(h);
  c.k.resize(h);
  c.v.resize(h);
  c.s.resize(h);
  c.concat.resize(t, h * d);
  for (int i = 0; i < h; ++i) {
    c.q[i] = x * p.wq[i].value;
    c.k[i] = x * p.wk[i].value;
    c.v[i] = x * p.wv[i].value;
    c.s[i] = softmax_rows(c.q[i] * c.k[i].transpose() * scale);
    c.concat.middleCols(i * d, d) = c.s[i] * c.v[i];
  }
  return c.concat * p.wo.value;
}

Eigen::MatrixXd attention_backward(const Eigen::MatrixXd& dout, AttentionParams& p,
                                   const AttnCache& c) {
  const int h = p.heads, d = p.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  p.wo.grad += c.concat.transpose() * dout;
  const Eigen::MatrixXd dconcat = dout * p.wo.value.transpose();
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(c.x.rows(), c.x.cols());
  for (int i = 0; i < h; ++i) {
    const Eigen::MatrixXd dh = dconcat.middleCols(i * d, d);
    const Eigen::MatrixXd ds = dh * c.v[i].transpose();
    const Eigen::MatrixXd dv = c.s[i].transpose() * dh;
    const Eigen::MatrixXd da = softmax_backward_rows(c.s[i], ds) * scale;
    const Eigen::MatrixXd dq = da * c.k[i];
    const Eigen::MatrixXd dk = da.transpose() * c.q[i];
    p.wq[i].grad += c.x.transpose() * dq;
    p.wk[i].grad += c.x.transpose() * dk;
    p.wv[i].grad += c.x.transpose() * dv;
    dx += dq * p.wq[i].value.transpose() + dk * p.wk[i].value.transpose() +
          dv * p.wv[i].value.transpose();
  }
  return dx;
}

Eigen::MatrixXd layernorm_cached(const Eigen::MatrixXd& x, const LayerNormParams& p,
                                 LnCache& c) {
  const int t = static_cast<int>(x.rows());
  const int dim = static_cast<int>(x.cols());
  c.xhat.resize(t, dim);
  c.inv_std.resize(t);
  Eigen::MatrixXd out(t, dim);
  for (int r = 0; r < t; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    c.inv_std[r] = inv_std;
    c.xhat.row(r) = (x.row(r).array() - mu) * inv_std;
    out.row(r) =
        c.xhat.row(r).cwiseProduct(p.scale.value.row(0)) + p.shift.value.row(0);
  }
  return out;
}

Eigen::MatrixXd layernorm_backward(const Eigen::MatrixXd& dy, LayerNormParams& p,
                                   const LnCache& c) {
  const int t = static_cast<int>(dy.rows());
  const int dim = static_cast<int>(dy.cols());
  Eigen::MatrixXd dx(t, dim);
  for (int r = 0; r < t; ++r) {
    p.scale.grad.row(0) += dy.row(r).cwiseProduct(c.xhat.row(r));
    p.shift.grad.row(0) += dy.row(r);
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(p.scale.value.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(c.xhat.row(r)).mean();
    dx.row(r) =
        c.inv_std[r] * (dxhat.array() - m1 - c.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

Eigen::MatrixXd apply_dropout(Eigen::MatrixXd value, double rate, Rng* dropout_rng,
                              Eigen::MatrixXd& mask) {
  if (dropout_rng != nullptr && rate > 0.0) {
    mask = dropout_mask(static_cast<int>(value.rows()), static_cast<int>(value.cols()),
                        rate, *dropout_rng);
    return value.cwiseProduct(mask);
  }
  mask.resize(0, 0);
  return value;
}

Eigen::MatrixXd ff_branch(const Eigen::MatrixXd& in, const EncoderBlockParams& bp,
                          BlockCache& c) {
  c.ff_in = in;
  c.ff_pre = (in * bp.ff.w1.value).rowwise() + bp.ff.b1.value.row(0);
  c.ff_act = c.ff_pre.cwiseMax(0.0);
  return (c.ff_act * bp.ff.w2.value).rowwise() + bp.ff.b2.value.row(0);
}

// Given the gradient of the FF branch output, accumulates the FF parameter
// gradients and returns the gradient of the branch input.
Eigen::MatrixXd ff_branch_backward(const Eigen::MatrixXd& dout, EncoderBlockParams& bp,
                                   const BlockCache& c) {
  bp.ff.b2.grad.row(0) += dout.colwise().sum();
  bp.ff.w2.grad += c.ff_act.transpose() * dout;
  const Eigen::MatrixXd dact = dout * bp.ff.w2.value.transpose();
  const Eigen::MatrixXd dpre =
      dact.cwiseProduct((c.ff_pre.array() > 0.0).cast<double>().matrix());
  bp.ff.b1.grad.row(0) += dpre.colwise().sum();
  bp.ff.w1.grad += c.ff_in.transpose() * dpre;
  return dpre * bp.ff.w1.value.transpose();
}

Eigen::MatrixXd block_cached(const Eigen::MatrixXd& x, const EncoderBlockParams& bp,
                             double sa_rate, Rng* dropout_rng, BlockCache& c) {
  if (bp.pre_norm) {
    const Eigen::MatrixXd ln1_out = layernorm_cached(x, bp.ln1, c.ln1);
    const Eigen::MatrixXd attn_out = apply_dropout(
        attention_cached(ln1_out, bp.attn, c.attn), sa_rate, dropout_rng, c.attn_mask);
    c.y = x + attn_out;
    const Eigen::MatrixXd ln2_out = layernorm_cached(c.y, bp.ln2, c.ln2);
    const Eigen::MatrixXd ff_out =
        apply_dropout(ff_branch(ln2_out, bp, c), sa_rate, dropout_rng, c.ff_mask);
    return c.y + ff_out;
  }

  const Eigen::MatrixXd attn_out = apply_dropout(attention_cached(x, bp.attn, c.attn),
                                                 sa_rate, dropout_rng, c.attn_mask);
  c.y = layernorm_cached(x + attn_out, bp.ln1, c.ln1);
  const Eigen::MatrixXd ff_out =
      apply_dropout(ff_branch(c.y, bp, c), sa_rate, dropout_rng, c.ff_mask);
  return layernorm_cached(c.y + ff_out, bp.ln2, c.ln2);
}

Eigen::MatrixXd block_backward(const Eigen::MatrixXd& dz, EncoderBlockParams& bp,
                               const BlockCache& c) {
  if (bp.pre_norm) {
    Eigen::MatrixXd dff_out = dz;
    if (c.ff_mask.size() > 0) dff_out = dff_out.cwiseProduct(c.ff_mask);
    const Eigen::MatrixXd dln2_out = ff_branch_backward(dff_out, bp, c);
    Eigen::MatrixXd dy = dz + layernorm_backward(dln2_out, bp.ln2, c.ln2);

    Eigen::MatrixXd dattn_out = dy;
    if (c.attn_mask.size() > 0) dattn_out = dattn_out.cwiseProduct(c.attn_mask);
    const Eigen::MatrixXd dln1_out = attention_backward(dattn_out, bp.attn, c.attn);
    return dy + layernorm_backward(dln1_out, bp.ln1, c.ln1);
  }

  const Eigen::MatrixXd dr2 = layernorm_backward(dz, bp.ln2, c.ln2);
  Eigen::MatrixXd dff_out = dr2;
  if (c.ff_mask.size() > 0) dff_out = dff_out.cwiseProduct(c.ff_mask);
  const Eigen::MatrixXd dy = dr2 + ff_branch_backward(dff_out, bp, c);

  const Eigen::MatrixXd dr1 = layernorm_backward(dy, bp.ln1, c.ln1);
  Eigen::MatrixXd dattn_out = dr1;
  if (c.attn_mask.size() > 0) dattn_out = dattn_out.cwiseProduct(c.attn_mask);
  return dr1 + attention_backward(dattn_out, bp.attn, c.attn);
}

void head_cached(const Eigen::MatrixXd& z, const MlpHeadParams& h, double rate,
                 Rng* dropout_rng, HeadCache& c) {
  const std::size_t hidden = h.hidden_units.size();
  c.inputs.assign(hidden + 1, {});
  c.pre.assign(hidden, {});
  c.mask.assign(hidden, {});
  c.inputs[0] = z;
  for (std::size_t l = 0; l < hidden; ++l) {
    c.pre[l] = (c.inputs[l] * h.weights[l].value).rowwise() + h.biases[l].value.row(0);
    Eigen::MatrixXd act = c.pre[l].cwiseMax(0.0);
    if (dropout_rng != nullptr && rate > 0.0) {
      c.mask[l] = dropout_mask(static_cast<int>(act.rows()),
                               static_cast<int>(act.cols()), rate, *dropout_rng);
      act = act.cwiseProduct(c.mask[l]);
    }
    c.inputs[l + 1] = std::move(act);
  }
  c.logits =
      (c.inputs[hidden] * h.weights[hidden].value).rowwise() + h.biases[hidden].value.row(0);
  c.probs = softmax_rows(c.logits);
}

Eigen::MatrixXd head_backward(const Eigen::MatrixXd& dlogits, MlpHeadParams& h,
                              const HeadCache& c) {
  const int last = static_cast<int>(h.hidden_units.size());
  Eigen::MatrixXd d = dlogits;
  for (int l = last; l >= 0; --l) {
    h.weights[l].grad += c.inputs[l].transpose() * d;
    h.biases[l].grad.row(0) += d.colwise().sum();
    Eigen::MatrixXd dprev = d * h.weights[l].value.transpose();
    if (l == 0) return dprev;
    if (c.mask[l - 1].size() > 0) dprev = dprev.cwiseProduct(c.mask[l - 1]);
    d = dprev.cwiseProduct((c.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return d;  // unreachable
}

struct InstanceCache {
  std::vector<BlockCache> blocks;
  HeadCache head;
};

// Forward pass through encoder + head for one instance.
Eigen::MatrixXd instance_forward(const TransformerModel& model, const Eigen::MatrixXd& x,
                                 Rng* dropout_rng, InstanceCache& cache) {
  cache.blocks.resize(model.blocks.size());
  Eigen::MatrixXd cur = x;
  for (std::size_t b = 0; b < model.blocks.size(); ++b)
    cur = block_cached(cur, model.blocks[b], model.sa_dropout, dropout_rng,
                       cache.blocks[b]);
  head_cached(cur, model.head, model.mlp_dropout, dropout_rng, cache.head);
  return cur;
}

void instance_backward(TransformerModel& model, const Eigen::MatrixXd& dlogits,
                       const InstanceCache& cache) {
  Eigen::MatrixXd d = head_backward(dlogits, model.head, cache.head);
  for (int b = static_cast<int>(model.blocks.size()) - 1; b >= 0; --b)
    d = block_backward(d, model.blocks[b], cache.blocks[b]);
}

}  // namespace

AttentionResult attention_forward(const Eigen::MatrixXd& x, const AttentionParams& params) {
  if (static_cast<int>(x.cols()) != params.wq[0].value.rows())
    throw DimensionError("attention: input has " + std::to_string(x.cols()) +
                         " features, projections expect " +
                         std::to_string(params.wq[0].value.rows()));
  AttnCache cache;
  AttentionResult out;
  out.output = attention_cached(x, params, cache);
  out.scores = std::move(cache.s);
  return out;
}

Eigen::MatrixXd encoder_forward(const Eigen::MatrixXd& x,
                                const std::vector<EncoderBlockParams>& blocks,
                                std::vector<std::vector<Eigen::MatrixXd>>* scores) {
  Eigen::MatrixXd cur = x;
  if (scores != nullptr) scores->clear();
  for (const auto& block : blocks) {
    BlockCache cache;
    cur = block_cached(cur, block, 0.0, nullptr, cache);
    if (scores != nullptr) scores->push_back(std::move(cache.attn.s));
  }
  return cur;
}

ModelOutputs model_forward(const TransformerModel& model, const DatasetTensor& data,
                           Rng* dropout_rng,
                           std::vector<std::vector<Eigen::MatrixXd>>* scores) {
  if (data.features() != model.features())
    throw DimensionError("model forward: dataset has " + std::to_string(data.features()) +
                         " features, model expects " + std::to_string(model.features()));
  ModelOutputs out;
  out.probs.reserve(data.size());
  out.projections.reserve(data.size());
  InstanceCache cache;
  for (const auto& inst : data.instances) {
    const Eigen::MatrixXd proj = instance_forward(model, inst, dropout_rng, cache);
    out.projections.push_back(proj);
    out.probs.push_back(cache.head.probs);
    if (scores != nullptr)
      for (const auto& block : cache.blocks)
        scores->push_back(block.attn.s);
  }
  return out;
}

namespace {

// Shared by the public op and the trainer; optionally harvests the encoder
// outputs of this very pass (the projections actually fed to the head,
// dropout noise included when the pass is a training pass).
double loss_and_grad_impl(TransformerModel& model, const DatasetTensor& data,
                          const std::vector<int>& indices, Rng* dropout_rng,
                          std::vector<Eigen::MatrixXd>* projections) {
  if (indices.empty()) throw ParameterError("loss: empty instance subset");
  const int classes = model.classes();
  for (int idx : indices)
    if (data.labels[idx] < 0 || data.labels[idx] >= classes)
      throw ParameterError("loss: label " + std::to_string(data.labels[idx]) +
                           " outside [0, " + std::to_string(classes) + ")");

  for (Param* p : model.parameters()) p->grad.setZero();

  const double total_points =
      static_cast<double>(indices.size()) * data.timesteps();
  double loss = 0.0;
  InstanceCache cache;
  for (int idx : indices) {
    instance_forward(model, data.instances[idx], dropout_rng, cache);
    const int label = data.labels[idx];
    Eigen::MatrixXd dlogits = cache.head.probs;
    for (int s = 0; s < data.timesteps(); ++s) {
      loss -= std::log(std::max(cache.head.probs(s, label), kProbFloor));
      dlogits(s, label) -= 1.0;
    }
    dlogits /= total_points;
    instance_backward(model, dlogits, cache);
    if (projections != nullptr) (*projections)[idx] = cache.head.inputs[0];
  }
  return loss / total_points;
}

}  // namespace

double loss_and_grad(TransformerModel& model, const DatasetTensor& data,
                     const std::vector<int>& indices, Rng* dropout_rng) {
  return loss_and_grad_impl(model, data, indices, dropout_rng, nullptr);
}

namespace {

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long step = 0;

  explicit AdamState(const std::vector<Param*>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Param* p : params) {
      m.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void update(std::vector<Param*>& params, const std::vector<char>& frozen, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (frozen[i]) continue;
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * params[i]->grad;
      v[i] = kAdamBeta2 * v[i] +
             (1.0 - kAdamBeta2) * params[i]->grad.cwiseProduct(params[i]->grad);
      params[i]->value.array() -=
          lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + kAdamEps);
    }
  }
};

void sgd_update(std::vector<Param*>& params, const std::vector<char>& frozen, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!frozen[i]) params[i]->value -= lr * params[i]->grad;
}

std::vector<Eigen::MatrixXd> snapshot(const std::vector<Param*>& params) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(params.size());
  for (const Param* p : params) out.push_back(p->value);
  return out;
}

void restore(std::vector<Param*>& params, const std::vector<Eigen::MatrixXd>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainResult train_full_batch(const DatasetTensor& data, const TrainConfig& cfg,
                             const FrozenSet& frozen, const TransformerModel* warm_start,
                             bool record_projections) {
  validate_config(cfg);
  if (data.size() == 0) throw ParameterError("train: empty dataset");
  const int classes = data.num_classes();
  if (classes < 2) throw ParameterError("train: need at least 2 classes");

  Rng init_rng(mix_seed(cfg.seed, 0));
  Rng dropout_rng(mix_seed(cfg.seed, 1));
  Rng shuffle_rng(mix_seed(cfg.seed, 2));

  TrainResult result;
  if (warm_start != nullptr) {
    if (warm_start->features() != data.features() || warm_start->classes() != classes)
      throw DimensionError("train: warm start model shape does not match data");
    result.model = *warm_start;
  } else {
    result.model = TransformerModel(data.features(), classes, cfg, init_rng);
  }
  TransformerModel& model = result.model;

  std::vector<Param*> params = model.parameters();
  std::vector<char> frozen_flags(params.size(), 0);
  for (std::size_t i = 0; i < params.size(); ++i)
    frozen_flags[i] = frozen.count(params[i]->name) > 0;

  AdamState adam(params);
  const bool use_adam = cfg.optimizer == "adam";

  TrainingTrace& trace = result.trace;
  trace.input = data.instances;
  trace.labels = data.labels;
  trace.losses.reserve(cfg.epochs);
  if (record_projections) trace.projections.reserve(cfg.epochs);

  std::vector<int> all_indices(data.size());
  std::iota(all_indices.begin(), all_indices.end(), 0);

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_values = snapshot(params);

  // Each epoch records the loss and encoder outputs of the training pass
  // itself (dropout active), then applies the update. The retained model is
  // the parameter state the best epoch's loss was measured at.
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double train_loss = 0.0;
    std::vector<Eigen::MatrixXd> projections;
    if (record_projections) projections.resize(data.size());
    std::vector<Eigen::MatrixXd>* capture =
        record_projections ? &projections : nullptr;

    if (cfg.batch_size == 0 || cfg.batch_size >= data.size()) {
      train_loss =
          loss_and_grad_impl(model, data, all_indices, &dropout_rng, capture);
      if (train_loss < best_loss) {
        best_loss = train_loss;
        trace.best_epoch = epoch;
        best_values = snapshot(params);
      }
      if (use_adam)
        adam.update(params, frozen_flags, cfg.learning_rate);
      else
        sgd_update(params, frozen_flags, cfg.learning_rate);
    } else {
      std::vector<int> order = all_indices;
      shuffle_rng.shuffle(order);
      double loss_sum = 0.0;
      long batches = 0;
      for (int start = 0; start < data.size(); start += cfg.batch_size) {
        const int stop = std::min(start + cfg.batch_size, data.size());
        const std::vector<int> batch(order.begin() + start, order.begin() + stop);
        loss_sum += loss_and_grad_impl(model, data, batch, &dropout_rng, capture);
        ++batches;
        if (use_adam)
          adam.update(params, frozen_flags, cfg.learning_rate);
        else
          sgd_update(params, frozen_flags, cfg.learning_rate);
      }
      train_loss = loss_sum / static_cast<double>(batches);
      if (train_loss < best_loss) {
        best_loss = train_loss;
        trace.best_epoch = epoch;
        best_values = snapshot(params);
      }
    }

    if (!std::isfinite(train_loss))
      throw InternalError("train: loss diverged at epoch " + std::to_string(epoch) +
                          " (last finite epoch " + std::to_string(epoch - 1) + ")");

    trace.losses.push_back(train_loss);
    if (record_projections) trace.projections.push_back(std::move(projections));
  }

  restore(params, best_values);
  return result;
}

std::vector<Param*> MlpNet::parameters() {
  std::vector<Param*> out;
  for (auto& w : weights) out.push_back(&w);
  for (auto& b : biases) out.push_back(&b);
  return out;
}

MlpNet make_mlp(int in_dim, int out_dim, const std::vector<int>& hidden, double dropout,
                Rng& init_rng) {
  if (in_dim < 1 || out_dim < 1) throw ParameterError("mlp: non-positive layer width");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ParameterError("mlp: dropout outside [0, 1)");
  MlpNet net;
  net.hidden_units = hidden;
  net.dropout = dropout;
  net.in_dim = in_dim;
  net.out_dim = out_dim;
  int cur = in_dim;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l] < 1) throw ParameterError("mlp: non-positive hidden width");
    const std::string lp = "mlp.l" + std::to_string(l) + ".";
    net.weights.push_back(glorot_param(lp + "w", cur, hidden[l], init_rng));
    net.biases.push_back(const_param(lp + "b", 1, hidden[l], 0.0));
    cur = hidden[l];
  }
  net.weights.push_back(glorot_param("mlp.out.w", cur, out_dim, init_rng));
  net.biases.push_back(const_param("mlp.out.b", 1, out_dim, 0.0));
  return net;
}

namespace {

struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs, pre, mask;
  Eigen::MatrixXd out;
};

void mlp_cached(const MlpNet& net, const Eigen::MatrixXd& x, Rng* dropout_rng,
                MlpCache& c) {
  const std::size_t hidden = net.hidden_units.size();
  c.inputs.assign(hidden + 1, {});
  c.pre.assign(hidden, {});
  c.mask.assign(hidden, {});
  c.inputs[0] = x;
  for (std::size_t l = 0; l < hidden; ++l) {
    c.pre[l] = (c.inputs[l] * net.weights[l].value).rowwise() + net.biases[l].value.row(0);
    Eigen::MatrixXd act = c.pre[l].cwiseMax(0.0);
    if (dropout_rng != nullptr && net.dropout > 0.0) {
      c.mask[l] = dropout_mask(static_cast<int>(act.rows()),
                               static_cast<int>(act.cols()), net.dropout, *dropout_rng);
      act = act.cwiseProduct(c.mask[l]);
    }
    c.inputs[l + 1] = std::move(act);
  }
  c.out = (c.inputs[hidden] * net.weights[hidden].value).rowwise() +
          net.biases[hidden].value.row(0);
}

void mlp_backward(MlpNet& net, const Eigen::MatrixXd& dout, const MlpCache& c) {
  const int last = static_cast<int>(net.hidden_units.size());
  Eigen::MatrixXd d = dout;
  for (int l = last; l >= 0; --l) {
    net.weights[l].grad += c.inputs[l].transpose() * d;
    net.biases[l].grad.row(0) += d.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd dprev = d * net.weights[l].value.transpose();
    if (c.mask[l - 1].size() > 0) dprev = dprev.cwiseProduct(c.mask[l - 1]);
    d = dprev.cwiseProduct((c.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
}

}  // namespace

Eigen::MatrixXd mlp_forward(const MlpNet& net, const Eigen::MatrixXd& x, Rng* dropout_rng) {
  if (static_cast<int>(x.cols()) != net.in_dim)
    throw DimensionError("mlp: input has " + std::to_string(x.cols()) +
                         " columns, expected " + std::to_string(net.in_dim));
  MlpCache cache;
  mlp_cached(net, x, dropout_rng, cache);
  return cache.out;
}

MlpTrainResult train_mlp_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                    const std::vector<int>& hidden, double dropout,
                                    double learning_rate, int epochs, int batch_size,
                                    std::uint64_t seed) {
  if (x.rows() != y.rows())
    throw DimensionError("mlp regression: " + std::to_string(x.rows()) + " inputs vs " +
                         std::to_string(y.rows()) + " targets");
  if (epochs < 1) throw ParameterError("mlp regression: epochs < 1");
  if (learning_rate <= 0.0) throw ParameterError("mlp regression: learning rate <= 0");

  const int n = static_cast<int>(x.rows());
  Rng init_rng(mix_seed(seed, 0));
  Rng dropout_rng(mix_seed(seed, 1));
  Rng shuffle_rng(mix_seed(seed, 2));

  MlpTrainResult result;
  result.net = make_mlp(static_cast<int>(x.cols()), static_cast<int>(y.cols()), hidden,
                        dropout, init_rng);
  MlpNet& net = result.net;
  std::vector<Param*> params = net.parameters();
  const std::vector<char> frozen(params.size(), 0);
  AdamState adam(params);

  std::vector<int> all_indices(n);
  std::iota(all_indices.begin(), all_indices.end(), 0);

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_values = snapshot(params);

  const auto run_batch = [&](const std::vector<int>& idx) {
    Eigen::MatrixXd xb(idx.size(), x.cols()), yb(idx.size(), y.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      xb.row(r) = x.row(idx[r]);
      yb.row(r) = y.row(idx[r]);
    }
    for (Param* p : params) p->grad.setZero();
    MlpCache cache;
    mlp_cached(net, xb, &dropout_rng, cache);
    const Eigen::MatrixXd err = cache.out - yb;
    const double denom = static_cast<double>(err.size());
    mlp_backward(net, (2.0 / denom) * err, cache);
    adam.update(params, frozen, learning_rate);
    return err.squaredNorm() / denom;
  };

  MlpCache eval_cache;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double train_loss = 0.0;
    if (batch_size == 0 || batch_size >= n) {
      train_loss = run_batch(all_indices);
    } else {
      std::vector<int> order = all_indices;
      shuffle_rng.shuffle(order);
      for (int start = 0; start < n; start += batch_size) {
        const int stop = std::min(start + batch_size, n);
        train_loss = run_batch({order.begin() + start, order.begin() + stop});
      }
    }

    mlp_cached(net, x, nullptr, eval_cache);
    const double eval_loss =
        (eval_cache.out - y).squaredNorm() / static_cast<double>(y.size());
    if (!std::isfinite(train_loss) || !std::isfinite(eval_loss))
      throw InternalError("mlp regression: loss diverged at epoch " +
                          std::to_string(epoch));
    result.losses.push_back(eval_loss);
    if (eval_loss < best_loss) {
      best_loss = eval_loss;
      result.best_epoch = epoch;
      best_values = snapshot(params);
    }
  }

  restore(params, best_values);
  return result;
}

}  // namespace otsa
