#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "otsa/nn.hpp"
#include "otsa/synthetic.hpp"

using namespace otsa;

namespace {

TrainConfig tiny_config(int blocks, std::vector<int> mlp_units, std::uint64_t seed,
                        const std::string& norm_placement = "post") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.blocks = blocks;
  cfg.heads = 2;
  cfg.head_dim = 3;
  cfg.ff_dim = 4;
  cfg.mlp_units = std::move(mlp_units);
  cfg.sa_dropout = 0.0;
  cfg.mlp_dropout = 0.0;
  cfg.norm_placement = norm_placement;
  cfg.residual_zero_init = false;  // exercise every branch with live weights
  cfg.seed = seed;
  return cfg;
}

DatasetTensor tiny_dataset(int n, int t, int p, int classes, std::uint64_t seed) {
  Rng rng(seed);
  DatasetTensor d;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd inst(t, p);
    for (int r = 0; r < t; ++r)
      for (int c = 0; c < p; ++c) inst(r, c) = rng.normal();
    d.instances.push_back(inst);
    d.labels.push_back(i % classes);
  }
  return d;
}

// Loss evaluated through the forward pass only; the finite-difference
// reference for the analytic gradients.
double eval_loss(const TransformerModel& model, const DatasetTensor& data) {
  const ModelOutputs out = model_forward(model, data);
  double loss = 0.0;
  for (int i = 0; i < data.size(); ++i)
    for (int s = 0; s < data.timesteps(); ++s)
      loss -= std::log(std::max(out.probs[i](s, data.labels[i]), 1e-12));
  return loss / (static_cast<double>(data.size()) * data.timesteps());
}

void zero_all(TransformerModel& model) {
  for (Param* p : model.parameters())
    if (p->name.find("scale") == std::string::npos) p->value.setZero();
}

}  // namespace

TEST_CASE("zero query/key projections give uniform attention rows") {
  Rng rng(5);
  TrainConfig cfg = tiny_config(1, {3}, 5);
  TransformerModel model(2, 2, cfg, rng);
  AttentionParams& attn = model.blocks[0].attn;
  for (int i = 0; i < attn.heads; ++i) {
    attn.wq[i].value.setZero();
    attn.wk[i].value.setZero();
  }

  Eigen::MatrixXd x(4, 2);
  x << 1, 2, -1, 0.5, 3, -2, 0, 1;
  const AttentionResult res = attention_forward(x, attn);
  for (const auto& s : res.scores)
    CHECK((s.array() - 0.25).abs().maxCoeff() <= 1e-12);

  // with uniform scores every output row is the column mean of the V path
  Eigen::MatrixXd concat(4, attn.heads * attn.head_dim);
  for (int i = 0; i < attn.heads; ++i) {
    const Eigen::MatrixXd v = x * attn.wv[i].value;
    concat.middleCols(i * attn.head_dim, attn.head_dim) =
        v.colwise().mean().replicate(4, 1);
  }
  const Eigen::MatrixXd expected = concat * attn.wo.value;
  CHECK((res.output - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("single-token attention reduces to the value path") {
  Rng rng(6);
  TrainConfig cfg = tiny_config(1, {3}, 6);
  TransformerModel model(2, 2, cfg, rng);
  const AttentionParams& attn = model.blocks[0].attn;

  Eigen::MatrixXd x(1, 2);
  x << 0.7, -1.3;
  const AttentionResult res = attention_forward(x, attn);
  for (const auto& s : res.scores) {
    CHECK(s.rows() == 1);
    CHECK(s(0, 0) == doctest::Approx(1.0));
  }
  Eigen::MatrixXd concat(1, attn.heads * attn.head_dim);
  for (int i = 0; i < attn.heads; ++i)
    concat.middleCols(i * attn.head_dim, attn.head_dim) = x * attn.wv[i].value;
  CHECK((res.output - concat * attn.wo.value).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("attention score rows always sum to one") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(40 + seed);
    TrainConfig cfg = tiny_config(1, {3}, 40 + seed);
    TransformerModel model(3, 2, cfg, rng);
    Eigen::MatrixXd x(5, 3);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) x(r, c) = rng.normal();
    const AttentionResult res = attention_forward(x, model.blocks[0].attn);
    for (const auto& s : res.scores)
      CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("encoder with zero sublayers is iterated layer norm") {
  Rng rng(7);
  TrainConfig cfg = tiny_config(1, {3}, 7);
  TransformerModel model(2, 2, cfg, rng);
  zero_all(model);

  Eigen::MatrixXd x(3, 2);
  x << 1, 5, -2, 0, 4, 4;
  const Eigen::MatrixXd out = encoder_forward(x, model.blocks);

  const auto layernorm = [](const Eigen::MatrixXd& in) {
    Eigen::MatrixXd res = in;
    for (int r = 0; r < in.rows(); ++r) {
      const double mu = in.row(r).mean();
      const double var = (in.row(r).array() - mu).square().mean();
      res.row(r) = ((in.row(r).array() - mu) / std::sqrt(var + 1e-5)).matrix();
    }
    return res;
  };
  CHECK((out - layernorm(layernorm(x))).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("constant rows normalize to zero vectors") {
  Rng rng(8);
  TrainConfig cfg = tiny_config(1, {3}, 8);
  TransformerModel model(2, 2, cfg, rng);
  zero_all(model);

  Eigen::MatrixXd x(2, 2);
  x << 3, 3, -1, -1;  // zero variance per row
  const Eigen::MatrixXd out = encoder_forward(x, model.blocks);
  CHECK(out.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("one block at t=1 matches an explicit scalar-arithmetic oracle") {
  Rng rng(9);
  TrainConfig cfg = tiny_config(1, {2}, 9);
  TransformerModel model(2, 2, cfg, rng);
  const EncoderBlockParams& b = model.blocks[0];

  const double x0 = 0.8, x1 = -0.4;
  // attention at t=1: scores are 1, so out = concat_i(x wv_i) wo
  const int h = b.attn.heads, d = b.attn.head_dim;
  std::vector<double> concat(h * d);
  for (int i = 0; i < h; ++i)
    for (int c = 0; c < d; ++c)
      concat[i * d + c] = x0 * b.attn.wv[i].value(0, c) + x1 * b.attn.wv[i].value(1, c);
  double a0 = 0.0, a1 = 0.0;
  for (int r = 0; r < h * d; ++r) {
    a0 += concat[r] * b.attn.wo.value(r, 0);
    a1 += concat[r] * b.attn.wo.value(r, 1);
  }
  double r1_0 = x0 + a0, r1_1 = x1 + a1;
  const auto ln = [](double& u, double& v, const LayerNormParams& p) {
    const double mu = 0.5 * (u + v);
    const double var = 0.5 * ((u - mu) * (u - mu) + (v - mu) * (v - mu));
    const double istd = 1.0 / std::sqrt(var + 1e-5);
    const double uh = (u - mu) * istd, vh = (v - mu) * istd;
    u = uh * p.scale.value(0, 0) + p.shift.value(0, 0);
    v = vh * p.scale.value(0, 1) + p.shift.value(0, 1);
  };
  ln(r1_0, r1_1, b.ln1);
  const int ff = static_cast<int>(b.ff.w1.value.cols());
  double f0 = 0.0, f1 = 0.0;
  for (int c = 0; c < ff; ++c) {
    const double pre =
        r1_0 * b.ff.w1.value(0, c) + r1_1 * b.ff.w1.value(1, c) + b.ff.b1.value(0, c);
    const double act = pre > 0.0 ? pre : 0.0;
    f0 += act * b.ff.w2.value(c, 0);
    f1 += act * b.ff.w2.value(c, 1);
  }
  double r2_0 = r1_0 + f0 + b.ff.b2.value(0, 0);
  double r2_1 = r1_1 + f1 + b.ff.b2.value(0, 1);
  ln(r2_0, r2_1, b.ln2);

  Eigen::MatrixXd x(1, 2);
  x << x0, x1;
  const Eigen::MatrixXd out = encoder_forward(x, model.blocks);
  CHECK(out(0, 0) == doctest::Approx(r2_0).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(r2_1).epsilon(1e-12));
}

TEST_CASE("model probabilities are normalized and projections match the encoder") {
  Rng rng(10);
  TrainConfig cfg = tiny_config(2, {4, 3}, 10);
  TransformerModel model(2, 3, cfg, rng);
  const DatasetTensor data = tiny_dataset(4, 5, 2, 3, 11);

  const ModelOutputs out = model_forward(model, data);
  for (int i = 0; i < data.size(); ++i) {
    CHECK((out.probs[i].rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
    const Eigen::MatrixXd direct = encoder_forward(data.instances[i], model.blocks);
    CHECK((out.projections[i] - direct).cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.projections[i].rows() == data.timesteps());
    CHECK(out.projections[i].cols() == data.features());
  }
}

TEST_CASE("all-zero model is maximally uncertain") {
  Rng rng(12);
  TrainConfig cfg = tiny_config(1, {3}, 12);
  TransformerModel model(2, 2, cfg, rng);
  zero_all(model);
  const DatasetTensor data = tiny_dataset(3, 4, 2, 2, 13);
  const ModelOutputs out = model_forward(model, data);
  for (const auto& probs : out.probs)
    CHECK((probs.array() - 0.5).abs().maxCoeff() <= 1e-12);

  // uniform probabilities over K = 3 give cross-entropy ln 3
  TransformerModel model3(2, 3, cfg, rng);
  zero_all(model3);
  const DatasetTensor data3 = tiny_dataset(3, 4, 2, 3, 14);
  CHECK(eval_loss(model3, data3) == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("near-one-hot predictions drive the loss to zero") {
  Rng rng(15);
  TrainConfig cfg = tiny_config(1, {3}, 15);
  TransformerModel model(2, 2, cfg, rng);
  zero_all(model);
  model.head.biases.back().value(0, 0) = 60.0;  // logit gap, probs ~ (1, 1e-26)
  DatasetTensor data = tiny_dataset(3, 4, 2, 2, 16);
  data.labels = {0, 0, 0};
  CHECK(eval_loss(model, data) <= 1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
  const struct {
    int blocks, classes, n, t, p;
    std::vector<int> mlp;
    const char* placement;
  } setups[] = {
      {1, 2, 2, 3, 2, {3}, "post"},
      {1, 3, 2, 3, 2, {4, 3}, "post"},
      {2, 2, 2, 3, 2, {3}, "pre"},
      {2, 3, 3, 2, 2, {2}, "pre"},
      {1, 2, 2, 4, 3, {}, "pre"},
  };
  int setup_idx = 0;
  for (const auto& s : setups) {
    Rng rng(700 + setup_idx);
    TrainConfig cfg = tiny_config(s.blocks, s.mlp, 700 + setup_idx, s.placement);
    TransformerModel model(s.p, s.classes, cfg, rng);
    const DatasetTensor data = tiny_dataset(s.n, s.t, s.p, s.classes, 800 + setup_idx);

    std::vector<int> indices(s.n);
    for (int i = 0; i < s.n; ++i) indices[i] = i;
    loss_and_grad(model, data, indices, nullptr);

    std::vector<Param*> params = model.parameters();
    const double step = 1e-5;
    double worst = 0.0;
    for (Param* p : params) {
      for (int r = 0; r < p->value.rows(); ++r) {
        for (int c = 0; c < p->value.cols(); ++c) {
          const double saved = p->value(r, c);
          p->value(r, c) = saved + step;
          const double up = eval_loss(model, data);
          p->value(r, c) = saved - step;
          const double down = eval_loss(model, data);
          p->value(r, c) = saved;
          const double numeric = (up - down) / (2.0 * step);
          const double analytic = p->grad(r, c);
          const double rel = std::abs(analytic - numeric) /
                             std::max({std::abs(analytic), std::abs(numeric), 1e-6});
          worst = std::max(worst, rel);
        }
      }
    }
    CHECK(worst <= 1e-4);
    ++setup_idx;
  }
}

TEST_CASE("training separates an easy two-class problem") {
  const ClassLayout layout = make_layout(2, 8.0, 2);
  const DatasetTensor raw = sample_dataset(layout, 30, 10, 21);
  auto [data, sc] = standardize(raw);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.blocks = 1;
  cfg.heads = 10;
  cfg.head_dim = 16;
  cfg.ff_dim = 32;
  cfg.mlp_units = {8};
  cfg.sa_dropout = 0.1;
  cfg.mlp_dropout = 0.4;
  cfg.learning_rate = 0.01;
  cfg.seed = 77;
  const TrainResult result = train_full_batch(data, cfg);

  const ModelOutputs out = model_forward(result.model, data);
  int correct = 0, total = 0;
  for (int i = 0; i < data.size(); ++i) {
    for (int s = 0; s < data.timesteps(); ++s) {
      int arg = 0;
      out.probs[i].row(s).maxCoeff(&arg);
      correct += arg == data.labels[i];
      ++total;
    }
  }
  CHECK(static_cast<double>(correct) / total >= 0.99);

  // trace bookkeeping
  CHECK(static_cast<int>(result.trace.losses.size()) == cfg.epochs);
  CHECK(static_cast<int>(result.trace.projections.size()) == cfg.epochs);
  int argmin = 0;
  for (int e = 1; e < cfg.epochs; ++e)
    if (result.trace.losses[e] < result.trace.losses[argmin]) argmin = e;
  CHECK(result.trace.best_epoch == argmin);
}

TEST_CASE("freezing every parameter pins the loss") {
  const DatasetTensor data = tiny_dataset(6, 4, 2, 2, 30);
  TrainConfig cfg = tiny_config(1, {3}, 31);
  cfg.epochs = 8;
  cfg.sa_dropout = 0.0;
  cfg.mlp_dropout = 0.0;

  Rng rng(31);
  TransformerModel probe(2, 2, cfg, rng);
  FrozenSet frozen;
  for (Param* p : probe.parameters()) frozen.insert(p->name);

  const TrainResult result = train_full_batch(data, cfg, frozen);
  for (double loss : result.trace.losses)
    CHECK(loss == doctest::Approx(result.trace.losses[0]).epsilon(1e-15));
}

TEST_CASE("training runs are bit-reproducible under a seed") {
  const DatasetTensor data = tiny_dataset(6, 4, 2, 2, 32);
  TrainConfig cfg = tiny_config(1, {3}, 33);
  cfg.epochs = 6;
  cfg.sa_dropout = 0.2;
  cfg.mlp_dropout = 0.3;

  const TrainResult a = train_full_batch(data, cfg);
  const TrainResult b = train_full_batch(data, cfg);
  REQUIRE(a.trace.losses.size() == b.trace.losses.size());
  for (std::size_t e = 0; e < a.trace.losses.size(); ++e) {
    CHECK(a.trace.losses[e] == b.trace.losses[e]);
    for (int i = 0; i < data.size(); ++i)
      CHECK((a.trace.projections[e][i] - b.trace.projections[e][i]).cwiseAbs().maxCoeff() ==
            0.0);
  }
}

TEST_CASE("freeze_mlp pins exactly the head") {
  const DatasetTensor data = tiny_dataset(6, 4, 2, 2, 34);
  TrainConfig cfg = tiny_config(1, {3}, 35);
  cfg.epochs = 10;

  Rng rng(mix_seed(cfg.seed, 0));
  TransformerModel reference(2, 2, cfg, rng);
  const FrozenSet frozen = freeze_mlp(reference);
  CHECK(frozen.size() == reference.head.weights.size() + reference.head.biases.size());

  const TrainResult result = train_full_batch(data, cfg, frozen);
  TransformerModel trained = result.model;

  // head parameters bit-identical to initialization, encoder parameters not
  for (Param* p : trained.head_parameters()) {
    for (Param* q : reference.parameters())
      if (q->name == p->name)
        CHECK((p->value - q->value).cwiseAbs().maxCoeff() == 0.0);
  }
  double encoder_delta = 0.0;
  for (Param* q : reference.parameters()) {
    if (frozen.count(q->name)) continue;
    for (Param* p : trained.parameters())
      if (p->name == q->name)
        encoder_delta = std::max(encoder_delta, (p->value - q->value).cwiseAbs().maxCoeff());
  }
  CHECK(encoder_delta > 0.0);
}

TEST_CASE("inverted dropout is mean-preserving") {
  Rng init(50);
  MlpNet net = make_mlp(1, 1, {1}, 0.4, init);
  net.weights[0].value(0, 0) = 1.0;
  net.weights[1].value(0, 0) = 1.0;
  Eigen::MatrixXd x(1, 1);
  x << 1.0;

  const double reference = mlp_forward(net, x)(0, 0);
  Rng dropout_rng(51);
  double sum = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) sum += mlp_forward(net, x, &dropout_rng)(0, 0);
  CHECK(std::abs(sum / draws - reference) / reference <= 0.03);
}

TEST_CASE("encoder keeps the input shape for any block count") {
  for (int blocks = 1; blocks <= 3; ++blocks) {
    Rng rng(60 + blocks);
    TrainConfig cfg = tiny_config(blocks, {3}, 60 + blocks);
    TransformerModel model(3, 2, cfg, rng);
    Eigen::MatrixXd x(7, 3);
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 3; ++c) x(r, c) = rng.normal();
    const Eigen::MatrixXd out = encoder_forward(x, model.blocks);
    CHECK(out.rows() == 7);
    CHECK(out.cols() == 3);
  }
}

TEST_CASE("score rows stay stochastic across blocks during training") {
  const DatasetTensor data = tiny_dataset(4, 5, 2, 2, 70);
  TrainConfig cfg = tiny_config(2, {3}, 71);
  cfg.epochs = 5;
  const TrainResult result = train_full_batch(data, cfg);

  std::vector<std::vector<Eigen::MatrixXd>> scores;
  model_forward(result.model, data, nullptr, &scores);
  CHECK_FALSE(scores.empty());
  for (const auto& block_scores : scores)
    for (const auto& s : block_scores)
      CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("exploding updates raise a divergence error") {
  const DatasetTensor data = tiny_dataset(4, 3, 2, 2, 80);
  TrainConfig cfg = tiny_config(1, {3}, 81);
  cfg.epochs = 5;
  cfg.optimizer = "sgd";
  cfg.learning_rate = 1e160;
  CHECK_THROWS_AS(train_full_batch(data, cfg), InternalError);
}

TEST_CASE("mlp regression learns an affine map and tracks its best epoch") {
  Rng rng(90);
  const int n = 200;
  Eigen::MatrixXd x(n, 2), y(n, 2);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    x(i, 1) = rng.uniform(-1.0, 1.0);
    y(i, 0) = 0.5 * x(i, 0) - x(i, 1) + 0.25;
    y(i, 1) = x(i, 0) + 0.1;
  }
  const MlpTrainResult res = train_mlp_regression(x, y, {16}, 0.0, 0.01, 200, 32, 91);
  CHECK(res.losses.size() == 200);
  int argmin = 0;
  for (int e = 1; e < 200; ++e)
    if (res.losses[e] < res.losses[argmin]) argmin = e;
  CHECK(res.best_epoch == argmin);
  const Eigen::MatrixXd pred = mlp_forward(res.net, x);
  CHECK((pred - y).squaredNorm() / y.size() <= 0.01);
}
