#include <gtest/gtest.h>

#include <functional>

#include "support.hpp"

using namespace qoe;
using namespace qoe::nn;
using qoe::test::TempDir;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

LstmWeights random_lstm(Eigen::Index in, Eigen::Index u, std::uint64_t seed) {
  return {random_mat(in, 4 * u, derive_seed(seed, "k"), 0.5), random_mat(u, 4 * u, derive_seed(seed, "r"), 0.5),
          random_mat(1, 4 * u, derive_seed(seed, "b"), 0.5)};
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scalar LSTM step with one unit and one input, written out by hand.
std::pair<double, double> scalar_lstm(double x, double h, double c, const double k[4], const double r[4], const double b[4]) {
  const double i = sig(k[0] * x + r[0] * h + b[0]);
  const double f = sig(k[1] * x + r[1] * h + b[1]);
  const double g = std::tanh(k[2] * x + r[2] * h + b[2]);
  const double o = sig(k[3] * x + r[3] * h + b[3]);
  const double cn = f * c + i * g;
  return {o * std::tanh(cn), cn};
}

ModelConfig toy(Architecture a) {
  ModelConfig c;
  c.architecture = a;
  c.input_features = 8;
  c.units1 = 3;
  c.units2 = 3;
  c.head_hidden = 5;
  c.dropout = 0.2;
  c.head_dropout = 0.3;
  c.l2 = 0.01;
  c.blocks = 1;
  c.heads = 2;
  c.model_dim = 4;
  c.ff_dim = 6;
  c.filters = 2;
  c.kernel = 3;
  c.grid_rows = 2;
  c.grid_cols = 4;
  return c;
}

struct ToyBatch {
  std::vector<Mat> xs;
  std::vector<Example> batch;
};

ToyBatch toy_batch(std::size_t n, Eigen::Index steps, Eigen::Index width, std::uint64_t seed) {
  ToyBatch t;
  for (std::size_t i = 0; i < n; ++i) t.xs.push_back(random_mat(steps, width, derive_seed(seed, "x", i)));
  for (std::size_t i = 0; i < n; ++i) t.batch.push_back({&t.xs[i], static_cast<int>(i % 3)});
  return t;
}

// Finite-difference check of one tape op: d/dx sum(R .* op(x)).
double op_gradient_error(const Mat& x0, const std::function<Var(Tape&, Var)>& op, std::uint64_t seed) {
  Mat weights;
  auto scalar = [&](const Mat& x, Mat* grad) {
    Tape t;
    const Var xv = grad ? t.variable(x) : t.constant(x);
    const Var y = op(t, xv);
    if (weights.size() == 0) weights = random_mat(t.value(y).rows(), t.value(y).cols(), seed);
    const Var w = t.constant(weights);
    const Var ones_l = t.constant(Mat::Ones(1, t.value(y).rows()));
    const Var ones_r = t.constant(Mat::Ones(t.value(y).cols(), 1));
    const Var s = t.matmul(t.matmul(ones_l, t.mul(y, w)), ones_r);
    if (grad) {
      t.backward(s);
      *grad = t.grad(xv);
    }
    return t.value(s)(0, 0);
  };
  Mat analytic;
  scalar(x0, &analytic);
  double worst = 0.0;
  Mat x = x0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + 1e-6;
    const double up = scalar(x, nullptr);
    x.data()[i] = orig - 1e-6;
    const double down = scalar(x, nullptr);
    x.data()[i] = orig;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / 2e-6));
  }
  return worst;
}

std::size_t lstm_count(std::size_t in, std::size_t u) { return 4 * u * (in + u + 1); }

}  // namespace

TEST(LstmCell, ZeroWeightsClosedForm) {
  LstmWeights w{Mat::Zero(2, 8), Mat::Zero(2, 8), Mat::Zero(1, 8)};
  Vector x(2), h(2), c(2);
  x << 1.0, -2.0;
  h << 0.3, 0.1;
  c << 0.8, -1.2;
  const auto [hn, cn] = lstm_cell(x, h, c, w);
  for (Eigen::Index k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(cn(k), 0.5 * c(k));
    EXPECT_DOUBLE_EQ(hn(k), 0.5 * std::tanh(0.5 * c(k)));
  }
}

TEST(LstmCell, MatchesScalarHandComputation) {
  const double k[4] = {0.3, -0.7, 1.1, 0.2}, r[4] = {-0.4, 0.5, 0.9, -0.6}, b[4] = {0.1, 1.0, -0.2, 0.05};
  LstmWeights w{Mat(1, 4), Mat(1, 4), Mat(1, 4)};
  for (int g = 0; g < 4; ++g) {
    w.kernel(0, g) = k[g];
    w.recurrent(0, g) = r[g];
    w.bias(0, g) = b[g];
  }
  Vector x(1), h(1), c(1);
  x << 0.9;
  h << -0.3;
  c << 0.4;
  const auto [hn, cn] = lstm_cell(x, h, c, w);
  const auto [he, ce] = scalar_lstm(0.9, -0.3, 0.4, k, r, b);
  EXPECT_NEAR(hn(0), he, 1e-15);
  EXPECT_NEAR(cn(0), ce, 1e-15);
  EXPECT_THROW(lstm_cell(Vector::Zero(2), h, c, w), Error);
}

TEST(BiLstmLayer, MatchesUnrolledCellsAndWidth) {
  const Eigen::Index steps = 6, in = 3, u = 4;
  const Mat seq = random_mat(steps, in, 1);
  const auto fw = random_lstm(in, u, 2), bw = random_lstm(in, u, 3);
  const Mat out = bilstm_layer(seq, fw, bw, true);
  ASSERT_EQ(out.rows(), steps);
  ASSERT_EQ(out.cols(), 2 * u);
  std::vector<Vector> hf(steps), hb(steps);
  Vector h = Vector::Zero(u), c = Vector::Zero(u);
  for (Eigen::Index t = 0; t < steps; ++t) {
    std::tie(h, c) = lstm_cell(seq.row(t).transpose(), h, c, fw);
    hf[static_cast<std::size_t>(t)] = h;
  }
  h.setZero();
  c.setZero();
  for (Eigen::Index t = steps; t-- > 0;) {
    std::tie(h, c) = lstm_cell(seq.row(t).transpose(), h, c, bw);
    hb[static_cast<std::size_t>(t)] = h;
  }
  for (Eigen::Index t = 0; t < steps; ++t) {
    EXPECT_LT((out.row(t).head(u).transpose() - hf[static_cast<std::size_t>(t)]).norm(), 1e-12);
    EXPECT_LT((out.row(t).tail(u).transpose() - hb[static_cast<std::size_t>(t)]).norm(), 1e-12);
  }
  const Mat last = bilstm_layer(seq, fw, bw, false);
  ASSERT_EQ(last.rows(), 1);
  EXPECT_LT((last.row(0).head(u).transpose() - hf.back()).norm(), 1e-12);
  EXPECT_LT((last.row(0).tail(u).transpose() - hb.front()).norm(), 1e-12);
}

TEST(BiLstmLayer, ReversalSwapsDirections) {
  const Mat seq = random_mat(5, 2, 4);
  const Mat rev = seq.colwise().reverse();
  const auto a = random_lstm(2, 3, 5), b = random_lstm(2, 3, 6);
  const Mat out = bilstm_layer(seq, a, b, true);
  const Mat out_rev = bilstm_layer(rev, b, a, true);
  for (Eigen::Index t = 0; t < 5; ++t) {
    EXPECT_LT((out.row(t).head(3) - out_rev.row(4 - t).tail(3)).norm(), 1e-12);
    EXPECT_LT((out.row(t).tail(3) - out_rev.row(4 - t).head(3)).norm(), 1e-12);
  }
}

TEST(BatchNorm, TrainNormalizesAndUpdatesMovingStats) {
  const Mat x = random_mat(50, 3, 7, 4.0).array() + 2.0;
  BatchNormParams p{Eigen::RowVectorXd::Ones(3), Eigen::RowVectorXd::Zero(3), Eigen::RowVectorXd::Zero(3),
                    Eigen::RowVectorXd::Ones(3)};
  const Mat y = batchnorm(x, p, Mode::Train);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  for (Eigen::Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(y.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.col(c).squaredNorm() / 50.0, var(c) / (var(c) + kBnEpsilon), 1e-12);
    EXPECT_NEAR(p.moving_mean(c), 0.01 * mean(c), 1e-12);
    EXPECT_NEAR(p.moving_var(c), 0.99 + 0.01 * var(c), 1e-12);
  }
  p.gamma.setConstant(2.0);
  p.beta.setConstant(-1.0);
  const Mat z = batchnorm(x, p, Mode::Infer);
  EXPECT_NEAR(z(3, 1), 2.0 * (x(3, 1) - p.moving_mean(1)) / std::sqrt(p.moving_var(1) + kBnEpsilon) - 1.0, 1e-12);
  EXPECT_THROW(batchnorm(x.topRows(1), p, Mode::Train), Error);
}

TEST(Dropout, KeepRateAndScale) {
  CounterRng rng(8);
  const Mat x = Mat::Ones(200, 500);
  const Mat y = dropout(x, 0.4, Mode::Train, rng);
  const double zeros = static_cast<double>((y.array() == 0.0).count()) / static_cast<double>(y.size());
  EXPECT_NEAR(zeros, 0.4, 0.01);
  EXPECT_NEAR(y.mean(), 1.0, 0.02);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0) continue;
    ASSERT_DOUBLE_EQ(y.data()[i], 1.0 / 0.6);
  }
  EXPECT_TRUE(dropout(x, 0.4, Mode::Infer, rng) == x);
}

TEST(Dense, ReluAndShapes) {
  Mat w(2, 2);
  w << 1, -1, 2, 1;
  Vector x(2), b(2);
  x << 1, 1;
  b << 0.5, -3;
  const Vector y = dense(x, w, b, Activation::Relu);
  EXPECT_DOUBLE_EQ(y(0), 3.5);
  EXPECT_DOUBLE_EQ(y(1), 0.0);
  EXPECT_DOUBLE_EQ(dense(x, w, b, Activation::None)(1), -3.0);
  EXPECT_THROW(dense(Vector::Zero(3), w, b, Activation::None), Error);
}

TEST(SoftmaxCrossEntropy, UniformAndLargeLogits) {
  const auto [loss, grad] = softmax_crossentropy(Vector::Zero(3), 1);
  EXPECT_NEAR(loss, std::log(3.0), 1e-15);
  EXPECT_NEAR(grad(1), 1.0 / 3 - 1.0, 1e-15);
  EXPECT_NEAR(grad(0), 1.0 / 3, 1e-15);
  Vector big(3);
  big << 1000.0, 0.0, -1000.0;
  const auto [l2, g2] = softmax_crossentropy(big, 0);
  EXPECT_NEAR(l2, 0.0, 1e-12);
  EXPECT_TRUE(g2.allFinite());
  const auto [l3, g3] = softmax_crossentropy(big, 2);
  EXPECT_NEAR(l3, 2000.0, 1e-9);
  EXPECT_NEAR(softmax(big).sum(), 1.0, 1e-15);
}

TEST(BuildModel, BiLstmParameterCountFormula) {
  for (auto [u1, u2] : std::vector<std::pair<int, int>>{{16, 16}, {32, 64}, {128, 16}}) {
    ModelConfig c;
    c.units1 = u1;
    c.units2 = u2;
    const auto f = 80u, h = 128u;
    const std::size_t expect = 2 * lstm_count(f, u1) + 4 * 2 * u1 + 2 * lstm_count(2 * u1, u2) + 4 * 2 * u2 +
                               (2 * u2 * h + h) + (h * 3 + 3);
    EXPECT_EQ(build_model(c, 1).count(), expect) << u1 << "/" << u2;
    EXPECT_EQ(build_model(c, 1).count(true), expect - 2 * 2 * (u1 + u2));
  }
}

TEST(BuildModel, SeedDeterminism) {
  for (auto a : {Architecture::BiLstm, Architecture::Transformer, Architecture::ConvLstm}) {
    const auto c = toy(a);
    EXPECT_TRUE(build_model(c, 4) == build_model(c, 4));
    EXPECT_FALSE(build_model(c, 4) == build_model(c, 5));
  }
}

TEST(BuildModel, InvalidConfigs) {
  auto code = [](ModelConfig c) {
    try {
      build_model(c, 0);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  ModelConfig c = toy(Architecture::Transformer);
  c.model_dim = 6;
  c.heads = 4;
  EXPECT_EQ(code(c), ErrorCode::InvalidConfig);
  c = toy(Architecture::BiLstm);
  c.dropout = 1.0;
  EXPECT_EQ(code(c), ErrorCode::InvalidConfig);
  c = toy(Architecture::ConvLstm);
  c.kernel = 2;
  EXPECT_EQ(code(c), ErrorCode::InvalidConfig);
  c = toy(Architecture::ConvLstm);
  c.grid_cols = 3;
  EXPECT_EQ(code(c), ErrorCode::InvalidConfig);
  EXPECT_THROW(parse_architecture("gru"), Error);
  const auto back = ModelConfig::from_json(toy(Architecture::ConvLstm).to_json());
  EXPECT_EQ(back.key(), toy(Architecture::ConvLstm).key());
}

TEST(Orthogonal, OrthonormalRowsOrColumns) {
  CounterRng rng(3);
  const Mat a = orthogonal(4, 16, rng);
  EXPECT_LT((a * a.transpose() - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  const Mat b = orthogonal(10, 3, rng);
  EXPECT_LT((b.transpose() * b - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, AnySequenceLengthGivesThreeLogits) {
  ModelConfig c;
  const auto p = build_model(c, 2);
  CounterRng rng(1);
  for (Eigen::Index steps : {40, 39, 1}) {
    const Mat x = random_mat(steps, 80, 10 + static_cast<std::uint64_t>(steps));
    const Vector a = forward(p, c, x, Mode::Infer, rng);
    EXPECT_EQ(a.size(), 3);
    EXPECT_TRUE(a.allFinite());
    EXPECT_TRUE(a == forward(p, c, x, Mode::Infer, rng));
  }
  EXPECT_THROW(forward(p, c, random_mat(40, 79, 1), Mode::Infer, rng), Error);
}

TEST(Forward, BatchedInferenceMatchesSingleExamples) {
  for (auto a : {Architecture::BiLstm, Architecture::Transformer, Architecture::ConvLstm}) {
    const auto c = toy(a);
    const auto p = build_model(c, 9);
    const auto tb = toy_batch(4, 5, 8, 3);
    std::vector<const Mat*> ptrs;
    for (const auto& x : tb.xs) ptrs.push_back(&x);
    const Mat all = predict_logits(p, c, ptrs);
    CounterRng rng(0);
    for (std::size_t i = 0; i < 4; ++i)
      EXPECT_LT((all.row(static_cast<Eigen::Index>(i)).transpose() - forward(p, c, tb.xs[i], Mode::Infer, rng)).norm(), 1e-12)
          << to_string(a);
  }
}

class WholeModelGradients : public ::testing::TestWithParam<Architecture> {};

TEST_P(WholeModelGradients, MatchCentralDifferences) {
  const auto c = toy(GetParam());
  const auto p = build_model(c, 21);
  const auto tb = toy_batch(4, 5, 8, 22);
  const auto r = check_gradients(p, c, tb.batch, 23);
  EXPECT_EQ(r.checked, p.count(true));
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_param << " analytic " << r.worst_analytic << " numeric "
                                        << r.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(Architectures, WholeModelGradients,
                         ::testing::Values(Architecture::BiLstm, Architecture::Transformer, Architecture::ConvLstm),
                         [](const auto& info) { return to_string(info.param); });

TEST(TapeOps, EachOpMatchesFiniteDifferences) {
  const Mat x = random_mat(4, 6, 30);
  const Mat b = random_mat(6, 3, 31);
  const Mat row = random_mat(1, 6, 32);
  const Mat other = random_mat(4, 6, 33);
  auto idx = std::make_shared<std::vector<Eigen::Index>>();
  for (Eigen::Index i = 0; i < 30; ++i) idx->push_back(i % 7 == 0 ? -1 : (i * 5) % 24);
  const std::vector<std::pair<std::string, std::function<Var(Tape&, Var)>>> ops = {
      {"matmul", [&](Tape& t, Var v) { return t.matmul(v, t.constant(b)); }},
      {"matmul_nt", [&](Tape& t, Var v) { return t.matmul_nt(v, t.constant(other)); }},
      {"add_row", [&](Tape& t, Var v) { return t.add_row(v, t.constant(row)); }},
      {"mul", [&](Tape& t, Var v) { return t.mul(v, v); }},
      {"scale", [&](Tape& t, Var v) { return t.scale(v, -2.5); }},
      {"sigmoid", [&](Tape& t, Var v) { return t.sigmoid(v); }},
      {"tanh", [&](Tape& t, Var v) { return t.tanh(v); }},
      {"slice", [&](Tape& t, Var v) { return t.slice_rows(t.slice_cols(v, 1, 3), 1, 2); }},
      {"concat", [&](Tape& t, Var v) {
         const std::array<Var, 2> c{v, t.tanh(v)};
         const std::array<Var, 2> r{t.concat_cols(c), t.concat_cols(c)};
         return t.concat_rows(r);
       }},
      {"gather", [&](Tape& t, Var v) { return t.gather(v, idx, 5, 6); }},
      {"reshape", [&](Tape& t, Var v) { return t.reshape(v, 3, 8); }},
      {"sum_squares", [&](Tape& t, Var v) { return t.sum_squares(v); }},
      {"softmax_rows", [&](Tape& t, Var v) { return t.softmax_rows(v); }},
      {"layernorm", [&](Tape& t, Var v) { return t.layernorm_rows(v, t.constant(row), t.constant(row * 0.3)); }},
      {"batchnorm_train",
       [&](Tape& t, Var v) { return t.batchnorm_train(v, t.constant(row), t.constant(row), 1e-5, nullptr); }},
      {"cross_entropy",
       [&](Tape& t, Var v) {
         const std::vector<int> y = {0, 5, 2, 3};
         return t.softmax_cross_entropy(v, y);
       }},
  };
  for (const auto& [name, op] : ops) EXPECT_LT(op_gradient_error(x, op, 40), 1e-6) << name;
  // relu away from its kink
  const Mat shifted = x.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.2 : v; });
  EXPECT_LT(op_gradient_error(shifted, [](Tape& t, Var v) { return t.relu(v); }, 41), 1e-6);
}

TEST(Loss, L2TermIsSumOfSquaredRegularizedKernels) {
  for (auto a : {Architecture::BiLstm, Architecture::Transformer, Architecture::ConvLstm}) {
    auto c = toy(a);
    const auto p = build_model(c, 1);
    const auto tb = toy_batch(3, 4, 8, 2);
    c.l2 = 0.0;
    CounterRng r0(5);
    const double base = loss_value(p, c, tb.batch, r0);
    c.l2 = 0.37;
    CounterRng r1(5);
    const double with = loss_value(p, c, tb.batch, r1);
    double norm = 0.0;
    for (const auto& item : p.items)
      if (item.regularized) norm += item.value.squaredNorm();
    EXPECT_GT(norm, 0.0);
    EXPECT_NEAR(with - base, 0.37 * norm, 1e-10) << to_string(a);
  }
}

TEST(Loss, DuplicatedBatchGivesSameLossAndGradients) {
  auto c = toy(Architecture::BiLstm);
  c.dropout = 0.0;
  c.head_dropout = 0.0;
  const auto p = build_model(c, 3);
  const auto tb = toy_batch(2, 4, 8, 4);
  std::vector<Example> doubled = tb.batch;
  doubled.insert(doubled.end(), tb.batch.begin(), tb.batch.end());
  CounterRng a(0), b(0);
  const auto once = backward(p, c, tb.batch, a);
  const auto twice = backward(p, c, doubled, b);
  EXPECT_NEAR(once.loss, twice.loss, 1e-12);
  for (std::size_t i = 0; i < once.grads.size(); ++i)
    EXPECT_LT((once.grads[i] - twice.grads[i]).cwiseAbs().maxCoeff(), 1e-12) << p.items[i].name;
}

TEST(Loss, InitialLossNearLogThree) {
  ModelConfig c;
  const auto tb = toy_batch(32, 40, 80, 6);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CounterRng r(seed);
    total += loss_value(build_model(c, seed), c, tb.batch, r);
  }
  EXPECT_NEAR(total / 4.0, std::log(3.0), 0.15);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  ModelConfig c = toy(Architecture::BiLstm);
  auto p = build_model(c, 1);
  const auto before = p;
  Grads g;
  for (std::size_t i = 0; i < p.items.size(); ++i)
    g.push_back(random_mat(p.items[i].value.rows(), p.items[i].value.cols(), 100 + i));
  AdamState s;
  adam_step(p, g, s, AdamOptions{}, 1);
  for (std::size_t i = 0; i < p.items.size(); ++i) {
    const Mat delta = p.items[i].value - before.items[i].value;
    if (!p.items[i].trainable) {
      EXPECT_TRUE(delta.isZero(0.0));
      continue;
    }
    for (Eigen::Index k = 0; k < delta.size(); ++k) {
      const double gk = g[i].data()[k];
      EXPECT_NEAR(delta.data()[k], -1e-3 * gk / (std::abs(gk) + 1e-8), 1e-12);
    }
  }
  EXPECT_THROW(adam_step(p, g, s, AdamOptions{}, 0), Error);
}

TEST(Adam, MinimizesQuadratic) {
  Params p;
  p.items.push_back({"w", random_mat(1, 5, 2, 3.0)});
  AdamState s;
  AdamOptions opt;
  opt.lr = 0.05;
  for (long t = 1; t <= 2000; ++t) adam_step(p, {2.0 * p.items[0].value}, s, opt, t);
  EXPECT_LT(p.items[0].value.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  TempDir dir("nn");
  for (auto a : {Architecture::BiLstm, Architecture::Transformer, Architecture::ConvLstm}) {
    TrainedModel m{toy(a), build_model(toy(a), 7), data::Normalizer{std::vector<double>(8, 0.5), std::vector<double>(8, 2.0)}, 7};
    m.params.items[m.params.items.size() - 1].value(0, 0) = 1.0 / 3.0;
    save_checkpoint(dir / "m.bin", m);
    const auto back = load_checkpoint(dir / "m.bin");
    EXPECT_TRUE(back.params == m.params);
    EXPECT_EQ(back.normalizer, m.normalizer);
    EXPECT_EQ(back.seed, 7u);
    const Mat x = random_mat(5, 8, 1);
    const Mat* one[] = {&x};
    EXPECT_TRUE(predict_logits(back.params, back.config, one) == predict_logits(m.params, m.config, one));
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  TrainedModel m{toy(Architecture::BiLstm), build_model(toy(Architecture::BiLstm), 1), std::nullopt, 1};
  const std::string bytes = serialize(m);
  auto code = [](const std::string& b) {
    try {
      deserialize(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  EXPECT_EQ(code(bytes.substr(0, bytes.size() - 8)), ErrorCode::BadCheckpoint);
  EXPECT_EQ(code("XOECKPT1" + bytes.substr(8)), ErrorCode::BadCheckpoint);
  EXPECT_EQ(code(bytes.substr(0, 10)), ErrorCode::BadCheckpoint);
  // Header claims a different architecture size than the payload holds.
  std::string wrong = bytes;
  const auto at = wrong.find("\"units1\":3");
  ASSERT_NE(at, std::string::npos);
  wrong[at + 9] = '4';
  EXPECT_EQ(code(wrong), ErrorCode::BadCheckpoint);
}
