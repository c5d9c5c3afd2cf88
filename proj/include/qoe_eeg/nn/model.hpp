#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "qoe_eeg/io.hpp"
#include "qoe_eeg/nn/tape.hpp"
#include "qoe_eeg/rng.hpp"

namespace qoe::nn {

enum class Architecture { BiLstm, Transformer, ConvLstm };
enum class Mode { Train, Infer };
enum class Activation { None, Relu };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::BiLstm: return "bilstm";
    case Architecture::Transformer: return "transformer";
    case Architecture::ConvLstm: return "convlstm";
  }
  return "bilstm";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "bilstm") return Architecture::BiLstm;
  if (s == "transformer") return Architecture::Transformer;
  if (s == "convlstm") return Architecture::ConvLstm;
  throw Error(kModule, ErrorCode::InvalidConfig, "unknown architecture " + std::string(s));
}

struct ModelConfig {
  Architecture architecture = Architecture::BiLstm;
  int units1 = 16;
  int units2 = 16;
  double dropout = 0.2;
  double l2 = 0.0;
  int head_hidden = 128;
  double head_dropout = 0.3;
  int classes = 3;
  int input_features = 80;
  // transformer
  int blocks = 2;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 128;
  // convlstm
  int filters = 16;
  int kernel = 3;
  int grid_rows = 8;
  int grid_cols = 10;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(kModule, ErrorCode::InvalidConfig, m); };
    if (units1 < 1 || units2 < 1 || head_hidden < 1) fail("unit counts must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) fail("head_dropout must be in [0, 1)");
    if (!(l2 >= 0.0)) fail("l2 must be >= 0");
    if (classes != 3) fail("classes must be 3");
    if (input_features < 1) fail("input_features must be positive");
    if (architecture == Architecture::Transformer) {
      if (blocks < 1 || heads < 1 || model_dim < 1 || ff_dim < 1) fail("transformer sizes must be positive");
      if (model_dim % heads != 0)
        fail("model_dim " + std::to_string(model_dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (architecture == Architecture::ConvLstm) {
      if (filters < 1 || kernel < 1 || kernel % 2 == 0) fail("convlstm needs positive filters and an odd kernel");
      if (grid_rows < 1 || grid_cols < 1 || input_features % (grid_rows * grid_cols) != 0)
        fail("input_features must be a multiple of grid_rows * grid_cols");
    }
  }

  // Lexicographic order used for grid tie-breaks.
  auto key() const { return std::tuple(units1, units2, dropout, l2); }

  io::json to_json() const {
    io::json j = {{"architecture", to_string(architecture)},
                  {"units1", units1},
                  {"units2", units2},
                  {"dropout", dropout},
                  {"l2", l2},
                  {"head_hidden", head_hidden},
                  {"head_dropout", head_dropout},
                  {"classes", classes},
                  {"input_features", input_features}};
    if (architecture == Architecture::Transformer)
      j["extra"] = {{"blocks", blocks}, {"heads", heads}, {"model_dim", model_dim}, {"ff_dim", ff_dim}};
    if (architecture == Architecture::ConvLstm)
      j["extra"] = {{"filters", filters}, {"kernel", kernel}, {"grid_rows", grid_rows}, {"grid_cols", grid_cols}};
    return j;
  }

  /// Reads any subset of fields over `base`.
  static ModelConfig from_json(const io::json& j) { return from_json(j, ModelConfig()); }

  static ModelConfig from_json(const io::json& j, ModelConfig base) {
    try {
      if (j.contains("architecture")) base.architecture = parse_architecture(j["architecture"].get<std::string>());
      base.units1 = j.value("units1", base.units1);
      base.units2 = j.value("units2", base.units2);
      base.dropout = j.value("dropout", base.dropout);
      base.l2 = j.value("l2", base.l2);
      base.head_hidden = j.value("head_hidden", base.head_hidden);
      base.head_dropout = j.value("head_dropout", base.head_dropout);
      base.classes = j.value("classes", base.classes);
      base.input_features = j.value("input_features", base.input_features);
      const io::json extra = j.value("extra", io::json::object());
      base.blocks = extra.value("blocks", base.blocks);
      base.heads = extra.value("heads", base.heads);
      base.model_dim = extra.value("model_dim", base.model_dim);
      base.ff_dim = extra.value("ff_dim", base.ff_dim);
      base.filters = extra.value("filters", base.filters);
      base.kernel = extra.value("kernel", base.kernel);
      base.grid_rows = extra.value("grid_rows", base.grid_rows);
      base.grid_cols = extra.value("grid_cols", base.grid_cols);
    } catch (const io::json::exception& e) {
      throw Error(kModule, ErrorCode::InvalidConfig, e.what());
    }
    return base;
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::string name;
  Mat value;
  bool trainable = true;
  bool regularized = false;  // contributes to the L2 penalty
};

struct Params {
  std::vector<Param> items;

  std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].name == name) return i;
    throw Error(kModule, ErrorCode::InvalidConfig, "no parameter named " + std::string(name));
  }
  const Mat& operator[](std::string_view name) const { return items[index(name)].value; }
  Mat& operator[](std::string_view name) { return items[index(name)].value; }

  std::size_t count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : items)
      if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  bool operator==(const Params& o) const {
    if (items.size() != o.items.size()) return false;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& a = items[i];
      const auto& b = o.items[i];
      if (a.name != b.name || a.trainable != b.trainable || a.regularized != b.regularized ||
          a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() || a.value != b.value)
        return false;
    }
    return true;
  }
};

// Aligned with Params::items; zero for non-trainable entries.
using Grads = std::vector<Mat>;

inline Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

/// Matrix with orthonormal rows (rows <= cols) or columns (rows >= cols):
/// QR of a Gaussian matrix with the signs of R's diagonal folded into Q.
inline Mat orthogonal(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
  const Eigen::Index big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  if (rows < cols) return q.transpose();
  return q;
}

// ---------------------------------------------------------------------------
// Standalone layer operations (single example, no tape)

struct LstmWeights {
  Mat kernel;     // F x 4U, gate order i, f, g, o
  Mat recurrent;  // U x 4U
  Mat bias;       // 1 x 4U
};

/// One LSTM step: gates i,f,o = sigmoid, candidate g = tanh,
/// c' = f*c + i*g, h' = o*tanh(c').
inline std::pair<Vector, Vector> lstm_cell(const Vector& x, const Vector& h, const Vector& c, const LstmWeights& w) {
  const Eigen::Index u = w.recurrent.rows();
  if (w.kernel.rows() != x.size() || h.size() != u || c.size() != u || w.kernel.cols() != 4 * u ||
      w.recurrent.cols() != 4 * u || w.bias.cols() != 4 * u)
    throw Error(kModule, ErrorCode::ShapeMismatch, "lstm_cell shapes");
  const Vector z = w.kernel.transpose() * x + w.recurrent.transpose() * h + w.bias.row(0).transpose();
  auto sig = [](double v) { return Tape::sigmoid_scalar(v); };
  const Vector i = z.segment(0, u).unaryExpr(sig);
  const Vector f = z.segment(u, u).unaryExpr(sig);
  const Vector g = z.segment(2 * u, u).array().tanh().matrix();
  const Vector o = z.segment(3 * u, u).unaryExpr(sig);
  Vector c_next = f.cwiseProduct(c) + i.cwiseProduct(g);
  Vector h_next = o.cwiseProduct(c_next.array().tanh().matrix());
  return {std::move(h_next), std::move(c_next)};
}

/// Inverted dropout: in training, keeps each element with probability
/// 1 - rate and rescales survivors by 1 / (1 - rate). Identity otherwise.
inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, CounterRng& rng) {
  const double keep = 1.0 - rate;
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

inline Mat dropout(const Mat& x, double rate, Mode mode, CounterRng& rng) {
  if (mode == Mode::Infer || rate <= 0.0) return x;
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

inline Vector dense(const Vector& x, const Mat& w, const Vector& b, Activation act) {
  if (w.rows() != x.size() || w.cols() != b.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "dense shapes");
  Vector y = w.transpose() * x + b;
  if (act == Activation::Relu) y = y.cwiseMax(0.0);
  return y;
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

/// Numerically stable cross-entropy and its gradient softmax - onehot.
inline std::pair<double, Vector> softmax_crossentropy(const Vector& logits, int true_class) {
  if (true_class < 0 || true_class >= logits.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "class index");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  Vector grad = (logits.array() - lse).exp().matrix();
  grad(true_class) -= 1.0;
  return {lse - logits(true_class), std::move(grad)};
}

struct BatchNormParams {
  Eigen::RowVectorXd gamma, beta, moving_mean, moving_var;
};

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.99;

/// Per-column normalization over all rows. Training mode normalizes with
/// the batch statistics and folds them into the moving averages.
inline Mat batchnorm(const Mat& x, BatchNormParams& p, Mode mode) {
  if (x.cols() != p.gamma.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "batchnorm width");
  Eigen::RowVectorXd mean, var;
  if (mode == Mode::Train) {
    if (x.rows() < 2) throw Error(kModule, ErrorCode::DegenerateBatch, "batch norm needs at least 2 rows per channel");
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
    p.moving_mean = kBnMomentum * p.moving_mean + (1.0 - kBnMomentum) * mean;
    p.moving_var = kBnMomentum * p.moving_var + (1.0 - kBnMomentum) * var;
  } else {
    mean = p.moving_mean;
    var = p.moving_var;
  }
  Mat y = (x.rowwise() - mean).array().rowwise() * ((var.array() + kBnEpsilon).rsqrt() * p.gamma.array());
  y.rowwise() += p.beta;
  return y;
}

// ---------------------------------------------------------------------------
// Model construction

inline constexpr double kLogitInitScale = 0.1;

namespace detail {

struct Builder {
  Params params;
  CounterRng rng;

  void add(std::string name, Mat value, bool trainable = true, bool regularized = false) {
    params.items.push_back({std::move(name), std::move(value), trainable, regularized});
  }

  void lstm(const std::string& prefix, int in, int units, bool regularize_kernel) {
    const Eigen::Index u = units;
    add(prefix + "/kernel", glorot_uniform(in, 4 * u, in, 4.0 * u, rng), true, regularize_kernel);
    add(prefix + "/recurrent", orthogonal(u, 4 * u, rng));
    Mat bias = Mat::Zero(1, 4 * u);
    bias.middleCols(u, u).setOnes();
    add(prefix + "/bias", std::move(bias));
  }

  void batchnorm(const std::string& prefix, Eigen::Index width) {
    add(prefix + "/gamma", Mat::Ones(1, width));
    add(prefix + "/beta", Mat::Zero(1, width));
    add(prefix + "/moving_mean", Mat::Zero(1, width), false);
    add(prefix + "/moving_var", Mat::Ones(1, width), false);
  }

  void dense(const std::string& prefix, int in, int out, bool regularize = false) {
    add(prefix + "/kernel", glorot_uniform(in, out, in, out, rng), true, regularize);
    add(prefix + "/bias", Mat::Zero(1, out));
  }

  void layernorm(const std::string& prefix, int width) {
    add(prefix + "/gamma", Mat::Ones(1, width));
    add(prefix + "/beta", Mat::Zero(1, width));
  }

  // The logit layer starts at a tenth of the Glorot range so the initial
  // softmax is close to uniform.
  void head(const ModelConfig& c, int in) {
    dense("dense1", in, c.head_hidden);
    dense("dense2", c.head_hidden, c.classes);
    params.items[params.items.size() - 2].value *= kLogitInitScale;
  }
};

}  // namespace detail

/// Fresh parameters for `config`, deterministic in `seed`.
///
/// bilstm: BiLSTM(units1, sequence) -> BN -> dropout -> BiLSTM(units2, final
///   states) -> BN -> dropout -> dense(head_hidden, relu) -> dropout(head) -> dense(3)
/// transformer: projection to model_dim + sinusoidal positions -> pre-norm
///   encoder blocks -> final layer norm -> mean over time -> same head
/// convlstm: each step reshaped to a grid_rows x grid_cols image -> one
///   ConvLSTM layer -> flattened final state -> dropout -> same head
inline Params build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  detail::Builder b{{}, CounterRng(derive_seed(seed, "init"))};
  const int f = config.input_features;
  switch (config.architecture) {
    case Architecture::BiLstm: {
      b.lstm("bilstm1/fwd", f, config.units1, true);
      b.lstm("bilstm1/bwd", f, config.units1, true);
      b.batchnorm("bn1", 2 * config.units1);
      b.lstm("bilstm2/fwd", 2 * config.units1, config.units2, true);
      b.lstm("bilstm2/bwd", 2 * config.units1, config.units2, true);
      b.batchnorm("bn2", 2 * config.units2);
      b.head(config, 2 * config.units2);
      break;
    }
    case Architecture::Transformer: {
      const int d = config.model_dim;
      b.dense("proj", f, d, true);
      for (int k = 0; k < config.blocks; ++k) {
        const std::string p = "block" + std::to_string(k);
        b.layernorm(p + "/ln1", d);
        b.dense(p + "/attn_q", d, d, true);
        b.dense(p + "/attn_k", d, d, true);
        b.dense(p + "/attn_v", d, d, true);
        b.dense(p + "/attn_o", d, d, true);
        b.layernorm(p + "/ln2", d);
        b.dense(p + "/ffn1", d, config.ff_dim, true);
        b.dense(p + "/ffn2", config.ff_dim, d, true);
      }
      b.layernorm("ln_final", d);
      b.head(config, d);
      break;
    }
    case Architecture::ConvLstm: {
      const int cells = config.grid_rows * config.grid_cols;
      const int channels = f / cells;
      const int taps = config.kernel * config.kernel;
      const Eigen::Index gates = 4 * config.filters;
      b.add("convlstm/kernel",
            glorot_uniform(taps * channels, gates, taps * channels, static_cast<double>(taps) * gates, b.rng), true,
            true);
      b.add("convlstm/recurrent", orthogonal(taps * config.filters, gates, b.rng));
      Mat bias = Mat::Zero(1, gates);
      bias.middleCols(config.filters, config.filters).setOnes();
      b.add("convlstm/bias", std::move(bias));
      b.head(config, cells * config.filters);
      break;
    }
  }
  return std::move(b.params);
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

struct BnUpdate {
  std::size_t mean_index = 0;
  std::size_t var_index = 0;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
};

/// Folds batch statistics from a training step into the moving averages.
inline void apply_bn_updates(Params& params, const std::vector<BnUpdate>& updates) {
  for (const auto& u : updates) {
    Mat& m = params.items[u.mean_index].value;
    Mat& v = params.items[u.var_index].value;
    m.row(0) = kBnMomentum * m.row(0) + (1.0 - kBnMomentum) * u.mean;
    v.row(0) = kBnMomentum * v.row(0) + (1.0 - kBnMomentum) * u.var;
  }
}

/// One forward evaluation recorded on a tape. Parameters are bound as tape
/// leaves (trainable ones as variables when gradients are wanted).
class Graph {
 public:
  Graph(Tape& tape, const Params& params, const ModelConfig& config, Mode mode, CounterRng* rng, bool want_grads)
      : tape_(tape), params_(params), config_(config), mode_(mode), rng_(rng) {
    vars_.reserve(params.items.size());
    for (const auto& p : params.items)
      vars_.push_back(want_grads && p.trainable ? tape.variable(p.value) : tape.constant(p.value));
  }

  Var param(std::string_view name) const { return vars_[params_.index(name)]; }
  const std::vector<Var>& param_vars() const { return vars_; }
  const std::vector<BnUpdate>& bn_updates() const { return bn_updates_; }

  /// Logits (B x classes) for a batch of T x F inputs sharing T.
  Var logits(std::span<const Mat* const> batch) {
    if (batch.empty()) throw Error(kModule, ErrorCode::ShapeMismatch, "empty batch");
    const Eigen::Index steps = batch[0]->rows();
    if (steps < 1) throw Error(kModule, ErrorCode::ShapeMismatch, "sequence needs at least one step");
    for (const Mat* x : batch)
      if (x->rows() != steps || x->cols() != config_.input_features)
        throw Error(kModule, ErrorCode::ShapeMismatch,
                    "input " + std::to_string(x->rows()) + "x" + std::to_string(x->cols()) + ", expected " +
                        std::to_string(steps) + "x" + std::to_string(config_.input_features));
    switch (config_.architecture) {
      case Architecture::BiLstm: return bilstm_model(batch, steps);
      case Architecture::Transformer: return transformer_model(batch, steps);
      case Architecture::ConvLstm: return convlstm_model(batch, steps);
    }
    return {};
  }

  /// Time-major stacking: row t*B + b holds step t of example b.
  static Mat time_major(std::span<const Mat* const> batch) {
    const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index steps = batch[0]->rows(), width = batch[0]->cols();
    Mat out(steps * n, width);
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index t = 0; t < steps; ++t) out.row(t * n + b) = batch[static_cast<std::size_t>(b)]->row(t);
    return out;
  }

  /// Runs one LSTM direction over a time-major sequence and returns the
  /// hidden state of every step in time order.
  std::vector<Var> lstm_sequence(Var xs, Eigen::Index steps, Eigen::Index batch, Var kernel, Var recurrent, Var bias,
                                 bool reverse) {
    const Eigen::Index u = tape_.value(recurrent).rows();
    const Var xw = tape_.add_row(tape_.matmul(xs, kernel), bias);
    Var h = tape_.constant(Mat::Zero(batch, u));
    Var c = tape_.constant(Mat::Zero(batch, u));
    std::vector<Var> out(static_cast<std::size_t>(steps));
    for (Eigen::Index k = 0; k < steps; ++k) {
      const Eigen::Index t = reverse ? steps - 1 - k : k;
      const Var z = tape_.add(tape_.slice_rows(xw, t * batch, batch), tape_.matmul(h, recurrent));
      std::tie(h, c) = lstm_gates(z, c, u);
      out[static_cast<std::size_t>(t)] = h;
    }
    return out;
  }

  /// Forward and backward LSTMs over the same input; either the full
  /// concatenated sequence ((T*B) x 2U, time-major) or [h_fwd(T); h_bwd(1)].
  Var bilstm(Var xs, Eigen::Index steps, Eigen::Index batch, const std::string& prefix, bool return_sequence) {
    auto fwd = lstm_sequence(xs, steps, batch, param(prefix + "/fwd/kernel"), param(prefix + "/fwd/recurrent"),
                             param(prefix + "/fwd/bias"), false);
    auto bwd = lstm_sequence(xs, steps, batch, param(prefix + "/bwd/kernel"), param(prefix + "/bwd/recurrent"),
                             param(prefix + "/bwd/bias"), true);
    if (!return_sequence) {
      const std::array<Var, 2> last{fwd.back(), bwd.front()};
      return tape_.concat_cols(last);
    }
    const Var f = tape_.concat_rows(fwd);
    const Var b = tape_.concat_rows(bwd);
    const std::array<Var, 2> both{f, b};
    return tape_.concat_cols(both);
  }

  Var batchnorm(Var x, const std::string& prefix) {
    const Var gamma = param(prefix + "/gamma"), beta = param(prefix + "/beta");
    const std::size_t mi = params_.index(prefix + "/moving_mean"), vi = params_.index(prefix + "/moving_var");
    if (mode_ == Mode::Train) {
      if (tape_.value(x).rows() < 2)
        throw Error(kModule, ErrorCode::DegenerateBatch,
                    prefix + ": batch norm needs at least 2 rows per channel in training");
      Tape::ColumnStats stats;
      const Var y = tape_.batchnorm_train(x, gamma, beta, kBnEpsilon, &stats);
      bn_updates_.push_back({mi, vi, std::move(stats.mean), std::move(stats.var)});
      return y;
    }
    return tape_.batchnorm_infer(x, gamma, beta, params_.items[mi].value.row(0), params_.items[vi].value.row(0),
                                 kBnEpsilon);
  }

  Var dropout(Var x, double rate) {
    if (mode_ == Mode::Infer || rate <= 0.0) return x;
    if (!rng_) throw Error(kModule, ErrorCode::InvalidConfig, "training-mode dropout needs an rng");
    const Mat& v = tape_.value(x);
    return tape_.mask(x, dropout_mask(v.rows(), v.cols(), rate, *rng_));
  }

  Var dense(Var x, const std::string& prefix, Activation act) {
    const Var y = tape_.add_row(tape_.matmul(x, param(prefix + "/kernel")), param(prefix + "/bias"));
    return act == Activation::Relu ? tape_.relu(y) : y;
  }

  /// L2 penalty over regularized kernels, unscaled.
  Var kernel_norm() {
    Var total = tape_.constant(Mat::Zero(1, 1));
    for (std::size_t i = 0; i < params_.items.size(); ++i)
      if (params_.items[i].regularized) total = tape_.add(total, tape_.sum_squares(vars_[i]));
    return total;
  }

 private:
  std::pair<Var, Var> lstm_gates(Var z, Var c, Eigen::Index u) {
    const Var i = tape_.sigmoid(tape_.slice_cols(z, 0, u));
    const Var f = tape_.sigmoid(tape_.slice_cols(z, u, u));
    const Var g = tape_.tanh(tape_.slice_cols(z, 2 * u, u));
    const Var o = tape_.sigmoid(tape_.slice_cols(z, 3 * u, u));
    const Var c_next = tape_.add(tape_.mul(f, c), tape_.mul(i, g));
    const Var h_next = tape_.mul(o, tape_.tanh(c_next));
    return {h_next, c_next};
  }

  Var head(Var features) {
    Var h = dense(features, "dense1", Activation::Relu);
    h = dropout(h, config_.head_dropout);
    return dense(h, "dense2", Activation::None);
  }

  Var bilstm_model(std::span<const Mat* const> batch, Eigen::Index steps) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Var x = tape_.constant(time_major(batch));
    Var h = bilstm(x, steps, n, "bilstm1", true);
    h = dropout(batchnorm(h, "bn1"), config_.dropout);
    h = bilstm(h, steps, n, "bilstm2", false);
    h = dropout(batchnorm(h, "bn2"), config_.dropout);
    return head(h);
  }

  static Mat positional_encoding(Eigen::Index steps, Eigen::Index dim) {
    Mat pe(steps, dim);
    for (Eigen::Index t = 0; t < steps; ++t)
      for (Eigen::Index i = 0; i < dim; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
        pe(t, i) = (i % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
      }
    return pe;
  }

  Var attention(Var x, Eigen::Index steps, Eigen::Index batch, const std::string& p) {
    const Eigen::Index d = config_.model_dim, heads = config_.heads, dh = d / heads;
    const Var q = dense(x, p + "/attn_q", Activation::None);
    const Var k = dense(x, p + "/attn_k", Activation::None);
    const Var v = dense(x, p + "/attn_v", Activation::None);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> examples;
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Var qb = tape_.slice_rows(q, b * steps, steps);
      const Var kb = tape_.slice_rows(k, b * steps, steps);
      const Var vb = tape_.slice_rows(v, b * steps, steps);
      std::vector<Var> per_head;
      for (Eigen::Index hd = 0; hd < heads; ++hd) {
        const Var qh = tape_.slice_cols(qb, hd * dh, dh);
        const Var kh = tape_.slice_cols(kb, hd * dh, dh);
        const Var vh = tape_.slice_cols(vb, hd * dh, dh);
        const Var weights = tape_.softmax_rows(tape_.scale(tape_.matmul_nt(qh, kh), scale));
        per_head.push_back(tape_.matmul(weights, vh));
      }
      examples.push_back(tape_.concat_cols(per_head));
    }
    return dense(tape_.concat_rows(examples), p + "/attn_o", Activation::None);
  }

  Var transformer_model(std::span<const Mat* const> batch, Eigen::Index steps) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index d = config_.model_dim;
    // Example-major: row b*T + t.
    Mat x(n * steps, batch[0]->cols());
    for (Eigen::Index b = 0; b < n; ++b) x.middleRows(b * steps, steps) = *batch[static_cast<std::size_t>(b)];
    const Mat pe = positional_encoding(steps, d);
    Mat pe_tiled(n * steps, d);
    for (Eigen::Index b = 0; b < n; ++b) pe_tiled.middleRows(b * steps, steps) = pe;

    Var h = tape_.add(dense(tape_.constant(std::move(x)), "proj", Activation::None), tape_.constant(std::move(pe_tiled)));
    for (int k = 0; k < config_.blocks; ++k) {
      const std::string p = "block" + std::to_string(k);
      Var a = tape_.layernorm_rows(h, param(p + "/ln1/gamma"), param(p + "/ln1/beta"));
      h = tape_.add(h, dropout(attention(a, steps, n, p), config_.dropout));
      a = tape_.layernorm_rows(h, param(p + "/ln2/gamma"), param(p + "/ln2/beta"));
      const Var ff = dense(dense(a, p + "/ffn1", Activation::Relu), p + "/ffn2", Activation::None);
      h = tape_.add(h, dropout(ff, config_.dropout));
    }
    h = tape_.layernorm_rows(h, param("ln_final/gamma"), param("ln_final/beta"));
    Mat pool = Mat::Zero(n, n * steps);
    for (Eigen::Index b = 0; b < n; ++b) pool.block(b, b * steps, 1, steps).setConstant(1.0 / static_cast<double>(steps));
    const Var pooled = tape_.matmul(tape_.constant(std::move(pool)), h);
    return head(pooled);
  }

  // Patch table for a same-padded KxK convolution over images stored as
  // rows of `cells * channels` values (channel fastest); output row
  // (b, r, c) holds the K*K*channels neighbourhood of that cell.
  Tape::Index patch_index(Eigen::Index batch, Eigen::Index channels) const {
    const Eigen::Index rows = config_.grid_rows, cols = config_.grid_cols, k = config_.kernel, pad = k / 2;
    auto idx = std::make_shared<std::vector<Eigen::Index>>();
    idx->reserve(static_cast<std::size_t>(batch * rows * cols * k * k * channels));
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
          for (Eigen::Index kr = 0; kr < k; ++kr)
            for (Eigen::Index kc = 0; kc < k; ++kc)
              for (Eigen::Index ch = 0; ch < channels; ++ch) {
                const Eigen::Index rr = r + kr - pad, cc = c + kc - pad;
                const bool inside = rr >= 0 && rr < rows && cc >= 0 && cc < cols;
                idx->push_back(inside ? ((b * rows + rr) * cols + cc) * channels + ch : -1);
              }
    return idx;
  }

  Var convlstm_model(std::span<const Mat* const> batch, Eigen::Index steps) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index cells = config_.grid_rows * config_.grid_cols;
    const Eigen::Index channels = config_.input_features / cells;
    const Eigen::Index filters = config_.filters, taps = config_.kernel * config_.kernel;
    const Var x = tape_.constant(time_major(batch));
    const Var kernel = param("convlstm/kernel"), recurrent = param("convlstm/recurrent"), bias = param("convlstm/bias");
    const auto x_index = patch_index(n, channels);
    const auto h_index = patch_index(n, filters);

    Var h = tape_.constant(Mat::Zero(n * cells, filters));
    Var c = tape_.constant(Mat::Zero(n * cells, filters));
    for (Eigen::Index t = 0; t < steps; ++t) {
      const Var xt = tape_.slice_rows(x, t * n, n);
      const Var px = tape_.gather(xt, x_index, n * cells, taps * channels);
      const Var ph = tape_.gather(h, h_index, n * cells, taps * filters);
      const Var z = tape_.add_row(tape_.add(tape_.matmul(px, kernel), tape_.matmul(ph, recurrent)), bias);
      std::tie(h, c) = lstm_gates(z, c, filters);
    }
    const Var flat = tape_.reshape(h, n, cells * filters);
    return head(dropout(flat, config_.dropout));
  }

  Tape& tape_;
  const Params& params_;
  const ModelConfig& config_;
  Mode mode_;
  CounterRng* rng_;
  std::vector<Var> vars_;
  std::vector<BnUpdate> bn_updates_;
};

// ---------------------------------------------------------------------------
// Public forward / backward

/// Logits for one T x F example.
inline Vector forward(const Params& params, const ModelConfig& config, const Mat& x, Mode mode, CounterRng& rng) {
  Tape tape;
  Graph g(tape, params, config, mode, &rng, false);
  const Mat* one[] = {&x};
  const Var out = g.logits(one);
  return tape.value(out).row(0).transpose();
}

/// Logits (B x 3) for a batch, in inference mode.
inline Mat predict_logits(const Params& params, const ModelConfig& config, std::span<const Mat* const> batch) {
  Tape tape;
  Graph g(tape, params, config, Mode::Infer, nullptr, false);
  return tape.value(g.logits(batch));
}

struct Example {
  const Mat* x = nullptr;
  int y = 0;
};

struct StepResult {
  double loss = 0.0;
  Grads grads;
  std::vector<BnUpdate> bn_updates;
};

/// Mean cross-entropy + l2 * sum of squared regularized kernels, with exact
/// gradients for the dropout masks drawn from `rng`.
inline StepResult backward(const Params& params, const ModelConfig& config, std::span<const Example> batch,
                           CounterRng& rng) {
  if (batch.empty()) throw Error(kModule, ErrorCode::ShapeMismatch, "empty batch");
  Tape tape;
  Graph g(tape, params, config, Mode::Train, &rng, true);
  std::vector<const Mat*> xs;
  std::vector<int> ys;
  for (const auto& e : batch) {
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  const Var logits = g.logits(xs);
  Var loss = tape.softmax_cross_entropy(logits, ys);
  if (config.l2 > 0.0) loss = tape.add(loss, tape.scale(g.kernel_norm(), config.l2));
  tape.backward(loss);

  StepResult r;
  r.loss = tape.value(loss)(0, 0);
  r.grads.reserve(params.items.size());
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    if (params.items[i].trainable)
      r.grads.push_back(tape.grad(g.param_vars()[i]));
    else
      r.grads.push_back(Mat::Zero(params.items[i].value.rows(), params.items[i].value.cols()));
  }
  r.bn_updates = g.bn_updates();
  return r;
}

/// Loss only, same definition as backward(); used by finite differences.
inline double loss_value(const Params& params, const ModelConfig& config, std::span<const Example> batch,
                         CounterRng& rng) {
  Tape tape;
  Graph g(tape, params, config, Mode::Train, &rng, false);
  std::vector<const Mat*> xs;
  std::vector<int> ys;
  for (const auto& e : batch) {
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  Var loss = tape.softmax_cross_entropy(g.logits(xs), ys);
  if (config.l2 > 0.0) loss = tape.add(loss, tape.scale(g.kernel_norm(), config.l2));
  return tape.value(loss)(0, 0);
}

/// Output of one bidirectional layer for a single T x F sequence.
inline Mat bilstm_layer(const Mat& seq, const LstmWeights& fwd, const LstmWeights& bwd, bool return_sequence) {
  if (seq.rows() < 1) throw Error(kModule, ErrorCode::ShapeMismatch, "empty sequence");
  if (fwd.kernel.rows() != seq.cols() || bwd.kernel.rows() != seq.cols())
    throw Error(kModule, ErrorCode::ShapeMismatch, "bilstm input width");
  Params p;
  for (const auto& [dir, w] : {std::pair{"l/fwd", &fwd}, std::pair{"l/bwd", &bwd}}) {
    p.items.push_back({std::string(dir) + "/kernel", w->kernel});
    p.items.push_back({std::string(dir) + "/recurrent", w->recurrent});
    p.items.push_back({std::string(dir) + "/bias", w->bias});
  }
  ModelConfig cfg;
  cfg.input_features = static_cast<int>(seq.cols());
  Tape tape;
  Graph g(tape, p, cfg, Mode::Infer, nullptr, false);
  const Var x = tape.constant(seq);
  return tape.value(g.bilstm(x, seq.rows(), 1, "l", return_sequence));
}

}  // namespace qoe::nn
