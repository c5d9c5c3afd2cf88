#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qoe_eeg/error.hpp"
#include "qoe_eeg/types.hpp"

namespace qoe::nn {

inline constexpr std::string_view kModule = "nn";

using Mat = Matrix;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode differentiation over dense row-major matrices. Every op
/// appends a node holding its value and a closure that pushes the node's
/// gradient back to its inputs; backward() replays the closures in reverse.
/// Nodes that do not depend on a gradient-carrying leaf skip the closure.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value) { return push(std::move(value), false, {}); }
  Var variable(Mat value) { return push(std::move(value), true, {}); }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(Var root) {
    if (value(root).size() != 1) throw Error(kModule, ErrorCode::ShapeMismatch, "backward needs a scalar root");
    acc(root) = Mat::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward();
    }
  }

  // ---- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul", a, b);
    return push(value(a) * value(b), needs(a, b), [this, a, b, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(a)) acc(a).noalias() += g * value(b).transpose();
      if (needs(b)) acc(b).noalias() += value(a).transpose() * g;
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "matmul_nt", a, b);
    return push(value(a) * value(b).transpose(), needs(a, b), [this, a, b, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(a)) acc(a).noalias() += g * value(b);
      if (needs(b)) acc(b).noalias() += g.transpose() * value(a);
    });
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add", a, b);
    return push(value(a) + value(b), needs(a, b), [this, a, b, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(a)) acc(a) += g;
      if (needs(b)) acc(b) += g;
    });
  }

  // a (N x C) + row vector b (1 x C) broadcast over rows.
  Var add_row(Var a, Var b) {
    check(value(b).rows() == 1 && value(a).cols() == value(b).cols(), "add_row", a, b);
    Mat out = value(a);
    out.rowwise() += value(b).row(0);
    return push(std::move(out), needs(a, b), [this, a, b, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(a)) acc(a) += g;
      if (needs(b)) acc(b) += g.colwise().sum();
    });
  }

  Var mul(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "mul", a, b);
    return push(value(a).cwiseProduct(value(b)), needs(a, b), [this, a, b, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(a)) acc(a) += g.cwiseProduct(value(b));
      if (needs(b)) acc(b) += g.cwiseProduct(value(a));
    });
  }

  Var scale(Var a, double s) {
    return push(value(a) * s, needs(a), [this, a, s, id = next()] { acc(a) += nodes_[id].grad * s; });
  }

  // ---- pointwise nonlinearities ---------------------------------------------

  Var sigmoid(Var a) {
    Mat y = value(a).unaryExpr([](double x) { return sigmoid_scalar(x); });
    return push(std::move(y), needs(a), [this, a, id = next()] {
      const Mat& y = nodes_[id].value;
      acc(a).array() += nodes_[id].grad.array() * y.array() * (1.0 - y.array());
    });
  }

  Var tanh(Var a) {
    Mat y = value(a).array().tanh().matrix();
    return push(std::move(y), needs(a), [this, a, id = next()] {
      const Mat& y = nodes_[id].value;
      acc(a).array() += nodes_[id].grad.array() * (1.0 - y.array().square());
    });
  }

  Var relu(Var a) {
    Mat y = value(a).cwiseMax(0.0);
    return push(std::move(y), needs(a), [this, a, id = next()] {
      acc(a).array() += (value(a).array() > 0.0).select(nodes_[id].grad.array(), 0.0);
    });
  }

  // Elementwise product with a constant (dropout masks).
  Var mask(Var a, const Mat& m) {
    check(value(a).rows() == m.rows() && value(a).cols() == m.cols(), "mask", a, a);
    return push(value(a).cwiseProduct(m), needs(a), [this, a, m, id = next()] {
      acc(a) += nodes_[id].grad.cwiseProduct(m);
    });
  }

  // ---- structural -----------------------------------------------------------

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    check(start >= 0 && start + n <= value(a).cols(), "slice_cols", a, a);
    return push(value(a).middleCols(start, n), needs(a), [this, a, start, n, id = next()] {
      acc(a).middleCols(start, n) += nodes_[id].grad;
    });
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    check(start >= 0 && start + n <= value(a).rows(), "slice_rows", a, a);
    return push(value(a).middleRows(start, n), needs(a), [this, a, start, n, id = next()] {
      acc(a).middleRows(start, n) += nodes_[id].grad;
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    bool any = false;
    for (Var p : parts) {
      check(value(p).rows() == rows, "concat_cols", p, parts[0]);
      cols += value(p).cols();
      any = any || needs(p);
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return push(std::move(out), any, [this, keep, id = next()] {
      Eigen::Index at = 0;
      for (Var p : keep) {
        const Eigen::Index c = value(p).cols();
        if (needs(p)) acc(p) += nodes_[id].grad.middleCols(at, c);
        at += c;
      }
    });
  }

  Var concat_rows(std::span<const Var> parts) {
    Eigen::Index cols = value(parts[0]).cols(), rows = 0;
    bool any = false;
    for (Var p : parts) {
      check(value(p).cols() == cols, "concat_rows", p, parts[0]);
      rows += value(p).rows();
      any = any || needs(p);
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleRows(at, value(p).rows()) = value(p);
      at += value(p).rows();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return push(std::move(out), any, [this, keep, id = next()] {
      Eigen::Index at = 0;
      for (Var p : keep) {
        const Eigen::Index r = value(p).rows();
        if (needs(p)) acc(p) += nodes_[id].grad.middleRows(at, r);
        at += r;
      }
    });
  }

  using Index = std::shared_ptr<const std::vector<Eigen::Index>>;

  /// out.flat[i] = a.flat[index[i]], or 0 where index[i] < 0. Covers
  /// reshapes, permutations and zero-padded patch extraction. The index is
  /// shared so one table can serve every time step.
  Var gather(Var a, Index index, Eigen::Index rows, Eigen::Index cols) {
    if (static_cast<Eigen::Index>(index->size()) != rows * cols)
      throw Error(kModule, ErrorCode::ShapeMismatch, "gather index size");
    const Mat& src = value(a);
    Mat out(rows, cols);
    double* o = out.data();
    const double* s = src.data();
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) o[i] = idx[i] < 0 ? 0.0 : s[idx[i]];
    return push(std::move(out), needs(a), [this, a, index = std::move(index), id = next()] {
      Mat& ga = acc(a);
      const double* g = nodes_[id].grad.data();
      double* t = ga.data();
      const auto& idx = *index;
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (idx[i] >= 0) t[idx[i]] += g[i];
    });
  }

  // Row-major reinterpretation; the flat element order is unchanged.
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != value(a).size()) throw Error(kModule, ErrorCode::ShapeMismatch, "reshape size");
    Mat out = Eigen::Map<const Mat>(value(a).data(), rows, cols);
    return push(std::move(out), needs(a), [this, a, id = next()] {
      Mat& ga = acc(a);
      Eigen::Map<Mat>(ga.data(), nodes_[id].grad.rows(), nodes_[id].grad.cols()) += nodes_[id].grad;
    });
  }

  // ---- reductions / normalization --------------------------------------------

  Var sum_squares(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    return push(std::move(out), needs(a), [this, a, id = next()] {
      acc(a) += (2.0 * nodes_[id].grad(0, 0)) * value(a);
    });
  }

  Var softmax_rows(Var a) {
    Mat y = value(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double m = y.row(r).maxCoeff();
      y.row(r) = (y.row(r).array() - m).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
    return push(std::move(y), needs(a), [this, a, id = next()] {
      const Mat& y = nodes_[id].value;
      const Mat& g = nodes_[id].grad;
      Mat& ga = acc(a);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    });
  }

  /// Per-row normalization with gain/shift row vectors (1 x C).
  Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Mat& x = value(a);
    const Eigen::Index n = x.cols();
    Mat xhat(x.rows(), n);
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mu = x.row(r).mean();
      const double var = (x.row(r).array() - mu).square().mean();
      inv_std(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
    }
    Mat y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    const bool any = needs(a) || needs(gamma) || needs(beta);
    return push(std::move(y), any, [this, a, gamma, beta, xhat, inv_std, n, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(gamma)) acc(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (needs(beta)) acc(beta) += g.colwise().sum();
      if (needs(a)) {
        Mat gx = g;
        gx.array().rowwise() *= value(gamma).row(0).array();
        Mat& ga = acc(a);
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          const double m1 = gx.row(r).mean();
          const double m2 = gx.row(r).dot(xhat.row(r)) / static_cast<double>(n);
          ga.row(r).array() += inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
      }
    });
  }

  struct ColumnStats {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd var;  // population
  };

  /// Batch normalization over rows, per column, using the batch's own
  /// statistics. The statistics are reported through `stats`.
  Var batchnorm_train(Var a, Var gamma, Var beta, double eps, ColumnStats* stats) {
    const Mat& x = value(a);
    const auto n = static_cast<double>(x.rows());
    Eigen::RowVectorXd mu = x.colwise().mean();
    Mat centered = x.rowwise() - mu;
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Mat xhat = centered.array().rowwise() * inv_std.array();
    Mat y = xhat.array().rowwise() * value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    if (stats) *stats = {mu, var};
    const bool any = needs(a) || needs(gamma) || needs(beta);
    return push(std::move(y), any, [this, a, gamma, beta, xhat, inv_std, n, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(gamma)) acc(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (needs(beta)) acc(beta) += g.colwise().sum();
      if (needs(a)) {
        Mat gx = g.array().rowwise() * value(gamma).row(0).array();
        const Eigen::RowVectorXd m1 = gx.colwise().sum() / n;
        const Eigen::RowVectorXd m2 = gx.cwiseProduct(xhat).colwise().sum() / n;
        Mat d = gx.rowwise() - m1;
        d.array() -= xhat.array().rowwise() * m2.array();
        acc(a) += (d.array().rowwise() * inv_std.array()).matrix();
      }
    });
  }

  /// Batch normalization with fixed (running) statistics.
  Var batchnorm_infer(Var a, Var gamma, Var beta, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& var,
                      double eps) {
    const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Mat xhat = (value(a).rowwise() - mean).array().rowwise() * inv_std.array();
    Mat y = xhat.array().rowwise() * value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    const bool any = needs(a) || needs(gamma) || needs(beta);
    return push(std::move(y), any, [this, a, gamma, beta, xhat, inv_std, id = next()] {
      const Mat& g = nodes_[id].grad;
      if (needs(gamma)) acc(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (needs(beta)) acc(beta) += g.colwise().sum();
      if (needs(a))
        acc(a) += (g.array().rowwise() * (value(gamma).row(0).array() * inv_std.array())).matrix();
    });
  }

  /// Mean softmax cross-entropy over the rows of `logits` (N x K).
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Mat& z = value(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size())
      throw Error(kModule, ErrorCode::ShapeMismatch, "one label per logits row required");
    Mat probs(z.rows(), z.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double m = z.row(r).maxCoeff();
      const double lse = m + std::log((z.row(r).array() - m).exp().sum());
      probs.row(r) = (z.row(r).array() - lse).exp().matrix();
      loss += lse - z(r, labels[static_cast<std::size_t>(r)]);
    }
    const auto n = static_cast<double>(z.rows());
    Mat out(1, 1);
    out(0, 0) = loss / n;
    std::vector<int> keep(labels.begin(), labels.end());
    return push(std::move(out), needs(logits), [this, logits, probs, keep, n, id = next()] {
      Mat d = probs;
      for (std::size_t r = 0; r < keep.size(); ++r) d(static_cast<Eigen::Index>(r), keep[r]) -= 1.0;
      acc(logits) += d * (nodes_[id].grad(0, 0) / n);
    });
  }

  static double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  std::size_t next() const { return nodes_.size(); }

  Var push(Mat value, bool requires_grad, std::function<void()> fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  bool needs(Var a) const { return nodes_[a.id].requires_grad; }
  bool needs(Var a, Var b) const { return needs(a) || needs(b); }

  Mat& acc(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void check(bool ok, const char* op, Var a, Var b) const {
    if (!ok)
      throw Error(kModule, ErrorCode::ShapeMismatch,
                  std::string(op) + ": " + std::to_string(value(a).rows()) + "x" + std::to_string(value(a).cols()) +
                      " vs " + std::to_string(value(b).rows()) + "x" + std::to_string(value(b).cols()));
  }

  std::vector<Node> nodes_;
};

}  // namespace qoe::nn
