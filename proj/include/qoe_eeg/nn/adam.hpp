#pragma once

#include <cmath>
#include <vector>

#include "qoe_eeg/nn/model.hpp"

namespace qoe::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;

  static AdamState zeros(const Params& params) {
    AdamState s;
    for (const auto& p : params.items) {
      s.m.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      s.v.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
    return s;
  }
};

/// Bias-corrected Adam step number `t` (1-based). Non-trainable entries
/// (batch-norm moving statistics) are left alone.
inline void adam_step(Params& params, const Grads& grads, AdamState& state, const AdamOptions& opt, long t) {
  if (t < 1) throw Error(kModule, ErrorCode::InvalidConfig, "adam step counter starts at 1");
  if (grads.size() != params.items.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "grads/params length");
  if (state.m.size() != params.items.size()) state = AdamState::zeros(params);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    if (!params.items[i].trainable) continue;
    const Mat& g = grads[i];
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseAbs2();
    params.items[i].value.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.epsilon);
  }
}

}  // namespace qoe::nn
