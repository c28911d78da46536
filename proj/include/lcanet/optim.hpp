#pragma once

#include <cmath>
#include <cstdint>

#include "lcanet/model.hpp"
#include "lcanet/tensor.hpp"

namespace lcanet {

template <typename S>
struct MseResult {
  S loss;
  Tensor<S> grad;  // dL/dpred
};

/// L = (1/N) sum_pixels sum_channels (pred - target)^2 with N = H*W.
/// N is the pixel count, NOT H*W*3: channels are summed, pixels averaged.
/// Gradient: dL/dpred = 2 (pred - target) / N.
template <typename S>
MseResult<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.rank() != 3 || pred.dim(2) != 3) {
    throw ShapeError("mse_loss expects H x W x 3 tensors, got " + shape_to_string(pred.shape()));
  }
  const std::size_t n_pixels = pred.dim(0) * pred.dim(1);
  const S scale = static_cast<S>(2.0 / double(n_pixels));
  MseResult<S> out{S(0), Tensor<S>(pred.shape())};
  const S* pp = pred.data();
  const S* pt = target.data();
  S* pg = out.grad.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const S diff = pp[i] - pt[i];
    pg[i] = scale * diff;
    acc += double(diff) * double(diff);
  }
  out.loss = static_cast<S>(acc / double(n_pixels));
  return out;
}

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for the full parameter set. t counts completed steps.
template <typename S>
struct AdamState {
  ModelParams<S> m = ModelParams<S>::zeros();
  ModelParams<S> v = ModelParams<S>::zeros();
  std::uint64_t t = 0;
  AdamHyper hyper;
};

/// One Adam update on a single tensor. t is the already-incremented step
/// counter; bias correction uses 1 - beta^t.
template <typename S>
void adam_update_tensor(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& m, Tensor<S>& v,
                        std::uint64_t t, const AdamHyper& hp) {
  require_same_shape(param, grad, "adam_update");
  require_same_shape(param, m, "adam_update");
  require_same_shape(param, v, "adam_update");
  const S b1 = static_cast<S>(hp.beta1);
  const S b2 = static_cast<S>(hp.beta2);
  const S corr1 = static_cast<S>(1.0 - std::pow(hp.beta1, double(t)));
  const S corr2 = static_cast<S>(1.0 - std::pow(hp.beta2, double(t)));
  const S lr = static_cast<S>(hp.lr);
  const S eps = static_cast<S>(hp.eps);
  S* pp = param.data();
  const S* pg = grad.data();
  S* pm = m.data();
  S* pv = v.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    pm[i] = b1 * pm[i] + (S(1) - b1) * pg[i];
    pv[i] = b2 * pv[i] + (S(1) - b2) * pg[i] * pg[i];
    const S mhat = pm[i] / corr1;
    const S vhat = pv[i] / corr2;
    pp[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// One Adam step over all parameters. Non-finite gradients abort the step
/// with NumericError before any state is touched.
template <typename S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state) {
  grads.for_each([](const char* name, const Tensor<S>& g) { require_finite(g, name); });
  state.t += 1;
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    adam_update_tensor(*ps[i], *gs[i], *ms[i], *vs[i], state.t, state.hyper);
  }
}

}  // namespace lcanet
