#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lcanet/model.hpp"
#include "lcanet/optim.hpp"
#include "lcanet/random.hpp"

// Central-finite-difference verification of every analytic backward pass.
// The checker only ever calls forward passes, so it is independent of the
// gradient code it validates. ReLU kinks make finite differences unreliable
// near zero pre-activations; inputs are redrawn (deterministically) until all
// pre-activations clear a margin well above the FD step.
namespace lcanet::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Relative error is |a - n| / max(|a|, |n|, denom_floor); the floor keeps
  // FD rounding noise on near-zero gradients from registering as error.
  double denom_floor = 1e-4;
  std::uint32_t seed = 7;
  std::size_t max_checks = 0;  // 0 = check every entry
};

template <typename S>
Options default_options() {
  if constexpr (std::is_same_v<S, double>) {
    return Options{};
  } else {
    return Options{.step = 5e-3, .tolerance = 1e-3, .denom_floor = 1e-2};
  }
}

struct Result {
  std::string name;
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  double seconds = 0.0;
  std::string note;
};

inline double guarded_rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

template <typename S>
struct Problem {
  std::function<double()> loss;              // evaluated at current tensor values
  std::vector<Tensor<S>*> tensors;           // perturbed in place
  std::vector<const Tensor<S>*> analytic;    // matching analytic gradients
};

template <typename S>
Result run_fd(Problem<S>& prob, std::string name, const Options& opt) {
  const auto start = std::chrono::steady_clock::now();
  Result res;
  res.name = std::move(name);

  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t ti = 0; ti < prob.tensors.size(); ++ti) {
    for (std::size_t i = 0; i < prob.tensors[ti]->size(); ++i) entries.emplace_back(ti, i);
  }
  if (opt.max_checks > 0 && entries.size() > opt.max_checks) {
    std::vector<std::pair<std::size_t, std::size_t>> sampled;
    sampled.reserve(opt.max_checks);
    std::mt19937 rng(opt.seed ^ 0x5bd1e995u);
    std::sample(entries.begin(), entries.end(), std::back_inserter(sampled), opt.max_checks, rng);
    entries = std::move(sampled);
  }

  for (auto [ti, i] : entries) {
    S* slot = prob.tensors[ti]->data() + i;
    const S saved = *slot;
    *slot = saved + static_cast<S>(opt.step);
    const double plus = prob.loss();
    *slot = saved - static_cast<S>(opt.step);
    const double minus = prob.loss();
    *slot = saved;
    const double numeric = (plus - minus) / (2.0 * opt.step);
    const double analytic = static_cast<double>(prob.analytic[ti]->data()[i]);
    res.max_rel_err = std::max(res.max_rel_err, guarded_rel_err(analytic, numeric, opt.denom_floor));
  }
  res.checked = entries.size();
  res.pass = res.max_rel_err < opt.tolerance;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

template <typename S>
double project(const Tensor<S>& y, const Tensor<S>& r) {
  double acc = 0.0;
  const S* py = y.data();
  const S* pr = r.data();
  for (std::size_t i = 0; i < y.size(); ++i) acc += double(py[i]) * double(pr[i]);
  return acc;
}

template <typename S>
double min_abs(const Tensor<S>& t) {
  double m = std::numeric_limits<double>::infinity();
  for (S v : t.values()) m = std::min(m, std::abs(double(v)));
  return m;
}

inline constexpr int kMaxSeedTries = 500;

}  // namespace detail

template <typename S>
Result check_conv2d(Activation act, const Options& opt, bool transposed = false) {
  const double margin = 10.0 * opt.step;
  for (int attempt = 0; attempt < detail::kMaxSeedTries; ++attempt) {
    std::mt19937 rng(opt.seed + 977u * static_cast<std::uint32_t>(attempt));
    Tensor<S> x = uniform_tensor<S>({6, 6, 2}, rng, -1.0, 1.0);
    ConvParams<S> p{uniform_tensor<S>({3, 3, 2, 2}, rng, -0.5, 0.5),
                    uniform_tensor<S>({2}, rng, -0.5, 0.5)};
    Tensor<S> r = uniform_tensor<S>({6, 6, 2}, rng, -1.0, 1.0);

    ConvCache<S> cache;
    transposed ? deconv2d_forward(x, p, act, &cache) : conv2d_forward(x, p, act, &cache);
    if (act == Activation::relu && detail::min_abs(cache.preact) < margin) continue;

    auto bwd = transposed ? deconv2d_backward(cache, p, r) : conv2d_backward(cache, p, r);
    detail::Problem<S> prob;
    prob.loss = [&] {
      return detail::project(transposed ? deconv2d_forward(x, p, act) : conv2d_forward(x, p, act),
                             r);
    };
    prob.tensors = {&x, &p.w, &p.b};
    prob.analytic = {&bwd.dx, &bwd.grads.w, &bwd.grads.b};
    std::string name = transposed ? "deconv2d" : "conv2d";
    name += act == Activation::relu ? "[relu]" : "[linear]";
    return detail::run_fd(prob, std::move(name), opt);
  }
  return Result{.name = transposed ? "deconv2d" : "conv2d",
                .note = "no input with safe ReLU margin found"};
}

template <typename S>
Result check_dense(Activation act, const Options& opt) {
  const double margin = 10.0 * opt.step;
  for (int attempt = 0; attempt < detail::kMaxSeedTries; ++attempt) {
    std::mt19937 rng(opt.seed + 1409u * static_cast<std::uint32_t>(attempt));
    Tensor<S> x = uniform_tensor<S>({5, 4, 6}, rng, -1.0, 1.0);
    DenseParams<S> p{uniform_tensor<S>({6, 3}, rng, -0.7, 0.7),
                     uniform_tensor<S>({3}, rng, -0.5, 0.5)};
    Tensor<S> r = uniform_tensor<S>({5, 4, 3}, rng, -1.0, 1.0);

    DenseCache<S> cache;
    dense_forward(x, p, act, &cache);
    if (act == Activation::relu && detail::min_abs(cache.preact) < margin) continue;

    auto bwd = dense_backward(cache, p, r);
    detail::Problem<S> prob;
    prob.loss = [&] { return detail::project(dense_forward(x, p, act), r); };
    prob.tensors = {&x, &p.w, &p.b};
    prob.analytic = {&bwd.dx, &bwd.grads.w, &bwd.grads.b};
    return detail::run_fd(prob, act == Activation::relu ? "dense[relu]" : "dense[linear]", opt);
  }
  return Result{.name = "dense", .note = "no input with safe ReLU margin found"};
}

template <typename S>
Result check_avgpool2(const Options& opt) {
  std::mt19937 rng(opt.seed);
  Tensor<S> x = uniform_tensor<S>({6, 8, 3}, rng, -1.0, 1.0);
  Tensor<S> r = uniform_tensor<S>({3, 4, 3}, rng, -1.0, 1.0);
  PoolCache cache;
  avgpool2_forward(x, &cache);
  Tensor<S> dx = avgpool2_backward<S>(cache, r);
  detail::Problem<S> prob;
  prob.loss = [&] { return detail::project(avgpool2_forward(x), r); };
  prob.tensors = {&x};
  prob.analytic = {&dx};
  return detail::run_fd(prob, "avgpool2", opt);
}

template <typename S>
Result check_upsample2(const Options& opt) {
  std::mt19937 rng(opt.seed);
  Tensor<S> x = uniform_tensor<S>({3, 4, 3}, rng, -1.0, 1.0);
  Tensor<S> r = uniform_tensor<S>({6, 8, 3}, rng, -1.0, 1.0);
  UpsampleCache cache;
  upsample2_forward(x, &cache);
  Tensor<S> dx = upsample2_backward<S>(cache, r);
  detail::Problem<S> prob;
  prob.loss = [&] { return detail::project(upsample2_forward(x), r); };
  prob.tensors = {&x};
  prob.analytic = {&dx};
  return detail::run_fd(prob, "upsample2", opt);
}

template <typename S>
Result check_relu(const Options& opt) {
  std::mt19937 rng(opt.seed);
  // Entries are kept away from the kink; the x == 0 convention is checked
  // exactly in unit tests, not by finite differences.
  Tensor<S> x({4, 4, 3});
  for (S& v : x.values()) {
    const double u = 2.0 * unit_uniform(rng) - 1.0;
    v = static_cast<S>(u + (u >= 0 ? 0.1 : -0.1));
  }
  Tensor<S> r = uniform_tensor<S>({4, 4, 3}, rng, -1.0, 1.0);
  Tensor<S> analytic = mul(relu_mask(x), r);
  detail::Problem<S> prob;
  prob.loss = [&] { return detail::project(relu(x), r); };
  prob.tensors = {&x};
  prob.analytic = {&analytic};
  return detail::run_fd(prob, "relu", opt);
}

/// Full-stack check: Eq.-style MSE loss of the 11-layer forward pass on an
/// 8x8x3 input, differentiated against a seeded sample of the parameters.
template <typename S>
Result check_model(const Options& opt) {
  const double margin = 20.0 * opt.step;
  for (int attempt = 0; attempt < detail::kMaxSeedTries; ++attempt) {
    const std::uint32_t seed = opt.seed + 31337u * static_cast<std::uint32_t>(attempt);
    Model<S> model = Model<S>::init(seed);
    std::mt19937 rng(seed ^ 0xabcdef12u);
    Tensor<S> x = uniform_tensor<S>({8, 8, 3}, rng, 0.0, 1.0);
    Tensor<S> target = uniform_tensor<S>({8, 8, 3}, rng, 0.0, 1.0);

    StackCache<S> cache;
    model.forward(x, &cache);
    double min_pre = std::numeric_limits<double>::infinity();
    for (const Tensor<S>* pre : {&cache.conv1.preact, &cache.conv2.preact, &cache.dense1.preact,
                                 &cache.dense2.preact, &cache.deconv1.preact,
                                 &cache.deconv2.preact}) {
      min_pre = std::min(min_pre, detail::min_abs(*pre));
    }
    if (min_pre < margin) continue;

    Tensor<S> y = model.forward(x, nullptr);
    auto loss0 = mse_loss(y, target);
    ModelParams<S> grads = model.backward(cache, loss0.grad);

    detail::Problem<S> prob;
    prob.loss = [&] { return double(mse_loss(model.forward(x), target).loss); };
    for (Tensor<S>* t : tensor_list(model.params())) prob.tensors.push_back(t);
    for (const Tensor<S>* t : tensor_list(grads)) prob.analytic.push_back(t);
    Options model_opt = opt;
    if (model_opt.max_checks == 0) model_opt.max_checks = 200;
    return detail::run_fd(prob, "model", model_opt);
  }
  return Result{.name = "model", .note = "no input with safe ReLU margin found"};
}

/// Every layer kind (both activations where applicable) plus the full stack.
/// Layer checks use opt.tolerance; the full-stack check uses model_tolerance.
template <typename S>
std::vector<Result> run_all(const Options& opt, double model_tolerance) {
  std::vector<Result> out;
  out.push_back(check_conv2d<S>(Activation::linear, opt));
  out.push_back(check_conv2d<S>(Activation::relu, opt));
  out.push_back(check_conv2d<S>(Activation::linear, opt, /*transposed=*/true));
  out.push_back(check_conv2d<S>(Activation::relu, opt, /*transposed=*/true));
  out.push_back(check_dense<S>(Activation::linear, opt));
  out.push_back(check_dense<S>(Activation::relu, opt));
  out.push_back(check_avgpool2<S>(opt));
  out.push_back(check_upsample2<S>(opt));
  out.push_back(check_relu<S>(opt));
  Options mo = opt;
  mo.tolerance = model_tolerance;
  out.push_back(check_model<S>(mo));
  return out;
}

}  // namespace lcanet::gradcheck
