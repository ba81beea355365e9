#include "nlrn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "nlrn/diff_ops.hpp"
#include "nlrn/model.hpp"
#include "nlrn/nonlocal.hpp"
#include "nlrn/rng.hpp"

namespace nlrn {

double fd_max_rel_error(DenseTensor<double>& param, const DenseTensor<double>& analytic,
                        const std::function<double()>& objective, double h) {
  if (!param.same_shape(analytic)) throw ShapeError("fd_max_rel_error shape mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = objective();
    param[i] = saved - h;
    const double down = objective();
    param[i] = saved;
    const double fd = (up - down) / (2 * h);
    // Magnitude-floored denominator: true-zero gradients would otherwise
    // drown in the cancellation noise of the central differences.
    const double rel =
        std::abs(fd - analytic[i]) / std::max({1.0, std::abs(fd), std::abs(analytic[i])});
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

using T64 = DenseTensor<double>;

T64 random_tensor(std::vector<int> shape, Rng& rng, double spread = 1.0) {
  T64 t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = spread * (2.0 * rng.uniform() - 1.0);
  return t;
}

double weighted_sum(const T64& value, const T64& weight) {
  double s = 0;
  for (std::size_t i = 0; i < value.size(); ++i) s += value[i] * weight[i];
  return s;
}

// --- diff_ops checks ----------------------------------------------------------

double check_conv2d(int ksize, int instances) {
  double worst = 0;
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(1000 + 17 * inst + ksize);
    const int in_ch = 1 + static_cast<int>(rng.uniform_index(3));
    const int out_ch = 1 + static_cast<int>(rng.uniform_index(3));
    const int h = 4 + static_cast<int>(rng.uniform_index(3));
    const int w = 4 + static_cast<int>(rng.uniform_index(3));

    ConvLayer<double> layer = ConvLayer<double>::make(out_ch, in_ch, ksize);
    layer.kernel = random_tensor(layer.kernel.shape(), rng);
    layer.bias = random_tensor(layer.bias.shape(), rng);
    T64 x = random_tensor({in_ch, h, w}, rng);
    const T64 cost = random_tensor({out_ch, h, w}, rng);

    auto objective = [&]() { return weighted_sum(conv2d_forward(x, layer), cost); };
    ConvTape<double> tape;
    conv2d_forward(x, layer, &tape);
    ConvGrads<double> grads = conv2d_backward(tape, cost);

    worst = std::max(worst, fd_max_rel_error(x, grads.x, objective));
    worst = std::max(worst, fd_max_rel_error(layer.kernel, grads.kernel, objective));
    worst = std::max(worst, fd_max_rel_error(layer.bias, grads.bias, objective));
  }
  return worst;
}

double check_relu(int instances) {
  double worst = 0;
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(2000 + inst);
    T64 x = random_tensor({3, 5}, rng);
    // Keep entries away from the kink.
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x[i]) < 1e-2) x[i] = x[i] < 0 ? x[i] - 0.05 : x[i] + 0.05;
    }
    const T64 cost = random_tensor(x.shape(), rng);
    auto objective = [&]() { return weighted_sum(relu_forward(x), cost); };
    ReluTape<double> tape;
    relu_forward(x, &tape);
    T64 gx = relu_backward(tape, cost);
    worst = std::max(worst, fd_max_rel_error(x, gx, objective));
  }
  return worst;
}

double check_batchnorm(int instances) {
  double worst = 0;
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(3000 + inst);
    const int n = 2, ch = 3, h = 3, w = 4;
    BatchNormLayer<double> layer = BatchNormLayer<double>::make(ch);
    layer.gamma = random_tensor({ch}, rng);
    layer.beta = random_tensor({ch}, rng);
    T64 x = random_tensor({n, ch, h, w}, rng);
    const T64 cost = random_tensor(x.shape(), rng);

    BatchNormTape<double>* no_tape = nullptr;
    auto objective = [&]() {
      return weighted_sum(
          batchnorm_forward(x, layer, BnMode::kTrain, no_tape, /*update_running=*/false), cost);
    };
    BatchNormTape<double> tape;
    batchnorm_forward(x, layer, BnMode::kTrain, &tape, false);
    BatchNormGrads<double> grads = batchnorm_backward(tape, cost);

    worst = std::max(worst, fd_max_rel_error(x, grads.x, objective));
    worst = std::max(worst, fd_max_rel_error(layer.gamma, grads.gamma, objective));
    worst = std::max(worst, fd_max_rel_error(layer.beta, grads.beta, objective));
  }
  return worst;
}

double check_softmax(int instances) {
  double worst = 0;
  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(4000 + inst);
    T64 logits = random_tensor({4, 6}, rng, 2.0);
    const T64 cost = random_tensor(logits.shape(), rng);
    auto objective = [&]() { return weighted_sum(softmax_rows_forward(logits), cost); };
    SoftmaxTape<double> tape;
    softmax_rows_forward(logits, &tape);
    T64 gl = softmax_rows_backward(tape, cost);
    worst = std::max(worst, fd_max_rel_error(logits, gl, objective));
  }
  return worst;
}

// --- nonlocal check -------------------------------------------------------------

double check_nonlocal(Metric metric, bool corrupt) {
  Rng rng(5000 + static_cast<int>(metric));
  const int m = 3, l = 2, h = 4, w = 4, q = 3;
  NonLocalWeights<double> weights = NonLocalWeights<double>::make(m, l, metric);
  weights.w_theta = random_tensor({m, l}, rng);
  weights.w_psi = random_tensor({m, l}, rng);
  weights.w_g = random_tensor({m, m}, rng);
  weights.h = 0.8;
  NeighborhoodSpec spec{q};

  T64 features = random_tensor({m, h, w}, rng);
  CorrelationState<double> prior = CorrelationState<double>::zeros(h, w, q);
  prior.logits = random_tensor({h, w, q, q}, rng, 0.5);
  const T64 cost_out = random_tensor({m, h, w}, rng);
  const T64 cost_emit = random_tensor({h, w, q, q}, rng, 0.5);

  auto objective = [&]() {
    NonLocalResult<double> res = nonlocal_forward(features, weights, spec, &prior);
    return weighted_sum(res.output, cost_out) + weighted_sum(res.emitted.logits, cost_emit);
  };

  NonLocalTape<double> tape;
  nonlocal_forward(features, weights, spec, &prior, &tape);
  NonLocalGrads<double> grads = nonlocal_backward(tape, cost_out, &cost_emit);
  if (corrupt) grads.w_g[0] += 1e-2;

  double worst = 0;
  worst = std::max(worst, fd_max_rel_error(features, grads.features, objective));
  worst = std::max(worst, fd_max_rel_error(weights.w_theta, grads.w_theta, objective));
  worst = std::max(worst, fd_max_rel_error(weights.w_psi, grads.w_psi, objective));
  worst = std::max(worst, fd_max_rel_error(weights.w_g, grads.w_g, objective));
  worst = std::max(worst, fd_max_rel_error(prior.logits, grads.prior_logits, objective));
  return worst;
}

// --- end-to-end NLRN check --------------------------------------------------------

double check_nlrn() {
  Rng rng(6000);
  NlrnConfig cfg;
  cfg.channels = 4;
  cfg.embed = 2;
  cfg.neighborhood = 3;
  cfg.unroll = 2;

  NlrnParams<double> params = NlrnParams<double>::make(cfg);
  params.xavier_init(rng);
  T64 noisy = random_tensor({1, 1, 6, 6}, rng, 0.5);
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = 0.5 + 0.4 * noisy[i];
  T64 clean = noisy;
  for (std::size_t i = 0; i < clean.size(); ++i) clean[i] += 0.1 * (2 * rng.uniform() - 1);

  auto objective = [&]() {
    ForwardRecord<double> rec =
        nlrn_forward(noisy, params, cfg, BnMode::kTrain, /*update_running=*/false, false);
    return nlrn_loss(rec.residual, noisy, clean);
  };

  ForwardRecord<double> record =
      nlrn_forward(noisy, params, cfg, BnMode::kTrain, false, true);
  NlrnGrads<double> grads = nlrn_backward(record, clean);

  auto param_named = named_tensors(params);
  auto grad_named = named_tensors(grads.params);
  double worst = 0;
  for (std::size_t i = 0; i < param_named.size(); ++i) {
    if (!param_named[i].trainable) continue;
    worst = std::max(worst, fd_max_rel_error(*param_named[i].tensor, *grad_named[i].tensor,
                                             objective));
  }
  return worst;
}

constexpr int kDiffOpInstances = 20;

}  // namespace

std::vector<std::string> gradcheck_registry(const std::string& module) {
  std::vector<std::string> names;
  const bool all = module == "all";
  if (all || module == "diff_ops") {
    names.insert(names.end(),
                 {"conv2d_3x3", "conv2d_1x1", "relu", "batchnorm", "softmax_rows"});
  }
  if (all || module == "nonlocal") {
    for (Metric metric :
         {Metric::kEuclideanGaussian, Metric::kDot, Metric::kEmbeddedDot, Metric::kGaussian,
          Metric::kSymEmbeddedGaussian, Metric::kEmbeddedGaussian}) {
      names.push_back("nonlocal[" + metric_to_string(metric) + "]");
    }
  }
  if (all || module == "nlrn") {
    names.push_back("nlrn_bptt");
  }
  if (names.empty()) throw ShapeError("unknown gradcheck module: " + module);
  return names;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& module, bool corrupt) {
  std::vector<GradCheckResult> results;
  for (const std::string& name : gradcheck_registry(module)) {
    GradCheckResult r;
    r.name = name;
    if (name == "conv2d_3x3") {
      r.max_rel_error = check_conv2d(3, kDiffOpInstances);
    } else if (name == "conv2d_1x1") {
      r.max_rel_error = check_conv2d(1, kDiffOpInstances);
    } else if (name == "relu") {
      r.max_rel_error = check_relu(kDiffOpInstances);
    } else if (name == "batchnorm") {
      r.max_rel_error = check_batchnorm(kDiffOpInstances);
    } else if (name == "softmax_rows") {
      r.max_rel_error = check_softmax(kDiffOpInstances);
    } else if (name.rfind("nonlocal[", 0) == 0) {
      const std::string metric = name.substr(9, name.size() - 10);
      r.max_rel_error = check_nonlocal(metric_from_string(metric), corrupt);
    } else if (name == "nlrn_bptt") {
      r.max_rel_error = check_nlrn();
    }
    r.pass = r.max_rel_error <= kGradCheckTolerance;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace nlrn
