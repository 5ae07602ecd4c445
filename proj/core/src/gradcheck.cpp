#include "dida/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "dida/dida_module.hpp"
#include "dida/ops.hpp"
#include "dida/rng.hpp"
#include "dida/tensor.hpp"

namespace dida {

namespace {

TensorD rand_tensor(Shape shape, RngStream& rng, bool requires_grad,
                    double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from_vec(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> rand_weights(int64_t n, RngStream& rng) {
  std::vector<double> w(static_cast<size_t>(n));
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return w;
}

// Projects an op output to a scalar with fixed random weights so every
// output position contributes to the checked gradient.
struct Problem {
  std::vector<TensorD> inputs;
  std::function<TensorD()> forward;
};

double check_problem(Problem& p, double eps) {
  TensorD loss = p.forward();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : p.inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  double worst = 0.0;
  NoGradGuard ng;
  for (size_t i = 0; i < p.inputs.size(); ++i) {
    auto buf = p.inputs[i].raw_data();
    for (size_t e = 0; e < buf.size(); ++e) {
      double orig = buf[e];
      buf[e] = orig + eps;
      double lp = p.forward().item();
      buf[e] = orig - eps;
      double lm = p.forward().item();
      buf[e] = orig;
      double fd = (lp - lm) / (2.0 * eps);
      double a = analytic[i][e];
      double denom = std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

using CaseFn = std::function<double(uint64_t seed, double eps)>;

struct CaseDef {
  std::string name;
  CaseFn run;
};

double conv_case(uint64_t seed, double eps, int stride, int pad, int dil,
                 int k, bool bias) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 3);
  int64_t cout = rng.uniform_int(1, 3);
  int64_t h = rng.uniform_int(5, 7), w = rng.uniform_int(5, 7);
  Problem p;
  p.inputs.push_back(rand_tensor({n, cin, h, w}, rng, true));
  p.inputs.push_back(rand_tensor({cout, cin, k, k}, rng, true));
  if (bias) p.inputs.push_back(rand_tensor({cout}, rng, true));
  ConvOpts opts{stride, pad, dil};
  auto probe = conv2d(p.inputs[0], p.inputs[1],
                      bias ? p.inputs[2] : TensorD(), opts);
  auto wts = rand_weights(probe.numel(), rng);
  p.forward = [&p, opts, bias, wts] {
    auto y = conv2d(p.inputs[0], p.inputs[1], bias ? p.inputs[2] : TensorD(),
                    opts);
    return weighted_sum(y, std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double depthwise_case(uint64_t seed, double eps, int dil) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 3), c = rng.uniform_int(1, 3);
  int64_t h = rng.uniform_int(5, 7), w = rng.uniform_int(5, 7);
  int pad = dil;  // 3x3 kernels, size-preserving padding
  Problem p;
  p.inputs.push_back(rand_tensor({n, c, h, w}, rng, true));
  p.inputs.push_back(rand_tensor({n, c, 3, 3}, rng, true));
  auto wts = rand_weights(n * c * h * w, rng);
  p.forward = [&p, pad, dil, wts] {
    auto y = depthwise_conv2d(p.inputs[0], p.inputs[1], pad, dil);
    return weighted_sum(y, std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double linear_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 4), cin = rng.uniform_int(2, 6);
  int64_t cout = rng.uniform_int(1, 5);
  Problem p;
  p.inputs.push_back(rand_tensor({n, cin}, rng, true));
  p.inputs.push_back(rand_tensor({cout, cin}, rng, true));
  p.inputs.push_back(rand_tensor({cout}, rng, true));
  auto wts = rand_weights(n * cout, rng);
  p.forward = [&p, wts] {
    auto y = linear(p.inputs[0], p.inputs[1], p.inputs[2]);
    return weighted_sum(y, std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double relu_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(4, 32);
  auto x = rand_tensor({n}, rng, true);
  // Keep inputs away from the kink so finite differences stay valid.
  for (auto& v : x.raw_data())
    if (std::abs(v) < 1e-3) v += (v >= 0 ? 1e-2 : -1e-2);
  Problem p;
  p.inputs.push_back(x);
  auto wts = rand_weights(n, rng);
  p.forward = [&p, wts] {
    return weighted_sum(relu(p.inputs[0]), std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double gap_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 3), c = rng.uniform_int(1, 4);
  int64_t h = rng.uniform_int(2, 6), w = rng.uniform_int(2, 6);
  Problem p;
  p.inputs.push_back(rand_tensor({n, c, h, w}, rng, true));
  auto wts = rand_weights(n * c, rng);
  p.forward = [&p, wts] {
    return weighted_sum(global_avg_pool(p.inputs[0]),
                        std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double maxpool_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
  int64_t h = 2 * rng.uniform_int(1, 3), w = 2 * rng.uniform_int(1, 3);
  auto x = rand_tensor({n, c, h, w}, rng, true, 0.0, 1.0);
  // Separate window entries so the argmax cannot flip under perturbation.
  {
    auto buf = x.raw_data();
    for (int64_t nc = 0; nc < n * c; ++nc)
      for (int64_t oy = 0; oy < h / 2; ++oy)
        for (int64_t ox = 0; ox < w / 2; ++ox) {
          double bump = 0.0;
          for (int64_t ki = 0; ki < 2; ++ki)
            for (int64_t kj = 0; kj < 2; ++kj) {
              buf[static_cast<size_t>(nc * h * w + (oy * 2 + ki) * w + ox * 2 +
                                      kj)] += bump;
              bump += 0.05;
            }
        }
  }
  Problem p;
  p.inputs.push_back(x);
  auto wts = rand_weights(n * c * (h / 2) * (w / 2), rng);
  p.forward = [&p, wts] {
    return weighted_sum(max_pool2x2(p.inputs[0]),
                        std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double batchnorm_case(uint64_t seed, double eps, bool training) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(2, 4), c = rng.uniform_int(1, 3);
  int64_t h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4);
  Problem p;
  p.inputs.push_back(rand_tensor({n, c, h, w}, rng, true));
  p.inputs.push_back(rand_tensor({c}, rng, true, 0.5, 1.5));   // gamma
  p.inputs.push_back(rand_tensor({c}, rng, true, -0.5, 0.5));  // beta
  auto rm0 = rand_tensor({c}, rng, false, -0.2, 0.2);
  auto rv0 = rand_tensor({c}, rng, false, 0.5, 1.5);
  auto wts = rand_weights(n * c * h * w, rng);
  p.forward = [&p, rm0, rv0, training, wts] {
    // Fresh running-stat copies keep the closure pure.
    auto rm = rm0.detach();
    auto rv = rv0.detach();
    auto y = batch_norm2d(p.inputs[0], p.inputs[1], p.inputs[2], rm, rv,
                          training);
    return weighted_sum(y, std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double ce_case(uint64_t seed, double eps, bool weighted) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(2, 5), k = rng.uniform_int(2, 7);
  Problem p;
  p.inputs.push_back(rand_tensor({n, k}, rng, true, -2.0, 2.0));
  std::vector<int> labels(static_cast<size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, k - 1));
  std::vector<double> w;
  if (weighted) {
    w.resize(static_cast<size_t>(n));
    for (auto& v : w) v = rng.uniform(0.0, 1.0);
  }
  p.forward = [&p, labels, w] {
    return softmax_cross_entropy(p.inputs[0], labels,
                                 std::span<const double>(w));
  };
  return check_problem(p, eps);
}

double softmax_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(1, 4), k = rng.uniform_int(2, 6);
  Problem p;
  p.inputs.push_back(rand_tensor({n, k}, rng, true, -2.0, 2.0));
  auto wts = rand_weights(n * k, rng);
  p.forward = [&p, wts] {
    return weighted_sum(softmax(p.inputs[0]), std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

// reshape -> swap_axes -> concat -> broadcast composite.
double shape_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  Problem p;
  p.inputs.push_back(rand_tensor({1, 2, 1, 3}, rng, true));
  p.inputs.push_back(rand_tensor({1, 2, 1, 3}, rng, true));
  auto wts = rand_weights(2 * 4 * 3, rng);
  p.forward = [&p, wts] {
    auto s = swap_axes(p.inputs[0], 1, 3);                    // (1,3,1,2)
    auto s2 = swap_axes(p.inputs[1], 1, 3);                   // (1,3,1,2)
    auto cat = concat_channels(std::vector<TensorD>{s, s2});  // (1,6,1,2)
    auto r = reshape(cat, {4, 3});
    auto b = broadcast_batch(r, 2);
    return weighted_sum(b, std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

double mixstyle_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  int64_t n = rng.uniform_int(2, 4), c = rng.uniform_int(1, 3);
  int64_t h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4);
  auto x = rand_tensor({n, c, h, w}, rng, true);
  std::vector<double> lam(static_cast<size_t>(n));
  for (auto& l : lam) l = rng.uniform(0.1, 0.9);
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm.begin(), perm.end());

  auto wts = rand_weights(n * c * h * w, rng);
  // Analytic grad from the op itself.
  auto loss = weighted_sum(mixstyle(x, std::span<const double>(lam), perm),
                           std::span<const double>(wts));
  loss.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  // The op detaches channel statistics, so its declared jacobian treats them
  // as constants. Finite-difference the stat-frozen functional form.
  int64_t plane = h * w;
  std::vector<double> mu(static_cast<size_t>(n * c)),
      sig(static_cast<size_t>(n * c));
  auto base = std::vector<double>(x.data().begin(), x.data().end());
  for (int64_t nc = 0; nc < n * c; ++nc) {
    double m = 0;
    for (int64_t j = 0; j < plane; ++j)
      m += base[static_cast<size_t>(nc * plane + j)];
    m /= static_cast<double>(plane);
    double v = 0;
    for (int64_t j = 0; j < plane; ++j) {
      double d = base[static_cast<size_t>(nc * plane + j)] - m;
      v += d * d;
    }
    mu[static_cast<size_t>(nc)] = m;
    sig[static_cast<size_t>(nc)] = std::sqrt(v / static_cast<double>(plane) + 1e-6);
  }
  auto frozen = [&](const std::vector<double>& xv) {
    double acc = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        size_t nc = static_cast<size_t>(i * c + ch);
        size_t pc = static_cast<size_t>(perm[static_cast<size_t>(i)] * c + ch);
        double l = lam[static_cast<size_t>(i)];
        double mmu = l * mu[nc] + (1 - l) * mu[pc];
        double msig = l * sig[nc] + (1 - l) * sig[pc];
        for (int64_t j = 0; j < plane; ++j) {
          size_t idx = nc * static_cast<size_t>(plane) + static_cast<size_t>(j);
          double y = msig * (xv[idx] - mu[nc]) / sig[nc] + mmu;
          acc += wts[idx] * y;
        }
      }
    return acc;
  };
  double worst = 0;
  std::vector<double> xv = base;
  for (size_t e = 0; e < xv.size(); ++e) {
    double orig = xv[e];
    xv[e] = orig + eps;
    double lp = frozen(xv);
    xv[e] = orig - eps;
    double lm = frozen(xv);
    xv[e] = orig;
    double fd = (lp - lm) / (2 * eps);
    double a = analytic[e];
    double denom = std::max({1.0, std::abs(a), std::abs(fd)});
    worst = std::max(worst, std::abs(a - fd) / denom);
  }
  return worst;
}

// Full generator chain (pool -> reduce -> expand -> reshape) for both
// branches, with per-branch reductions so those weights are exercised too.
double dida_generate_case(uint64_t seed, double eps) {
  RngStream rng(seed);
  DidaConfig cfg;
  cfg.in_channels = 4;
  cfg.reduction = 2;
  cfg.share_reduction = false;
  cfg.out_channels = 4;
  RngStream init(derive_seed(seed, "init"));
  DidaModule<double> mod(cfg, init);
  std::vector<ParamRef<double>> refs;
  mod.collect("dida", refs);
  Problem p;
  p.inputs.push_back(rand_tensor({2, 4, 3, 3}, rng, true));
  for (auto& r : refs) {
    // conv1 (middle path) and conv4 (projection) sit outside the generator.
    if (r.name.find(".conv1.") != std::string::npos ||
        r.name.find(".conv4.") != std::string::npos) {
      continue;
    }
    p.inputs.push_back(r.tensor);
  }
  auto w0 = rand_weights(2 * 2 * 3 * 3, rng);
  auto w1 = rand_weights(2 * 2 * 3 * 3, rng);
  p.forward = [&p, &mod, w0, w1] {
    auto b0 = weighted_sum(mod.generate_kernels(p.inputs[0], 0),
                           std::span<const double>(w0));
    auto b1 = weighted_sum(mod.generate_kernels(p.inputs[0], 1),
                           std::span<const double>(w1));
    return add(b0, b1);
  };
  return check_problem(p, eps);
}

// End-to-end residual (middle reduction, kernel generation or static banks,
// dilated depthwise application, shared projection, concat).
double dida_residual_case(uint64_t seed, double eps, bool static_mode) {
  RngStream rng(seed);
  DidaConfig cfg;
  cfg.in_channels = 4;
  cfg.reduction = 2;
  cfg.static_kernels = static_mode;
  cfg.out_channels = 4;
  RngStream init(derive_seed(seed, "init"));
  DidaModule<double> mod(cfg, init);
  std::vector<ParamRef<double>> refs;
  mod.collect("dida", refs);
  Problem p;
  p.inputs.push_back(rand_tensor({2, 4, 4, 4}, rng, true));
  for (auto& r : refs) {
    // Re-randomize every weight; conv4 starts at zero, which would block
    // gradient flow into everything upstream of it.
    for (auto& v : r.tensor.raw_data()) v = rng.uniform(-0.5, 0.5);
    p.inputs.push_back(r.tensor);
  }
  auto wts = rand_weights(2 * 4 * 4 * 4, rng);
  p.forward = [&p, &mod, wts] {
    return weighted_sum(mod.forward(p.inputs[0]), std::span<const double>(wts));
  };
  return check_problem(p, eps);
}

std::vector<CaseDef> op_cases() {
  using namespace std::placeholders;
  std::vector<CaseDef> cases;
  cases.push_back({"conv2d.basic", [](uint64_t s, double e) {
                     return conv_case(s, e, 1, 1, 1, 3, false);
                   }});
  cases.push_back({"conv2d.bias", [](uint64_t s, double e) {
                     return conv_case(s, e, 1, 1, 1, 3, true);
                   }});
  cases.push_back({"conv2d.strided", [](uint64_t s, double e) {
                     return conv_case(s, e, 2, 1, 1, 3, false);
                   }});
  cases.push_back({"conv2d.dilated", [](uint64_t s, double e) {
                     return conv_case(s, e, 1, 2, 2, 3, false);
                   }});
  cases.push_back({"conv2d.1x1", [](uint64_t s, double e) {
                     return conv_case(s, e, 1, 0, 1, 1, false);
                   }});
  cases.push_back({"conv2d.5x5", [](uint64_t s, double e) {
                     return conv_case(s, e, 1, 2, 1, 5, false);
                   }});
  cases.push_back({"depthwise.d1", [](uint64_t s, double e) {
                     return depthwise_case(s, e, 1);
                   }});
  cases.push_back({"depthwise.d2", [](uint64_t s, double e) {
                     return depthwise_case(s, e, 2);
                   }});
  cases.push_back({"linear", linear_case});
  cases.push_back({"relu", relu_case});
  cases.push_back({"global_avg_pool", gap_case});
  cases.push_back({"max_pool2x2", maxpool_case});
  cases.push_back({"batch_norm.train", [](uint64_t s, double e) {
                     return batchnorm_case(s, e, true);
                   }});
  cases.push_back({"batch_norm.eval", [](uint64_t s, double e) {
                     return batchnorm_case(s, e, false);
                   }});
  cases.push_back({"softmax_ce.mean", [](uint64_t s, double e) {
                     return ce_case(s, e, false);
                   }});
  cases.push_back({"softmax_ce.weighted", [](uint64_t s, double e) {
                     return ce_case(s, e, true);
                   }});
  cases.push_back({"softmax", softmax_case});
  cases.push_back({"shape_ops", shape_case});
  cases.push_back({"mixstyle", mixstyle_case});
  cases.push_back({"dida.generate_kernels", dida_generate_case});
  cases.push_back({"dida.residual", [](uint64_t s, double e) {
                     return dida_residual_case(s, e, false);
                   }});
  cases.push_back({"dida.residual_static", [](uint64_t s, double e) {
                     return dida_residual_case(s, e, true);
                   }});
  return cases;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck(const std::string& which, int seeds,
                                         double tol, double eps) {
  std::vector<GradCheckCase> out;
  auto cases = op_cases();
  for (const auto& c : cases) {
    if (which != "all" && c.name.find(which) == std::string::npos) continue;
    GradCheckCase r{c.name, 0.0, false};
    for (int s = 0; s < seeds; ++s)
      r.max_rel_err =
          std::max(r.max_rel_err, c.run(derive_seed(1234, c.name, s), eps));
    r.pass = r.max_rel_err <= tol;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dida
