#include "normlab/gradsuite.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "normlab/errors.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/kernels.hpp"
#include "normlab/normalizers.hpp"
#include "normlab/rng.hpp"
#include "normlab/switchable.hpp"

namespace normlab {

namespace {
constexpr double kTol = 1e-5;

Tensor4 rand_tensor(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
  Tensor4 t(n, c, h, w);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

double project(const Tensor4& p, const Tensor4& y) {
  double s = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) s += p.data[i] * y.data[i];
  return s;
}

struct Suite {
  std::string module;
  std::string corrupt;
  bool corrupted = false;
  std::vector<GradSuiteEntry> out;

  static std::string module_of(const std::string& op) {
    if (op.rfind("sn_", 0) == 0) return "switchable";
    if (op.rfind("norm_", 0) == 0 || op.rfind("affine", 0) == 0) return "normalizers";
    return "tensor";
  }

  void add(const std::string& op, const std::function<double(const std::vector<double>&)>& f,
           const std::vector<double>& x, std::vector<double> analytic,
           const std::vector<bool>& mask = {}) {
    if (module != "all" && module_of(op) != module) return;
    if (op == corrupt) {
      for (double& g : analytic) g += 0.05 * (1.0 + std::fabs(g));
      corrupted = true;
    }
    const GradCheckReport r = finite_diff_check(f, x, analytic, kTol, mask);
    out.push_back({op, r.max_rel_err, kTol, r.pass});
  }
};

SNLayer make_sn_layer(const std::vector<NormKind>& omega, bool tied, SigmaAggregation agg, int c,
                      Rng& rng) {
  SNLayer layer;
  layer.state = make_ratio_state(omega, tied);
  for (double& v : layer.state.logits_mu) v = 0.4 * rng.normal();
  if (!tied) {
    for (double& v : layer.state.logits_sigma) v = 0.4 * rng.normal();
  }
  layer.gamma.resize(static_cast<size_t>(c));
  layer.beta.resize(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    layer.gamma[static_cast<size_t>(i)] = 1.0 + 0.2 * rng.normal();
    layer.beta[static_cast<size_t>(i)] = 0.1 * rng.normal();
  }
  layer.agg = agg;
  return layer;
}

void check_conv(Suite& suite) {
  Rng rng(11);
  const Tensor4 x = rand_tensor(rng, 2, 3, 6, 6);
  FilterBank w(4, 3, 3, 3);
  for (double& v : w.data) v = 0.3 * rng.normal();

  const ConvGeom geoms[2] = {{1, 1, 1}, {2, 1, 1}};
  const char* tags[2] = {"conv", "conv_strided"};
  for (int gi = 0; gi < 2; ++gi) {
    const ConvGeom g = geoms[gi];
    const Tensor4 y0 = conv2d(x, w, g);
    Tensor4 p(y0.n, y0.c, y0.h, y0.w);
    for (double& v : p.data) v = rng.normal();
    const ConvGrads grads = conv2d_grad(x, w, p, g);

    suite.add(std::string(tags[gi]) + ".dx",
              [&](const std::vector<double>& xv) {
                Tensor4 t = x;
                t.data = xv;
                return project(p, conv2d(t, w, g));
              },
              x.data, grads.dx.data);
    suite.add(std::string(tags[gi]) + ".dw",
              [&](const std::vector<double>& wv) {
                FilterBank wb = w;
                wb.data = wv;
                return project(p, conv2d(x, wb, g));
              },
              w.data, grads.dw.data);
  }
}

void check_linear(Suite& suite) {
  Rng rng(12);
  const Tensor4 x = rand_tensor(rng, 3, 5, 1, 1);
  FilterBank w(4, 5, 1, 1);
  for (double& v : w.data) v = 0.5 * rng.normal();
  std::vector<double> b(4);
  for (double& v : b) v = 0.2 * rng.normal();
  Tensor4 p(3, 4, 1, 1);
  for (double& v : p.data) v = rng.normal();
  const LinearGrads grads = linear_grad(x, w, p);

  suite.add("linear.dx",
            [&](const std::vector<double>& xv) {
              Tensor4 t = x;
              t.data = xv;
              return project(p, linear(t, w, b));
            },
            x.data, grads.dx.data);
  suite.add("linear.dw",
            [&](const std::vector<double>& wv) {
              FilterBank wb = w;
              wb.data = wv;
              return project(p, linear(x, wb, b));
            },
            w.data, grads.dweight.data);
  suite.add("linear.db",
            [&](const std::vector<double>& bv) { return project(p, linear(x, w, bv)); }, b,
            grads.dbias);
}

void check_pointwise(Suite& suite) {
  Rng rng(13);
  const Tensor4 x = rand_tensor(rng, 2, 3, 4, 4);
  Tensor4 p(2, 3, 1, 1);
  for (double& v : p.data) v = rng.normal();
  suite.add("gap.dx",
            [&](const std::vector<double>& xv) {
              Tensor4 t = x;
              t.data = xv;
              return project(p, global_avg_pool(t));
            },
            x.data, global_avg_pool_grad(x, p).data);

  Tensor4 pr(2, 3, 4, 4);
  for (double& v : pr.data) v = rng.normal();
  std::vector<bool> mask(x.data.size(), false);
  for (size_t i = 0; i < x.data.size(); ++i) mask[i] = std::fabs(x.data[i]) < 1e-3;
  suite.add("relu.dx",
            [&](const std::vector<double>& xv) {
              Tensor4 t = x;
              t.data = xv;
              return project(pr, relu(t));
            },
            x.data, relu_grad(x, pr).data, mask);

  std::vector<double> logits(7);
  for (double& v : logits) v = rng.normal();
  const int label = 3;
  suite.add("xent.dlogits",
            [&](const std::vector<double>& lv) { return softmax_cross_entropy(lv, label).loss; },
            logits, softmax_cross_entropy(logits, label).dlogits);
}

void check_plain_norms(Suite& suite) {
  Rng rng(14);
  const Tensor4 x = rand_tensor(rng, 4, 4, 3, 3);
  Tensor4 p(4, 4, 3, 3);
  for (double& v : p.data) v = rng.normal();

  struct Case {
    const char* tag;
    MomentScheme scheme;
  };
  std::vector<Case> cases;
  cases.push_back({"norm_bn.dx", {NormKind::batch, 1, {1, 0}}});
  cases.push_back({"norm_bn_sharded.dx", {NormKind::batch, 1, {2, 2}}});
  cases.push_back({"norm_in.dx", {NormKind::instance, 1, {1, 0}}});
  cases.push_back({"norm_ln.dx", {NormKind::layer, 1, {1, 0}}});
  cases.push_back({"norm_gn.dx", {NormKind::group, 2, {1, 0}}});
  for (const Case& c : cases) {
    NormCache cache;
    (void)normalize(x, c.scheme, kNormEps, &cache);
    const Tensor4 dx = norm_backward(p, cache);
    suite.add(c.tag,
              [&, c](const std::vector<double>& xv) {
                Tensor4 t = x;
                t.data = xv;
                return project(p, normalize(t, c.scheme));
              },
              x.data, dx.data);
  }

  std::vector<double> gamma(4), beta(4);
  for (double& v : gamma) v = 1.0 + 0.3 * rng.normal();
  for (double& v : beta) v = 0.2 * rng.normal();
  const AffineGrads ag = affine_backward(x, gamma, p);
  suite.add("affine.dx",
            [&](const std::vector<double>& xv) {
              Tensor4 t = x;
              t.data = xv;
              return project(p, affine_transform(t, gamma, beta));
            },
            x.data, ag.dxhat.data);
  suite.add("affine.dgamma",
            [&](const std::vector<double>& gv) {
              return project(p, affine_transform(x, gv, beta));
            },
            gamma, ag.dgamma);
  suite.add("affine.dbeta",
            [&](const std::vector<double>& bv) {
              return project(p, affine_transform(x, gamma, bv));
            },
            beta, ag.dbeta);
}

void check_switchable(Suite& suite) {
  Rng rng(15);
  const Tensor4 x = rand_tensor(rng, 4, 4, 5, 5);
  Tensor4 p(4, 4, 5, 5);
  for (double& v : p.data) v = rng.normal();

  struct Case {
    std::string tag;
    SNLayer layer;
    ShardConfig shard{1, 0};
    bool check_logits = true;
    bool check_affine = false;
  };
  std::vector<Case> cases;
  {
    Case c;
    c.tag = "sn_std";
    c.layer = make_sn_layer(full_omega(), false, SigmaAggregation::std_dev, 4, rng);
    c.check_affine = true;
    cases.push_back(c);
  }
  {
    Case c;
    c.tag = "sn_var";
    c.layer = make_sn_layer(full_omega(), false, SigmaAggregation::variance, 4, rng);
    cases.push_back(c);
  }
  {
    Case c;
    c.tag = "sn_sharded";
    c.layer = make_sn_layer(full_omega(), false, SigmaAggregation::std_dev, 4, rng);
    c.shard = {2, 2};
    cases.push_back(c);
  }
  {
    Case c;
    c.tag = "sn_subset";
    c.layer = make_sn_layer(omega_from_names("in,bn"), false, SigmaAggregation::std_dev, 4, rng);
    cases.push_back(c);
  }
  {
    Case c;
    c.tag = "sn_tied";
    c.layer = make_sn_layer(full_omega(), true, SigmaAggregation::std_dev, 4, rng);
    cases.push_back(c);
  }
  {
    Case c;
    c.tag = "sn_hard";
    c.layer = make_sn_layer(full_omega(), false, SigmaAggregation::std_dev, 4, rng);
    apply_hard_ratio(c.layer.state, harden(c.layer.state));
    c.check_logits = false;
    cases.push_back(c);
  }

  for (const Case& c : cases) {
    SNCache cache;
    (void)sn_forward(x, c.layer, c.shard, &cache);
    const SNGrads g = sn_backward(cache, p);

    suite.add(c.tag + ".dx",
              [&, c](const std::vector<double>& xv) {
                Tensor4 t = x;
                t.data = xv;
                return project(p, sn_forward(t, c.layer, c.shard));
              },
              x.data, g.dx.data);
    if (c.check_logits) {
      suite.add(c.tag + ".dlogits_mu",
                [&, c](const std::vector<double>& lv) {
                  SNLayer l2 = c.layer;
                  l2.state.logits_mu = lv;
                  return project(p, sn_forward(x, l2, c.shard));
                },
                c.layer.state.logits_mu, g.dlogits_mu);
      if (!c.layer.state.tied) {
        suite.add(c.tag + ".dlogits_sigma",
                  [&, c](const std::vector<double>& lv) {
                    SNLayer l2 = c.layer;
                    l2.state.logits_sigma = lv;
                    return project(p, sn_forward(x, l2, c.shard));
                  },
                  c.layer.state.logits_sigma, g.dlogits_sigma);
      }
    }
    if (c.check_affine) {
      suite.add(c.tag + ".dgamma",
                [&, c](const std::vector<double>& gv) {
                  SNLayer l2 = c.layer;
                  l2.gamma = gv;
                  return project(p, sn_forward(x, l2, c.shard));
                },
                c.layer.gamma, g.dgamma);
      suite.add(c.tag + ".dbeta",
                [&, c](const std::vector<double>& bv) {
                  SNLayer l2 = c.layer;
                  l2.beta = bv;
                  return project(p, sn_forward(x, l2, c.shard));
                },
                c.layer.beta, g.dbeta);
    }
  }
}
}  // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(const std::string& module,
                                                const std::string& corrupt_op) {
  if (module != "all" && module != "tensor" && module != "normalizers" &&
      module != "switchable") {
    throw ConfigError("unknown gradcheck module '" + module +
                      "' (expected all, tensor, normalizers or switchable)");
  }
  Suite suite;
  suite.module = module;
  suite.corrupt = corrupt_op;
  check_conv(suite);
  check_linear(suite);
  check_pointwise(suite);
  check_plain_norms(suite);
  check_switchable(suite);
  if (!corrupt_op.empty() && !suite.corrupted) {
    throw ConfigError("corrupt target '" + corrupt_op + "' does not name a gradcheck op in '" +
                      module + "'");
  }
  return suite.out;
}

std::string gradcheck_report(const std::vector<GradSuiteEntry>& entries) {
  std::string out;
  char buf[160];
  for (const GradSuiteEntry& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-24s max_rel_err %-12.3e tol %-8.0e %s\n", e.op.c_str(),
                  e.max_rel_err, e.tolerance, e.pass ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

bool gradcheck_all_pass(const std::vector<GradSuiteEntry>& entries) {
  for (const GradSuiteEntry& e : entries) {
    if (!e.pass) return false;
  }
  return true;
}

}  // namespace normlab
