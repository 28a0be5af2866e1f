// Acceptance gate for the normalization laboratory.  Each numbered check
// prints exactly one CRITERION line; the process exits 0 only if all ten
// pass.  Tolerances are pinned here, next to the checks that use them.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "normlab/analytics.hpp"
#include "normlab/cli.hpp"
#include "normlab/errors.hpp"
#include "normlab/model.hpp"
#include "normlab/normalizers.hpp"
#include "normlab/rng.hpp"
#include "normlab/switchable.hpp"
#include "normlab/trainer.hpp"

using namespace normlab;

namespace {

constexpr double kEqTol = 1e-12;       // elementwise equivalence oracles
constexpr double kStepTol = 1e-10;     // per-step training equivalence
constexpr double kSimplexTol = 1e-9;   // ratio sums across a training run
constexpr double kKlTol = 1e-12;       // divergence oracles
constexpr double kAccPoints = 2.0;     // criterion 8 accuracy margin, percent

struct Criterion {
  int id = 0;
  bool pass = false;
  std::string text;
};
std::vector<Criterion> board(10);

void record(int id, bool pass, const std::string& text) {
  board[static_cast<size_t>(id - 1)] = {id, pass, text};
  std::fprintf(stderr, "[acceptance] criterion %d %s\n", id, pass ? "pass" : "FAIL");
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cmd(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Tensor4 rand_tensor(Rng& rng, int n, int c, int h, int w) {
  Tensor4 t(n, c, h, w);
  for (double& v : t.data) v = rng.normal();
  return t;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

// ---- shared experiment scales ------------------------------------------

// Desk-scale task for the trend criteria: 16x16 synthetic, 4 classes.
ExperimentConfig desk_config(uint64_t seed, int n_shards, int per_shard) {
  ExperimentConfig cfg;
  cfg.synth_classes = 4;
  cfg.synth_train = 128;
  cfg.synth_test = 128;
  cfg.synth_size = 16;
  cfg.synth_channels = 3;
  cfg.synth_noise = 0.35;
  cfg.n_shards = n_shards;
  cfg.per_shard = per_shard;
  cfg.epochs = 30;
  cfg.seed = seed;
  cfg.lr0 = 0.1;
  cfg.schedule.milestones = {20, 35};
  cfg.schedule.total_epochs = 45;
  cfg.eval_batch = 64;
  return cfg;
}

// Small config for the fast equivalence / determinism checks.
ExperimentConfig tiny_config(uint64_t seed) {
  ExperimentConfig cfg;
  cfg.synth_classes = 3;
  cfg.synth_train = 24;
  cfg.synth_test = 12;
  cfg.synth_size = 8;
  cfg.synth_channels = 2;
  cfg.synth_noise = 0.15;
  cfg.n_shards = 2;
  cfg.per_shard = 4;
  cfg.epochs = 3;
  cfg.eval_batch = 8;
  cfg.seed = seed;
  cfg.lr0 = 0.05;
  cfg.lr_reference_batch = 8;
  cfg.schedule.milestones = {100};
  cfg.schedule.total_epochs = 100;
  return cfg;
}

// ---- independent references ---------------------------------------------

// Per-element mixture reference: every member's moments recomputed by direct
// summation over that element's own group.
Tensor4 mixture_reference(const Tensor4& x, const SNLayer& layer, int n_shards) {
  const int per_shard = x.n / std::max(1, n_shards);
  const std::vector<double> lm = layer.state.lambda_mu();
  const std::vector<double> ls = layer.state.lambda_sigma();
  Tensor4 y(x.n, x.c, x.h, x.w);
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      for (int iy = 0; iy < x.h; ++iy) {
        for (int ix = 0; ix < x.w; ++ix) {
          double mu_mix = 0.0;
          double sig_mix = 0.0;
          for (size_t z = 0; z < layer.state.omega.size(); ++z) {
            double sum = 0.0, sumsq = 0.0;
            long count = 0;
            const NormKind kind = layer.state.omega[z];
            int n_lo = in, n_hi = in + 1, c_lo = ic, c_hi = ic + 1;
            if (kind == NormKind::layer) {
              c_lo = 0;
              c_hi = x.c;
            }
            if (kind == NormKind::batch) {
              const int shard = per_shard > 0 ? in / per_shard : 0;
              n_lo = shard * per_shard;
              n_hi = n_lo + per_shard;
            }
            for (int jn = n_lo; jn < n_hi; ++jn) {
              for (int jc = c_lo; jc < c_hi; ++jc) {
                for (int jy = 0; jy < x.h; ++jy) {
                  for (int jx = 0; jx < x.w; ++jx) {
                    const double v = x.at(jn, jc, jy, jx);
                    sum += v;
                    sumsq += v * v;
                    ++count;
                  }
                }
              }
            }
            const double mean = sum / count;
            const double var = std::max(0.0, sumsq / count - mean * mean);
            mu_mix += lm[z] * mean;
            if (layer.agg == SigmaAggregation::std_dev) {
              sig_mix += ls[z] * std::sqrt(var + layer.eps);
            } else {
              sig_mix += ls[z] * var;
            }
          }
          const double denom = layer.agg == SigmaAggregation::std_dev
                                   ? sig_mix
                                   : std::sqrt(sig_mix + layer.eps);
          const double xhat = (x.at(in, ic, iy, ix) - mu_mix) / denom;
          y.at(in, ic, iy, ix) = layer.gamma[static_cast<size_t>(ic)] * xhat +
                                 layer.beta[static_cast<size_t>(ic)];
        }
      }
    }
  }
  return y;
}

// Independent receptive-field oracle: propagate, for every node and output
// position, the lowest/highest network-input index that can influence it.
struct Extents {
  std::vector<int> lo, hi;
};

int brute_rf(const RfGraph& g, size_t node, int input_len) {
  std::vector<Extents> ext(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    const RfOp& op = g.nodes[i];
    std::vector<const Extents*> srcs;
    Extents input_ext;
    if (op.inputs.empty()) {
      input_ext.lo.resize(static_cast<size_t>(input_len));
      input_ext.hi.resize(static_cast<size_t>(input_len));
      for (int p = 0; p < input_len; ++p) {
        input_ext.lo[static_cast<size_t>(p)] = p;
        input_ext.hi[static_cast<size_t>(p)] = p;
      }
      srcs.push_back(&input_ext);
    } else {
      for (int src : op.inputs) srcs.push_back(&ext[static_cast<size_t>(src)]);
    }
    size_t in_len = srcs[0]->lo.size();
    for (const Extents* s : srcs) in_len = std::min(in_len, s->lo.size());
    const int span = (op.kernel - 1) * op.dilation;
    const int out_len = static_cast<int>(in_len) > span
                            ? (static_cast<int>(in_len) - span - 1) / op.stride + 1
                            : 0;
    Extents& e = ext[i];
    e.lo.resize(static_cast<size_t>(out_len));
    e.hi.resize(static_cast<size_t>(out_len));
    for (int o = 0; o < out_len; ++o) {
      int lo = 1 << 30, hi = -1;
      for (const Extents* s : srcs) {
        for (int k = 0; k < op.kernel; ++k) {
          const size_t idx = static_cast<size_t>(o * op.stride + k * op.dilation);
          lo = std::min(lo, s->lo[idx]);
          hi = std::max(hi, s->hi[idx]);
        }
      }
      e.lo[static_cast<size_t>(o)] = lo;
      e.hi[static_cast<size_t>(o)] = hi;
    }
  }
  if (ext[node].lo.empty()) return -1;
  return ext[node].hi[0] - ext[node].lo[0] + 1;
}

double kl_reference(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] < 1e-12 ? 1e-12 : p[i];
    const double qi = q[i] < 1e-12 ? 1e-12 : q[i];
    s += pi * std::log(pi) - pi * std::log(qi);
  }
  return s;
}

std::vector<double> random_simplex(Rng& rng, size_t k) {
  std::vector<double> v(k);
  double total = 0.0;
  for (double& x : v) {
    x = 1e-3 + std::fabs(rng.normal());
    total += x;
  }
  for (double& x : v) x /= total;
  return v;
}

double mean_final_bn_ratio(const RatioTrajectory& traj) {
  const std::vector<int> epochs = traj.epochs();
  const int last = epochs.back();
  double sum = 0.0;
  int n = 0;
  for (const TrajectoryRecord& r : traj.records) {
    if (r.epoch != last) continue;
    sum += 0.5 * (r.lambda_mu[2] + r.lambda_sigma[2]);
    ++n;
  }
  return sum / n;
}

std::string pct(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * accuracy);
  return buf;
}

// ---- criteria ------------------------------------------------------------

void criterion_1_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cmd(std::string(NORMSWITCH_BIN) + " gradcheck --module all > /dev/null");
  const double secs = elapsed_s(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradient suite vs central differences at rel 1e-5 (exit %d, %.1fs)", rc, secs);
  record(1, rc == 0 && secs < 120.0, buf);
}

void criterion_2_equivalences() {
  Rng rng(21);
  bool ok = true;
  std::string why;

  // Moment-family coincidences, elementwise.
  for (int trial = 0; trial < 8 && ok; ++trial) {
    const int c = 4;
    const Tensor4 x = rand_tensor(rng, 3, c, 5, 5);
    if (max_abs_diff(normalize(x, {NormKind::group, 1, {1, 0}}),
                     normalize(x, {NormKind::layer, 1, {1, 0}})) > kEqTol) {
      ok = false;
      why = "GN(1) != LN";
    }
    if (max_abs_diff(normalize(x, {NormKind::group, c, {1, 0}}),
                     normalize(x, {NormKind::instance, 1, {1, 0}})) > kEqTol) {
      ok = false;
      why = "GN(C) != IN";
    }
    const Tensor4 one = rand_tensor(rng, 1, c, 5, 5);
    if (max_abs_diff(normalize(one, {NormKind::batch, 1, {1, 1}}),
                     normalize(one, {NormKind::instance, 1, {1, 0}})) > kEqTol) {
      ok = false;
      why = "BN(n=1) != IN";
    }
  }

  // One-hot mixtures reproduce the member they select.
  const NormKind kinds[3] = {NormKind::instance, NormKind::layer, NormKind::batch};
  for (int k = 0; k < 3 && ok; ++k) {
    const Tensor4 x = rand_tensor(rng, 4, 3, 4, 4);
    SNLayer layer;
    layer.state = hard_init_state(full_omega(), kinds[k], kinds[k]);
    layer.gamma.assign(3, 1.0);
    layer.beta.assign(3, 0.0);
    for (int i = 0; i < 3; ++i) {
      layer.gamma[static_cast<size_t>(i)] = 1.0 + 0.2 * rng.normal();
      layer.beta[static_cast<size_t>(i)] = 0.1 * rng.normal();
    }
    const Tensor4 y = sn_forward(x, layer, {2, 2});
    const Tensor4 want = affine_transform(
        normalize(x, {kinds[k], 1, {2, 2}}, layer.eps), layer.gamma, layer.beta);
    if (max_abs_diff(y, want) > kEqTol) {
      ok = false;
      why = "one-hot mixture != " + norm_kind_name(kinds[k]);
    }
  }

  // A batch-only mixture trains in lockstep with the plain normalizer.
  double worst_step = 0.0;
  if (ok) {
    ExperimentConfig sn_cfg = tiny_config(5);
    sn_cfg.omega = omega_from_names("bn");
    ExperimentConfig bn_cfg = sn_cfg;
    bn_cfg.norm = NormChoice::bn;
    bn_cfg.omega.clear();
    Trainer a(sn_cfg);
    a.run();
    Trainer b(bn_cfg);
    b.run();
    const std::vector<double>& sa = a.result().step_losses;
    const std::vector<double>& sb = b.result().step_losses;
    if (sa.size() != sb.size() || sa.empty()) {
      ok = false;
      why = "step counts differ";
    } else {
      for (size_t i = 0; i < sa.size(); ++i) worst_step = std::max(worst_step, std::fabs(sa[i] - sb[i]));
      if (worst_step > kStepTol) {
        ok = false;
        why = "per-step drift " + std::to_string(worst_step);
      }
    }
  }

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "normalizer equivalences at 1e-12; batch-only mixture vs plain bn per-step "
                "(worst %.2e, tol 1e-10)%s%s",
                worst_step, ok ? "" : " — ", why.c_str());
  record(2, ok, buf);
}

void criterion_3_mixture_oracle() {
  Rng rng(31);
  const std::vector<std::vector<NormKind>> omegas = {
      full_omega(),           omega_from_names("in,bn"), omega_from_names("in,ln"),
      omega_from_names("ln,bn"), omega_from_names("in"),   omega_from_names("bn")};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 * (1 + static_cast<int>(rng.below(2)));  // 2 or 4
    const int c = 1 + static_cast<int>(rng.below(4));
    const int h = 1 + static_cast<int>(rng.below(4));
    const int w = 1 + static_cast<int>(rng.below(4));
    const Tensor4 x = rand_tensor(rng, n, c, h, w);
    SNLayer layer;
    layer.state = make_ratio_state(omegas[rng.below(omegas.size())], rng.below(2) == 0);
    for (double& v : layer.state.logits_mu) v = rng.normal();
    for (double& v : layer.state.logits_sigma) v = rng.normal();
    layer.gamma.assign(static_cast<size_t>(c), 0.0);
    layer.beta.assign(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < c; ++i) {
      layer.gamma[static_cast<size_t>(i)] = 1.0 + 0.3 * rng.normal();
      layer.beta[static_cast<size_t>(i)] = 0.2 * rng.normal();
    }
    const int n_shards = (n % 2 == 0 && rng.below(2) == 0) ? 2 : 1;
    const ShardConfig shard{n_shards, n / n_shards};
    for (const SigmaAggregation agg : {SigmaAggregation::std_dev, SigmaAggregation::variance}) {
      layer.agg = agg;
      worst = std::max(worst, max_abs_diff(sn_forward(x, layer, shard),
                                           mixture_reference(x, layer, n_shards)));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "mixture forward vs per-element reference, 100 cases x both denominators "
                "(worst %.2e, tol 1e-12)",
                worst);
  record(3, worst <= kEqTol, buf);
}

bool simplex_rows_valid(const RatioTrajectory& traj, bool expect_tied, std::string* why) {
  for (const TrajectoryRecord& r : traj.records) {
    double sm = 0.0, ss = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double m = r.lambda_mu[static_cast<size_t>(j)];
      const double s = r.lambda_sigma[static_cast<size_t>(j)];
      if (m < 0.0 || m > 1.0 || s < 0.0 || s > 1.0) {
        *why = "ratio outside [0,1]";
        return false;
      }
      sm += m;
      ss += s;
      if (expect_tied && m != s) {
        *why = "tied ratios differ";
        return false;
      }
    }
    if (std::fabs(sm - 1.0) > kSimplexTol || std::fabs(ss - 1.0) > kSimplexTol) {
      *why = "simplex sum off by more than 1e-9";
      return false;
    }
  }
  return true;
}

void criterion_5_divergence() {
  Rng rng(41);
  bool ok = true;
  std::string why;
  double worst = 0.0;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const size_t k = 2 + static_cast<size_t>(trial % 4);
    const std::vector<double> p = random_simplex(rng, k);
    const std::vector<double> q = random_simplex(rng, k);
    worst = std::max(worst, std::fabs(kl_divergence(p, q) - kl_reference(p, q)));
    worst = std::max(worst,
                     std::fabs(sym_divergence(p, q) - (kl_reference(p, q) + kl_reference(q, p))));
    if (sym_divergence(p, q) != sym_divergence(q, p)) {
      ok = false;
      why = "symmetry broken";
    }
    if (kl_divergence(p, p) != 0.0) {
      ok = false;
      why = "D(p,p) != 0";
    }
  }
  if (worst > kKlTol) {
    ok = false;
    why = "oracle mismatch " + std::to_string(worst);
  }
  const double worked = sym_divergence({0.5, 0.25, 0.25}, {0.25, 0.5, 0.25});
  if (std::fabs(worked - 0.5 * std::log(2.0)) > 1e-14) {
    ok = false;
    why = "worked value off";
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "divergence oracles on 1000 simplex pairs (worst %.2e, tol 1e-12); worked value "
                "0.5*ln2%s%s",
                worst, ok ? "" : " — ", why.c_str());
  record(5, ok, buf);
}

void criterion_6_receptive_fields() {
  Rng rng(42);
  bool ok = true;
  std::string why;
  for (int trial = 0; trial < 20 && ok; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(5));
    RfGraph g;
    for (int i = 0; i < n; ++i) {
      RfOp op;
      const int kernels[4] = {1, 3, 5, 7};
      op.kernel = kernels[rng.below(4)];
      op.stride = 1 + static_cast<int>(rng.below(2));
      op.dilation = op.kernel > 1 ? 1 + static_cast<int>(rng.below(2)) : 1;
      op.is_norm = rng.below(2) == 0;
      if (i > 0) {
        op.inputs = {i - 1};
        if (i >= 2 && rng.below(4) == 0) {
          op.inputs.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(i - 1))));
        }
      }
      g.nodes.push_back(op);
    }
    const std::vector<RfResult> res = receptive_fields(g);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      const int want = brute_rf(g, i, 4096);
      if (res[i].rf != want) {
        ok = false;
        why = "trial " + std::to_string(trial) + " node " + std::to_string(i) + ": " +
              std::to_string(res[i].rf) + " vs " + std::to_string(want);
      }
    }
  }
  std::vector<int> rfs;
  if (ok) {
    rfs = norm_layer_rfs(resnet50_rf_fixture());
    if (rfs.size() != 53 || rfs.front() != 7 || rfs.back() != 427) {
      ok = false;
      why = "deep fixture endpoints " + std::to_string(rfs.front()) + "/" +
            std::to_string(rfs.back());
    }
  }
  record(6, ok,
         "receptive fields vs index-propagation oracle on 20 random graphs; deep fixture "
         "endpoints 7/427" +
             (ok ? std::string() : " — " + why));
}

void criterion_10_determinism(const std::string& outdir) {
  bool ok = true;
  std::string why;

  ExperimentConfig cfg = tiny_config(9);
  cfg.epochs = 4;
  Trainer a(cfg);
  a.run();
  Trainer b(cfg);
  b.run();
  std::string traj_a, traj_b;
  {
    const std::string pa = outdir + "/det_a.csv", pb = outdir + "/det_b.csv";
    export_trajectory(a.result().trajectory, pa);
    export_trajectory(b.result().trajectory, pb);
    std::ifstream fa(pa), fb(pb);
    traj_a.assign((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    traj_b.assign((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  }
  if (metrics_csv(a.result().metrics) != metrics_csv(b.result().metrics)) {
    ok = false;
    why = "metrics differ between identical runs";
  }
  if (traj_a != traj_b) {
    ok = false;
    why = "trajectories differ between identical runs";
  }

  // Interrupt/resume against the straight-through run.
  if (ok) {
    ExperimentConfig head_cfg = tiny_config(9);
    head_cfg.epochs = 2;
    Trainer head(head_cfg);
    head.run();
    const std::string snap = outdir + "/det_snap.bin";
    head.save_snapshot(snap);
    Trainer tail(cfg);
    tail.load_snapshot(snap);
    tail.run();
    if (metrics_csv(tail.result().metrics) != metrics_csv(a.result().metrics)) {
      ok = false;
      why = "resumed metrics differ from uninterrupted";
    }
    std::vector<double> flat_a, flat_t;
    for (const ParamRef& p : a.model().params()) {
      flat_a.insert(flat_a.end(), p.value->begin(), p.value->end());
    }
    for (const ParamRef& p : tail.model().params()) {
      flat_t.insert(flat_t.end(), p.value->begin(), p.value->end());
    }
    if (flat_a != flat_t) {
      ok = false;
      why = "resumed parameters differ bitwise";
    }
  }
  record(10, ok,
         "byte-identical reruns; snapshot save/load/resume matches uninterrupted training" +
             (ok ? std::string() : " — " + why));
}

}  // namespace

int main() {
  std::filesystem::remove_all("acceptance_out");
  std::filesystem::create_directories("acceptance_out");
  const std::string outdir = "acceptance_out";
  const auto wall0 = std::chrono::steady_clock::now();

  criterion_1_gradients();
  criterion_2_equivalences();
  criterion_3_mixture_oracle();
  criterion_5_divergence();
  criterion_6_receptive_fields();

  // ---- criterion 7: shard-size trend, 3 seeds x {(4,32), (4,2)} ----------
  std::map<uint64_t, double> bn_small, bn_big;     // seed -> mean final bn ratio
  bool c7_ok = true;
  bool c4_ok = true;
  std::string c4_why;
  const std::vector<uint64_t> seeds = {1, 2, 3};
  const auto c7_t0 = std::chrono::steady_clock::now();
  for (const uint64_t seed : seeds) {
    for (const int per_shard : {32, 2}) {
      ExperimentConfig cfg = desk_config(seed, 4, per_shard);
      Trainer t(cfg);
      t.run();
      const double ratio = mean_final_bn_ratio(t.result().trajectory);
      (per_shard == 2 ? bn_small : bn_big)[seed] = ratio;
      if (!simplex_rows_valid(t.result().trajectory, false, &c4_why)) c4_ok = false;
      std::fprintf(stderr, "[acceptance] seed %llu (4,%d): final bn ratio %.6f, acc %s\n",
                   static_cast<unsigned long long>(seed), per_shard, ratio,
                   pct(t.result().metrics.back().test_accuracy).c_str());
    }
  }
  for (const uint64_t sa : seeds) {
    for (const uint64_t sb : seeds) {
      if (bn_small[sa] >= bn_big[sb]) c7_ok = false;
    }
  }
  {
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "small per-shard batch lowers the final bn ratio in all seed pairings "
                  "(per-shard 2: %.4f/%.4f/%.4f vs 32: %.4f/%.4f/%.4f; %.0fs)",
                  bn_small[1], bn_small[2], bn_small[3], bn_big[1], bn_big[2], bn_big[3],
                  elapsed_s(c7_t0));
    record(7, c7_ok, buf);
  }

  // ---- criterion 8: hard-ratio workflow from converged snapshots ---------
  // The heads run at lr0 0.5, where this task actually converges within the
  // 30-epoch budget (train loss ~2e-3); hardening then perturbs a settled
  // model, which is the regime the finetune-vs-soft comparison is about. At
  // lr0 0.1 the epoch-30 model is still far from converged and the comparison
  // mostly measures how much headroom the soft arm has left.
  {
    const auto t0 = std::chrono::steady_clock::now();
    double soft_mean = 0.0, ft_mean = 0.0, scratch_mean = 0.0;
    for (const uint64_t seed : seeds) {
      const std::string snap = outdir + "/soft_seed" + std::to_string(seed) + ".bin";
      NormKind mu_kind = NormKind::instance;
      NormKind sigma_kind = NormKind::instance;
      {
        ExperimentConfig head_cfg = desk_config(seed, 4, 2);
        head_cfg.lr0 = 0.5;
        Trainer head(head_cfg);
        head.run();
        head.save_snapshot(snap);

        // Majority vote of the per-layer argmax picks the scratch members.
        std::map<NormKind, int> votes_mu, votes_sigma;
        for (const NormUnit* u : static_cast<const Model&>(head.model()).norm_units()) {
          const HardRatio hr = harden(u->state);
          ++votes_mu[hr.choice_mu];
          ++votes_sigma[hr.choice_sigma];
        }
        const auto majority = [](std::map<NormKind, int>& votes) {
          NormKind best = NormKind::instance;
          int most = -1;
          for (const NormKind k : full_omega()) {
            if (votes[k] > most) {
              most = votes[k];
              best = k;
            }
          }
          return best;
        };
        mu_kind = majority(votes_mu);
        sigma_kind = majority(votes_sigma);
      }

      // Continued-soft baseline: ten more epochs on the original schedule.
      ExperimentConfig soft_cfg = desk_config(seed, 4, 2);
      soft_cfg.lr0 = 0.5;
      soft_cfg.epochs = 40;
      Trainer soft(soft_cfg);
      soft.load_snapshot(snap);
      soft.run();
      const double soft_acc = soft.result().metrics.back().test_accuracy;

      // Harden-finetune: same budget, ratios pinned to their argmax.
      Trainer ft(soft_cfg);
      ft.load_snapshot(snap);
      ft.harden_all();
      ft.run();
      const double ft_acc = ft.result().metrics.back().test_accuracy;

      // Hard from scratch with the majority members, full 40 epochs.
      ExperimentConfig scr_cfg = desk_config(seed, 4, 2);
      scr_cfg.lr0 = 0.5;
      scr_cfg.epochs = 40;
      scr_cfg.hard_init_mu = norm_kind_name(mu_kind);
      scr_cfg.hard_init_sigma = norm_kind_name(sigma_kind);
      Trainer scratch(scr_cfg);
      scratch.run();
      const double scr_acc = scratch.result().metrics.back().test_accuracy;

      soft_mean += soft_acc / 3.0;
      ft_mean += ft_acc / 3.0;
      scratch_mean += scr_acc / 3.0;
      std::fprintf(stderr,
                   "[acceptance] seed %llu: soft %s, harden-ft %s, scratch(%s/%s) %s\n",
                   static_cast<unsigned long long>(seed), pct(soft_acc).c_str(),
                   pct(ft_acc).c_str(), norm_kind_name(mu_kind).c_str(),
                   norm_kind_name(sigma_kind).c_str(), pct(scr_acc).c_str());
    }
    const bool ft_ok = 100.0 * (soft_mean - ft_mean) <= kAccPoints;
    const bool scratch_ok = scratch_mean <= soft_mean + 0.005;  // directional
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "harden-finetune mean %s vs continued-soft %s (margin %.1f points, "
                  "converged lr0=0.5 snapshots); hard-from-scratch %s does not exceed "
                  "soft (%.0fs)",
                  pct(ft_mean).c_str(), pct(soft_mean).c_str(), kAccPoints,
                  pct(scratch_mean).c_str(), elapsed_s(t0));
    record(8, ft_ok && scratch_ok, buf);
  }

  // ---- criterion 9: two-member subset ablations ---------------------------
  {
    bool ok = true;
    std::string why;
    std::string table = "omega,final_train_loss,test_accuracy,mean_mu_in,mean_mu_ln,mean_mu_bn\n";
    std::fprintf(stdout, "subset ablation (8 epochs, shards (2,8)):\n");
    std::fprintf(stdout, "  %-8s %-12s %-10s %s\n", "omega", "train_loss", "accuracy",
                 "final mean lambda_mu (in,ln,bn)");
    for (const char* names : {"in,ln", "in,bn", "ln,bn"}) {
      ExperimentConfig cfg = desk_config(4, 2, 8);
      cfg.epochs = 8;
      cfg.omega = omega_from_names(names);
      Trainer t(cfg);
      t.run();
      if (!simplex_rows_valid(t.result().trajectory, false, &why)) ok = false;
      // The absent member must log exactly zero.
      const std::vector<NormKind> omega = cfg.omega;
      for (const TrajectoryRecord& r : t.result().trajectory.records) {
        for (int j = 0; j < 3; ++j) {
          const NormKind k = j == 0 ? NormKind::instance : j == 1 ? NormKind::layer : NormKind::batch;
          const bool member = std::find(omega.begin(), omega.end(), k) != omega.end();
          if (!member && (r.lambda_mu[static_cast<size_t>(j)] != 0.0 ||
                          r.lambda_sigma[static_cast<size_t>(j)] != 0.0)) {
            ok = false;
            why = "absent member logged nonzero";
          }
        }
      }
      const std::vector<int> eps = t.result().trajectory.epochs();
      double mu[3] = {0.0, 0.0, 0.0};
      int rows = 0;
      for (const TrajectoryRecord& r : t.result().trajectory.records) {
        if (r.epoch != eps.back()) continue;
        for (int j = 0; j < 3; ++j) mu[j] += r.lambda_mu[static_cast<size_t>(j)];
        ++rows;
      }
      for (double& v : mu) v /= rows;
      const EpochMetrics& last = t.result().metrics.back();
      std::fprintf(stdout, "  %-8s %-12.4f %-10s %.4f, %.4f, %.4f\n", names, last.train_loss,
                   pct(last.test_accuracy).c_str(), mu[0], mu[1], mu[2]);
      char row[160];
      std::snprintf(row, sizeof(row), "\"%s\",%.6f,%.6f,%.6f,%.6f,%.6f\n", names,
                    last.train_loss, last.test_accuracy, mu[0], mu[1], mu[2]);
      table += row;
    }
    std::ofstream(outdir + "/subset_table.csv") << table;
    record(9, ok,
           "all three two-member subsets trained with valid simplex logs; table written to " +
               outdir + "/subset_table.csv" + (ok ? std::string() : " — " + why));
  }

  // ---- criterion 4: simplex invariants across full runs ------------------
  {
    ExperimentConfig cfg = tiny_config(7);
    cfg.norm = NormChoice::sn_tied;
    cfg.epochs = 6;
    Trainer t(cfg);
    t.run();
    if (!simplex_rows_valid(t.result().trajectory, true, &c4_why)) c4_ok = false;
    record(4, c4_ok,
           "all logged ratios in [0,1], sums within 1e-9 across full runs; tied sides equal "
           "exactly" +
               (c4_ok ? std::string() : " — " + c4_why));
  }

  criterion_10_determinism(outdir);

  std::fprintf(stdout, "\n");
  bool all = true;
  for (const Criterion& c : board) {
    std::fprintf(stdout, "CRITERION %d %s — %s\n", c.id, c.pass ? "PASS" : "FAIL",
                 c.text.c_str());
    all = all && c.pass;
  }
  std::fprintf(stdout, "acceptance: %s (total %.0fs)\n", all ? "all criteria pass" : "FAILURES",
               elapsed_s(wall0));
  return all ? 0 : 1;
}
