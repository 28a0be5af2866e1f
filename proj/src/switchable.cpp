#include "normlab/switchable.hpp"

#include <algorithm>
#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

static int member_rank(NormKind k) {
  switch (k) {
    case NormKind::instance: return 0;
    case NormKind::layer: return 1;
    case NormKind::batch: return 2;
    default: break;
  }
  throw ConfigError("omega members must be in, ln, or bn, got '" + norm_kind_name(k) + "'");
}

std::vector<NormKind> full_omega() {
  return {NormKind::instance, NormKind::layer, NormKind::batch};
}

std::vector<NormKind> omega_from_names(const std::string& csv) {
  std::vector<NormKind> omega;
  std::string token;
  for (size_t i = 0; i <= csv.size(); ++i) {
    if (i == csv.size() || csv[i] == ',') {
      size_t a = token.find_first_not_of(" \t");
      size_t b = token.find_last_not_of(" \t");
      if (a != std::string::npos) {
        NormKind k = norm_kind_from_name(token.substr(a, b - a + 1));
        member_rank(k);  // rejects gn
        if (std::find(omega.begin(), omega.end(), k) != omega.end()) {
          throw ConfigError("omega lists '" + norm_kind_name(k) + "' twice");
        }
        omega.push_back(k);
      }
      token.clear();
    } else {
      token.push_back(csv[i]);
    }
  }
  if (omega.empty()) throw ConfigError("omega must name at least one normalizer");
  std::sort(omega.begin(), omega.end(),
            [](NormKind a, NormKind b) { return member_rank(a) < member_rank(b); });
  return omega;
}

std::string omega_to_names(const std::vector<NormKind>& omega) {
  std::string out;
  for (size_t i = 0; i < omega.size(); ++i) {
    if (i > 0) out += ",";
    out += norm_kind_name(omega[i]);
  }
  return out;
}

std::vector<double> softmax_ratios(const std::vector<double>& logits) {
  if (logits.empty()) throw ConfigError("softmax over empty logit vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  double total = 0.0;
  for (double& v : p) {
    v /= z;
    total += v;
  }
  for (double& v : p) v /= total;  // pin the sum to 1
  return p;
}

static std::vector<double> one_hot(size_t n, int idx) {
  std::vector<double> v(n, 0.0);
  v[static_cast<size_t>(idx)] = 1.0;
  return v;
}

std::vector<double> RatioState::lambda_mu() const {
  if (hard) return one_hot(omega.size(), hard_mu);
  return softmax_ratios(logits_mu);
}

std::vector<double> RatioState::lambda_sigma() const {
  if (hard) return one_hot(omega.size(), hard_sigma);
  return softmax_ratios(tied ? logits_mu : logits_sigma);
}

RatioState make_ratio_state(const std::vector<NormKind>& omega, bool tied) {
  if (omega.empty()) throw ConfigError("omega must name at least one normalizer");
  RatioState s;
  s.omega = omega;
  std::sort(s.omega.begin(), s.omega.end(),
            [](NormKind a, NormKind b) { return member_rank(a) < member_rank(b); });
  for (size_t i = 1; i < s.omega.size(); ++i) {
    if (s.omega[i] == s.omega[i - 1]) {
      throw ConfigError("omega lists '" + norm_kind_name(s.omega[i]) + "' twice");
    }
  }
  s.logits_mu.assign(s.omega.size(), 0.0);
  s.logits_sigma.assign(s.omega.size(), 0.0);
  s.tied = tied;
  return s;
}

static int argmax_earliest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

HardRatio harden(const RatioState& state) {
  HardRatio hr;
  hr.choice_mu = state.omega[static_cast<size_t>(argmax_earliest(state.lambda_mu()))];
  hr.choice_sigma = state.omega[static_cast<size_t>(argmax_earliest(state.lambda_sigma()))];
  return hr;
}

static int index_in_omega(const std::vector<NormKind>& omega, NormKind k) {
  for (size_t i = 0; i < omega.size(); ++i) {
    if (omega[i] == k) return static_cast<int>(i);
  }
  throw ConfigError("'" + norm_kind_name(k) + "' is not a member of omega {" +
                    omega_to_names(omega) + "}");
}

void apply_hard_ratio(RatioState& state, const HardRatio& hr) {
  state.hard_mu = index_in_omega(state.omega, hr.choice_mu);
  state.hard_sigma = index_in_omega(state.omega, hr.choice_sigma);
  state.hard = true;
}

RatioState hard_init_state(const std::vector<NormKind>& omega, NormKind mu, NormKind sigma,
                           double logit_magnitude) {
  RatioState s = make_ratio_state(omega, false);
  const int imu = index_in_omega(s.omega, mu);
  const int isig = index_in_omega(s.omega, sigma);
  for (size_t i = 0; i < s.omega.size(); ++i) {
    s.logits_mu[i] = static_cast<int>(i) == imu ? logit_magnitude : -logit_magnitude;
    s.logits_sigma[i] = static_cast<int>(i) == isig ? logit_magnitude : -logit_magnitude;
  }
  s.hard = true;
  s.hard_mu = imu;
  s.hard_sigma = isig;
  return s;
}

RatioState restrict_omega(const RatioState& state, const std::vector<NormKind>& subset) {
  if (subset.empty()) throw ConfigError("omega subset must be non-empty");
  if (state.hard) throw UsageError("cannot restrict omega of a hardened state");
  RatioState out = make_ratio_state(subset, state.tied);
  for (size_t i = 0; i < out.omega.size(); ++i) {
    const int src = index_in_omega(state.omega, out.omega[i]);
    out.logits_mu[i] = state.logits_mu[static_cast<size_t>(src)];
    out.logits_sigma[i] = state.logits_sigma[static_cast<size_t>(src)];
  }
  return out;
}

SigmaAggregation sigma_aggregation_from_name(const std::string& name) {
  if (name == "std") return SigmaAggregation::std_dev;
  if (name == "var") return SigmaAggregation::variance;
  throw ConfigError("unknown sigma_aggregation '" + name + "' (expected std or var)");
}

std::string sigma_aggregation_name(SigmaAggregation agg) {
  return agg == SigmaAggregation::std_dev ? "std" : "var";
}

static MomentScheme member_scheme(NormKind k, const ShardConfig& shard) {
  MomentScheme s;
  s.kind = k;
  if (k == NormKind::batch) s.shard = shard;
  return s;
}

// Fills mu_mix and denom (one cell per (n,c) slice) from the member moments.
static void mix_statistics(int n, int c, const std::vector<MomentScheme>& schemes,
                           const std::vector<Moments>& moments, const std::vector<double>& lam_mu,
                           const std::vector<double>& lam_sigma, SigmaAggregation agg, double eps,
                           std::vector<double>& mu_mix, std::vector<double>& denom) {
  const size_t cells = static_cast<size_t>(n) * c;
  mu_mix.assign(cells, 0.0);
  denom.assign(cells, 0.0);
  for (size_t z = 0; z < schemes.size(); ++z) {
    const double lm = lam_mu[z], ls = lam_sigma[z];
    if (lm == 0.0 && ls == 0.0) continue;
    const Moments& m = moments[z];
    for (int in = 0; in < n; ++in) {
      for (int ic = 0; ic < c; ++ic) {
        const size_t cell = static_cast<size_t>(in) * c + ic;
        const size_t g = static_cast<size_t>(group_of(schemes[z], c, in, ic));
        mu_mix[cell] += lm * m.mean[g];
        if (agg == SigmaAggregation::std_dev) {
          denom[cell] += ls * std::sqrt(m.var[g] + eps);
        } else {
          denom[cell] += ls * m.var[g];
        }
      }
    }
  }
  if (agg == SigmaAggregation::variance) {
    for (double& d : denom) d = std::sqrt(d + eps);
  }
}

static Tensor4 mixed_normalize_affine(const Tensor4& x, const std::vector<double>& mu_mix,
                                      const std::vector<double>& denom,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& beta) {
  Tensor4 y(x.n, x.c, x.h, x.w);
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const size_t cell = static_cast<size_t>(in) * x.c + ic;
      const double mu = mu_mix[cell];
      const double inv = 1.0 / denom[cell];
      const double g = gamma[static_cast<size_t>(ic)];
      const double b = beta[static_cast<size_t>(ic)];
      const double* p = &x.data[x.index(in, ic, 0, 0)];
      double* q = &y.data[y.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) {
        const double xhat = (p[i] - mu) * inv;
        q[i] = g * xhat + b;
      }
    }
  }
  return y;
}

static void check_layer(const Tensor4& x, const SNLayer& layer) {
  if (layer.state.omega.empty()) throw ConfigError("switchable layer has empty omega");
  if (static_cast<int>(layer.gamma.size()) != x.c || static_cast<int>(layer.beta.size()) != x.c) {
    throw ConfigError("affine params length " + std::to_string(layer.gamma.size()) +
                      " does not match channels of " + x.shape_str());
  }
  if (layer.eps < 0.0) throw ConfigError("eps must be non-negative");
}

Tensor4 sn_forward(const Tensor4& x, const SNLayer& layer, const ShardConfig& shard,
                   SNCache* cache) {
  check_layer(x, layer);
  const RatioState& st = layer.state;
  const std::vector<double> lam_mu = st.lambda_mu();
  const std::vector<double> lam_sigma = st.lambda_sigma();

  std::vector<MomentScheme> schemes;
  std::vector<Moments> moments(st.omega.size());
  schemes.reserve(st.omega.size());
  for (size_t z = 0; z < st.omega.size(); ++z) {
    schemes.push_back(member_scheme(st.omega[z], shard));
    if (lam_mu[z] != 0.0 || lam_sigma[z] != 0.0) {
      moments[z] = compute_moments(x, schemes[z]);
    }
  }

  std::vector<double> mu_mix, denom;
  mix_statistics(x.n, x.c, schemes, moments, lam_mu, lam_sigma, layer.agg, layer.eps, mu_mix,
                 denom);
  Tensor4 y = mixed_normalize_affine(x, mu_mix, denom, layer.gamma, layer.beta);

  if (cache != nullptr) {
    cache->x = x;
    cache->schemes = std::move(schemes);
    cache->moments = std::move(moments);
    cache->lam_mu = lam_mu;
    cache->lam_sigma = lam_sigma;
    cache->mu_mix = std::move(mu_mix);
    cache->denom = std::move(denom);
    cache->gamma = layer.gamma;
    cache->agg = layer.agg;
    cache->eps = layer.eps;
    cache->tied = st.tied;
    cache->hard = st.hard;
  }
  return y;
}

Tensor4 sn_forward_eval(const Tensor4& x, const SNLayer& layer, const BnRunningStats* bn) {
  check_layer(x, layer);
  const RatioState& st = layer.state;
  const std::vector<double> lam_mu = st.lambda_mu();
  const std::vector<double> lam_sigma = st.lambda_sigma();
  const ShardConfig whole{1, 0};

  std::vector<MomentScheme> schemes;
  std::vector<Moments> moments(st.omega.size());
  for (size_t z = 0; z < st.omega.size(); ++z) {
    schemes.push_back(member_scheme(st.omega[z], whole));
    if (lam_mu[z] == 0.0 && lam_sigma[z] == 0.0) continue;
    if (st.omega[z] == NormKind::batch) {
      if (bn == nullptr || static_cast<int>(bn->mean.size()) != x.c) {
        throw UsageError("bn member needs per-channel running statistics at evaluation time");
      }
      // Running per-channel stats stand in for batch moments; with a single
      // shard the group index is just the channel.
      moments[z].mean = bn->mean;
      moments[z].var = bn->var;
      moments[z].group_size = 0;
    } else {
      moments[z] = compute_moments(x, schemes[z]);
    }
  }

  std::vector<double> mu_mix, denom;
  mix_statistics(x.n, x.c, schemes, moments, lam_mu, lam_sigma, layer.agg, layer.eps, mu_mix,
                 denom);
  return mixed_normalize_affine(x, mu_mix, denom, layer.gamma, layer.beta);
}

SNGrads sn_backward(const SNCache& cache, const Tensor4& dy) {
  if (cache.x.size() == 0) throw UsageError("sn_backward called before any forward");
  if (!dy.same_shape(cache.x)) {
    throw UsageError("sn_backward: cotangent shape " + dy.shape_str() +
                     " does not match cached " + cache.x.shape_str());
  }
  const Tensor4& x = cache.x;
  const size_t members = cache.schemes.size();
  const size_t cells = static_cast<size_t>(x.n) * x.c;
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  const bool std_mode = cache.agg == SigmaAggregation::std_dev;

  SNGrads out;
  out.dgamma.assign(static_cast<size_t>(x.c), 0.0);
  out.dbeta.assign(static_cast<size_t>(x.c), 0.0);
  out.dlogits_mu.assign(members, 0.0);
  out.dlogits_sigma.assign(members, 0.0);

  // Row sums of a_e = dxhat_e/denom and b_e = a_e*xhat_e over each (n,c)
  // slice; every member's group is a union of such slices.
  std::vector<double> row_a(cells, 0.0);
  std::vector<double> row_b(cells, 0.0);
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const size_t cell = static_cast<size_t>(in) * x.c + ic;
      const double mu = cache.mu_mix[cell];
      const double inv = 1.0 / cache.denom[cell];
      const double g = cache.gamma[static_cast<size_t>(ic)];
      const double* xp = &x.data[x.index(in, ic, 0, 0)];
      const double* dp = &dy.data[dy.index(in, ic, 0, 0)];
      double sa = 0.0, sb = 0.0, sg = 0.0, sbeta = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        const double xhat = (xp[i] - mu) * inv;
        const double dxhat = dp[i] * g;
        const double a = dxhat * inv;
        sa += a;
        sb += a * xhat;
        sg += dp[i] * xhat;
        sbeta += dp[i];
      }
      row_a[cell] = sa;
      row_b[cell] = sb;
      out.dgamma[static_cast<size_t>(ic)] += sg;
      out.dbeta[static_cast<size_t>(ic)] += sbeta;
    }
  }

  // Per-member, per-group reductions and the ratio cotangents.  In std mode
  // B_z[g] sums b_e; in var mode it sums b_e/denom (the chain through
  // sqrt(sum(lam*var) + eps) carries a second 1/denom).
  std::vector<double> dlam_mu(members, 0.0);
  std::vector<double> dlam_sigma(members, 0.0);
  std::vector<std::vector<double>> A(members), W(members);
  for (size_t z = 0; z < members; ++z) {
    const double lm = cache.lam_mu[z], ls = cache.lam_sigma[z];
    if (lm == 0.0 && ls == 0.0) continue;
    const Moments& m = cache.moments[z];
    const size_t gc = m.mean.size();
    std::vector<double> Az(gc, 0.0), Bz(gc, 0.0);
    for (int in = 0; in < x.n; ++in) {
      for (int ic = 0; ic < x.c; ++ic) {
        const size_t cell = static_cast<size_t>(in) * x.c + ic;
        const size_t g = static_cast<size_t>(group_of(cache.schemes[z], x.c, in, ic));
        Az[g] += row_a[cell];
        Bz[g] += std_mode ? row_b[cell] : row_b[cell] / cache.denom[cell];
      }
    }
    const double inv_m = 1.0 / static_cast<double>(m.group_size);
    std::vector<double> Wz(gc, 0.0);
    for (size_t g = 0; g < gc; ++g) {
      if (std_mode) {
        // d var_z -> d sigma_z needs 1/(2 sd); the 2 cancels against the 2 of
        // d var/d x = 2(x - mu)/m.
        const double sd = std::sqrt(m.var[g] + cache.eps);
        Wz[g] = Bz[g] / sd * inv_m;
        dlam_sigma[z] -= sd * Bz[g];
      } else {
        Wz[g] = Bz[g] * inv_m;
        dlam_sigma[z] -= 0.5 * m.var[g] * Bz[g];
      }
      dlam_mu[z] -= m.mean[g] * Az[g];
    }
    A[z] = std::move(Az);
    W[z] = std::move(Wz);
  }

  // Per-cell correction coefficients: dx_j = a_j - k1[cell] - xhat_j*k2[cell],
  // using x_j - mu_z = xhat_j*denom + (mu_mix - mu_z).
  std::vector<double> k1(cells, 0.0), k2(cells, 0.0);
  for (size_t z = 0; z < members; ++z) {
    const double lm = cache.lam_mu[z], ls = cache.lam_sigma[z];
    if (lm == 0.0 && ls == 0.0) continue;
    const Moments& m = cache.moments[z];
    const double inv_m = 1.0 / static_cast<double>(m.group_size);
    for (int in = 0; in < x.n; ++in) {
      for (int ic = 0; ic < x.c; ++ic) {
        const size_t cell = static_cast<size_t>(in) * x.c + ic;
        const size_t g = static_cast<size_t>(group_of(cache.schemes[z], x.c, in, ic));
        if (lm != 0.0) k1[cell] += lm * A[z][g] * inv_m;
        if (ls != 0.0) {
          const double w = ls * W[z][g];
          k1[cell] += w * (cache.mu_mix[cell] - m.mean[g]);
          k2[cell] += w * cache.denom[cell];
        }
      }
    }
  }

  out.dx = Tensor4(x.n, x.c, x.h, x.w);
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const size_t cell = static_cast<size_t>(in) * x.c + ic;
      const double mu = cache.mu_mix[cell];
      const double inv = 1.0 / cache.denom[cell];
      const double g = cache.gamma[static_cast<size_t>(ic)];
      const double c1 = k1[cell], c2 = k2[cell];
      const double* xp = &x.data[x.index(in, ic, 0, 0)];
      const double* dp = &dy.data[dy.index(in, ic, 0, 0)];
      double* o = &out.dx.data[out.dx.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) {
        const double xhat = (xp[i] - mu) * inv;
        const double a = dp[i] * g * inv;
        o[i] = a - c1 - xhat * c2;
      }
    }
  }

  if (!cache.hard) {
    // Softmax Jacobian: dl_i = lam_i * (dlam_i - sum_z dlam_z * lam_z).
    auto jacobian = [](const std::vector<double>& lam, const std::vector<double>& dlam) {
      double s = 0.0;
      for (size_t i = 0; i < lam.size(); ++i) s += lam[i] * dlam[i];
      std::vector<double> dl(lam.size());
      for (size_t i = 0; i < lam.size(); ++i) dl[i] = lam[i] * (dlam[i] - s);
      return dl;
    };
    const std::vector<double> jm = jacobian(cache.lam_mu, dlam_mu);
    const std::vector<double> js = jacobian(cache.lam_sigma, dlam_sigma);
    if (cache.tied) {
      for (size_t i = 0; i < members; ++i) out.dlogits_mu[i] = jm[i] + js[i];
    } else {
      out.dlogits_mu = jm;
      out.dlogits_sigma = js;
    }
  }
  return out;
}

}  // namespace normlab
