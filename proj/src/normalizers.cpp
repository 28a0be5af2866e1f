#include "normlab/normalizers.hpp"

#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

namespace {
uint64_t g_moments_evals = 0;
}  // namespace

std::string norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::batch: return "bn";
    case NormKind::instance: return "in";
    case NormKind::layer: return "ln";
    case NormKind::group: return "gn";
  }
  return "?";
}

NormKind norm_kind_from_name(const std::string& name) {
  if (name == "bn") return NormKind::batch;
  if (name == "in") return NormKind::instance;
  if (name == "ln") return NormKind::layer;
  if (name == "gn") return NormKind::group;
  throw ConfigError("unknown normalizer '" + name + "' (expected bn, in, ln, or gn)");
}

static int batch_shards(const MomentScheme& s, int n) {
  if (s.shard.per_shard <= 0) return 1;
  if (n % s.shard.per_shard != 0 || n / s.shard.per_shard != s.shard.n_shards) {
    throw ConfigError("shard config (" + std::to_string(s.shard.n_shards) + "," +
                      std::to_string(s.shard.per_shard) + ") does not tile batch of " +
                      std::to_string(n));
  }
  return s.shard.n_shards;
}

int group_count(const MomentScheme& s, int n, int c) {
  switch (s.kind) {
    case NormKind::batch: return batch_shards(s, n) * c;
    case NormKind::instance: return n * c;
    case NormKind::layer: return n;
    case NormKind::group:
      if (s.groups < 1 || c % s.groups != 0) {
        throw ConfigError("group norm: " + std::to_string(s.groups) +
                          " groups does not divide " + std::to_string(c) + " channels");
      }
      return n * s.groups;
  }
  return 0;
}

int group_size(const MomentScheme& s, int n, int c, int h, int w) {
  const int hw = h * w;
  switch (s.kind) {
    case NormKind::batch: return (n / batch_shards(s, n)) * hw;
    case NormKind::instance: return hw;
    case NormKind::layer: return c * hw;
    case NormKind::group: return (c / s.groups) * hw;
  }
  return 0;
}

int group_of(const MomentScheme& s, int c, int in, int ic) {
  switch (s.kind) {
    case NormKind::batch: {
      const int shard = s.shard.per_shard > 0 ? in / s.shard.per_shard : 0;
      return shard * c + ic;
    }
    case NormKind::instance: return in * c + ic;
    case NormKind::layer: return in;
    case NormKind::group: return in * s.groups + ic / (c / s.groups);
  }
  return 0;
}

Moments compute_moments(const Tensor4& x, const MomentScheme& s) {
  const int gc = group_count(s, x.n, x.c);
  const int gs = group_size(s, x.n, x.c, x.h, x.w);
  Moments m;
  m.mean.assign(static_cast<size_t>(gc), 0.0);
  m.var.assign(static_cast<size_t>(gc), 0.0);
  m.group_size = gs;

  const size_t hw = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const int g = group_of(s, x.c, in, ic);
      const double* p = &x.data[x.index(in, ic, 0, 0)];
      double sum = 0.0, sumsq = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        sum += p[i];
        sumsq += p[i] * p[i];
      }
      m.mean[static_cast<size_t>(g)] += sum;
      m.var[static_cast<size_t>(g)] += sumsq;
    }
  }
  const double inv = 1.0 / static_cast<double>(gs);
  for (int g = 0; g < gc; ++g) {
    const double mu = m.mean[static_cast<size_t>(g)] * inv;
    double v = m.var[static_cast<size_t>(g)] * inv - mu * mu;
    if (v < 0.0) v = 0.0;  // roundoff guard
    m.mean[static_cast<size_t>(g)] = mu;
    m.var[static_cast<size_t>(g)] = v;
  }
  ++g_moments_evals;
  return m;
}

uint64_t moments_eval_count() { return g_moments_evals; }
void reset_moments_eval_count() { g_moments_evals = 0; }

Tensor4 normalize_with_moments(const Tensor4& x, const MomentScheme& s, const Moments& m,
                               double eps) {
  if (eps < 0.0) {
    throw ConfigError("normalize: eps must be non-negative, got " + std::to_string(eps));
  }
  if (static_cast<int>(m.mean.size()) != group_count(s, x.n, x.c)) {
    throw ConfigError("normalize: moments have " + std::to_string(m.mean.size()) +
                      " groups, input " + x.shape_str() + " needs " +
                      std::to_string(group_count(s, x.n, x.c)));
  }
  Tensor4 xhat(x.n, x.c, x.h, x.w);
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const int g = group_of(s, x.c, in, ic);
      const double mu = m.mean[static_cast<size_t>(g)];
      const double inv_sd = 1.0 / std::sqrt(m.var[static_cast<size_t>(g)] + eps);
      const double* p = &x.data[x.index(in, ic, 0, 0)];
      double* q = &xhat.data[xhat.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) q[i] = (p[i] - mu) * inv_sd;
    }
  }
  return xhat;
}

Tensor4 normalize(const Tensor4& x, const MomentScheme& s, double eps, NormCache* cache) {
  Moments m = compute_moments(x, s);
  Tensor4 xhat = normalize_with_moments(x, s, m, eps);
  if (cache != nullptr) {
    cache->scheme = s;
    cache->moments = std::move(m);
    cache->xhat = xhat;
    cache->eps = eps;
  }
  return xhat;
}

Tensor4 normalize_with_channel_stats(const Tensor4& x, const std::vector<double>& mean,
                                     const std::vector<double>& var, double eps) {
  if (static_cast<int>(mean.size()) != x.c || static_cast<int>(var.size()) != x.c) {
    throw ConfigError("channel stats length " + std::to_string(mean.size()) +
                      " does not match channels of " + x.shape_str());
  }
  Tensor4 y(x.n, x.c, x.h, x.w);
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const double mu = mean[static_cast<size_t>(ic)];
      const double inv_sd = 1.0 / std::sqrt(var[static_cast<size_t>(ic)] + eps);
      const double* p = &x.data[x.index(in, ic, 0, 0)];
      double* q = &y.data[y.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) q[i] = (p[i] - mu) * inv_sd;
    }
  }
  return y;
}

Tensor4 norm_backward(const Tensor4& dxhat, const NormCache& cache) {
  const Tensor4& xhat = cache.xhat;
  if (!dxhat.same_shape(xhat)) {
    throw UsageError("norm_backward: cotangent shape " + dxhat.shape_str() +
                     " does not match cached " + xhat.shape_str());
  }
  const MomentScheme& s = cache.scheme;
  const int gc = group_count(s, xhat.n, xhat.c);
  std::vector<double> sum_d(static_cast<size_t>(gc), 0.0);
  std::vector<double> sum_dx(static_cast<size_t>(gc), 0.0);

  const size_t hw = static_cast<size_t>(xhat.h) * xhat.w;
  for (int in = 0; in < xhat.n; ++in) {
    for (int ic = 0; ic < xhat.c; ++ic) {
      const int g = group_of(s, xhat.c, in, ic);
      const double* d = &dxhat.data[dxhat.index(in, ic, 0, 0)];
      const double* xh = &xhat.data[xhat.index(in, ic, 0, 0)];
      double a = 0.0, b = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        a += d[i];
        b += d[i] * xh[i];
      }
      sum_d[static_cast<size_t>(g)] += a;
      sum_dx[static_cast<size_t>(g)] += b;
    }
  }

  const double inv_m = 1.0 / static_cast<double>(cache.moments.group_size);
  Tensor4 dx(xhat.n, xhat.c, xhat.h, xhat.w);
  for (int in = 0; in < xhat.n; ++in) {
    for (int ic = 0; ic < xhat.c; ++ic) {
      const int g = group_of(s, xhat.c, in, ic);
      const double inv_sd = 1.0 / std::sqrt(cache.moments.var[static_cast<size_t>(g)] + cache.eps);
      const double mean_d = sum_d[static_cast<size_t>(g)] * inv_m;
      const double mean_dx = sum_dx[static_cast<size_t>(g)] * inv_m;
      const double* d = &dxhat.data[dxhat.index(in, ic, 0, 0)];
      const double* xh = &xhat.data[xhat.index(in, ic, 0, 0)];
      double* o = &dx.data[dx.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) {
        o[i] = (d[i] - mean_d - xh[i] * mean_dx) * inv_sd;
      }
    }
  }
  return dx;
}

Tensor4 affine_transform(const Tensor4& xhat, const std::vector<double>& gamma,
                         const std::vector<double>& beta) {
  if (static_cast<int>(gamma.size()) != xhat.c || static_cast<int>(beta.size()) != xhat.c) {
    throw ConfigError("affine params length " + std::to_string(gamma.size()) +
                      " does not match channels of " + xhat.shape_str());
  }
  Tensor4 y(xhat.n, xhat.c, xhat.h, xhat.w);
  const size_t hw = static_cast<size_t>(xhat.h) * xhat.w;
  for (int in = 0; in < xhat.n; ++in) {
    for (int ic = 0; ic < xhat.c; ++ic) {
      const double g = gamma[static_cast<size_t>(ic)];
      const double b = beta[static_cast<size_t>(ic)];
      const double* p = &xhat.data[xhat.index(in, ic, 0, 0)];
      double* q = &y.data[y.index(in, ic, 0, 0)];
      for (size_t i = 0; i < hw; ++i) q[i] = g * p[i] + b;
    }
  }
  return y;
}

AffineGrads affine_backward(const Tensor4& xhat, const std::vector<double>& gamma,
                            const Tensor4& dy) {
  if (!dy.same_shape(xhat)) {
    throw ConfigError("affine_backward: cotangent shape " + dy.shape_str() +
                      " does not match " + xhat.shape_str());
  }
  AffineGrads out;
  out.dxhat = Tensor4(xhat.n, xhat.c, xhat.h, xhat.w);
  out.dgamma.assign(static_cast<size_t>(xhat.c), 0.0);
  out.dbeta.assign(static_cast<size_t>(xhat.c), 0.0);
  const size_t hw = static_cast<size_t>(xhat.h) * xhat.w;
  for (int in = 0; in < xhat.n; ++in) {
    for (int ic = 0; ic < xhat.c; ++ic) {
      const double g = gamma[static_cast<size_t>(ic)];
      const double* d = &dy.data[dy.index(in, ic, 0, 0)];
      const double* xh = &xhat.data[xhat.index(in, ic, 0, 0)];
      double* o = &out.dxhat.data[out.dxhat.index(in, ic, 0, 0)];
      double dg = 0.0, db = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        o[i] = g * d[i];
        dg += d[i] * xh[i];
        db += d[i];
      }
      out.dgamma[static_cast<size_t>(ic)] += dg;
      out.dbeta[static_cast<size_t>(ic)] += db;
    }
  }
  return out;
}

FilterBank wn_normalize(const FilterBank& w, const std::vector<double>& gamma) {
  if (static_cast<int>(gamma.size()) != w.oc) {
    throw ConfigError("weight norm: gamma length " + std::to_string(gamma.size()) +
                      " does not match " + std::to_string(w.oc) + " filters");
  }
  FilterBank out(w.oc, w.ic, w.kh, w.kw);
  const size_t row = static_cast<size_t>(w.ic) * w.kh * w.kw;
  for (int o = 0; o < w.oc; ++o) {
    const double* p = &w.data[w.index(o, 0, 0, 0)];
    double norm_sq = 0.0;
    for (size_t i = 0; i < row; ++i) norm_sq += p[i] * p[i];
    if (norm_sq == 0.0) {
      throw NumericError("weight norm: filter " + std::to_string(o) + " has zero norm");
    }
    const double scale = gamma[static_cast<size_t>(o)] / std::sqrt(norm_sq);
    double* q = &out.data[out.index(o, 0, 0, 0)];
    for (size_t i = 0; i < row; ++i) q[i] = scale * p[i];
  }
  return out;
}

BnStatsMode bn_stats_mode_from_name(const std::string& name) {
  if (name == "batch_average") return BnStatsMode::batch_average;
  if (name == "moving_average") return BnStatsMode::moving_average;
  throw ConfigError("unknown bn stats mode '" + name +
                    "' (expected batch_average or moving_average)");
}

void BnRunningStats::reset(int channels) {
  mean.assign(static_cast<size_t>(channels), 0.0);
  var.assign(static_cast<size_t>(channels), 1.0);
  batches_seen = 0;
}

void BnRunningStats::accumulate(const Moments& batch, int n_shards, int channels, BnStatsMode mode,
                                double decay) {
  if (static_cast<int>(batch.mean.size()) != n_shards * channels) {
    throw ConfigError("bn stats: got " + std::to_string(batch.mean.size()) + " groups, expected " +
                      std::to_string(n_shards) + "x" + std::to_string(channels));
  }
  if (static_cast<int>(mean.size()) != channels) reset(channels);

  // Shard-local moments are averaged into a single per-channel estimate.
  std::vector<double> bm(static_cast<size_t>(channels), 0.0);
  std::vector<double> bv(static_cast<size_t>(channels), 0.0);
  for (int s = 0; s < n_shards; ++s) {
    for (int ic = 0; ic < channels; ++ic) {
      bm[static_cast<size_t>(ic)] += batch.mean[static_cast<size_t>(s * channels + ic)];
      bv[static_cast<size_t>(ic)] += batch.var[static_cast<size_t>(s * channels + ic)];
    }
  }
  for (int ic = 0; ic < channels; ++ic) {
    bm[static_cast<size_t>(ic)] /= n_shards;
    bv[static_cast<size_t>(ic)] /= n_shards;
  }

  ++batches_seen;
  if (mode == BnStatsMode::batch_average) {
    const double w = 1.0 / static_cast<double>(batches_seen);
    for (int ic = 0; ic < channels; ++ic) {
      mean[static_cast<size_t>(ic)] += (bm[static_cast<size_t>(ic)] - mean[static_cast<size_t>(ic)]) * w;
      var[static_cast<size_t>(ic)] += (bv[static_cast<size_t>(ic)] - var[static_cast<size_t>(ic)]) * w;
    }
  } else {
    for (int ic = 0; ic < channels; ++ic) {
      mean[static_cast<size_t>(ic)] = decay * mean[static_cast<size_t>(ic)] + (1.0 - decay) * bm[static_cast<size_t>(ic)];
      var[static_cast<size_t>(ic)] = decay * var[static_cast<size_t>(ic)] + (1.0 - decay) * bv[static_cast<size_t>(ic)];
    }
  }
}

}  // namespace normlab
