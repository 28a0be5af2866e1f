#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/shard.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Statistics families.  Each assigns every tensor element to exactly one
// moment group:
//   batch    - (shard, channel), pooled over the shard's samples and h,w
//   instance - (sample, channel), pooled over h,w
//   layer    - (sample), pooled over c,h,w
//   group    - (sample, channel block), pooled over the block and h,w
enum class NormKind { batch, instance, layer, group };

std::string norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

struct MomentScheme {
  NormKind kind = NormKind::batch;
  int groups = 1;          // used by NormKind::group
  ShardConfig shard{1, 0}; // used by NormKind::batch; per_shard 0 means whole batch
};

// Per-group first and second central moments (variance is the biased /m form).
struct Moments {
  std::vector<double> mean;
  std::vector<double> var;
  int group_size = 0;
};

int group_count(const MomentScheme& s, int n, int c);
int group_size(const MomentScheme& s, int n, int c, int h, int w);
int group_of(const MomentScheme& s, int c, int in, int ic);

Moments compute_moments(const Tensor4& x, const MomentScheme& s);

// Running total of compute_moments calls; the cost assertions for hardened
// ratios read it.
uint64_t moments_eval_count();
void reset_moments_eval_count();

constexpr double kNormEps = 1e-5;

// What the backward pass needs from the forward pass.
struct NormCache {
  MomentScheme scheme;
  Moments moments;
  Tensor4 xhat{0, 0, 0, 0};
  double eps = kNormEps;
};

// xhat = (x - mean[g]) / sqrt(var[g] + eps) with caller-supplied moments
// (must share the scheme's grouping).
Tensor4 normalize_with_moments(const Tensor4& x, const MomentScheme& s, const Moments& m,
                               double eps = kNormEps);

// Convenience: compute the moments, then normalize.  Cache is optional.
Tensor4 normalize(const Tensor4& x, const MomentScheme& s, double eps = kNormEps,
                  NormCache* cache = nullptr);

// Same shift/scale but with externally supplied per-channel statistics
// (batch-norm inference path).
Tensor4 normalize_with_channel_stats(const Tensor4& x, const std::vector<double>& mean,
                                     const std::vector<double>& var, double eps = kNormEps);

// Full-chain gradient through mean and variance, per group:
// dx = (dxhat - avg(dxhat) - xhat * avg(dxhat * xhat)) / sqrt(var + eps)
Tensor4 norm_backward(const Tensor4& dxhat, const NormCache& cache);

// Per-channel y = gamma[c] * xhat + beta[c].
Tensor4 affine_transform(const Tensor4& xhat, const std::vector<double>& gamma,
                         const std::vector<double>& beta);

struct AffineGrads {
  Tensor4 dxhat{0, 0, 0, 0};
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

AffineGrads affine_backward(const Tensor4& xhat, const std::vector<double>& gamma,
                            const Tensor4& dy);

// Weight normalization over each output filter: w'_o = gamma[o] * w_o / |w_o|.
FilterBank wn_normalize(const FilterBank& w, const std::vector<double>& gamma);

// Per-channel inference statistics for batch normalization.  Sharded batch
// moments are first averaged across shards, then folded in.
enum class BnStatsMode { batch_average, moving_average };

BnStatsMode bn_stats_mode_from_name(const std::string& name);

struct BnRunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  long batches_seen = 0;

  void reset(int channels);
  void accumulate(const Moments& batch, int n_shards, int channels, BnStatsMode mode,
                  double decay = 0.9);
};

}  // namespace normlab
