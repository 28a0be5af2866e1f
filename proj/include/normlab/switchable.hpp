#pragma once

#include <string>
#include <vector>

#include "normlab/normalizers.hpp"
#include "normlab/shard.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Candidate-normalizer sets are always kept in the fixed (in, ln, bn) order.
std::vector<NormKind> full_omega();
std::vector<NormKind> omega_from_names(const std::string& csv);
std::string omega_to_names(const std::vector<NormKind>& omega);

// Max-subtracted softmax, renormalized so the entries sum to 1.
std::vector<double> softmax_ratios(const std::vector<double>& logits);

// Per-layer mixing weights over omega.  Tied mode uses logits_mu for both
// ratio vectors; hard mode pins one-hot ratios and freezes the logits.
struct RatioState {
  std::vector<NormKind> omega;
  std::vector<double> logits_mu;
  std::vector<double> logits_sigma;
  bool tied = false;
  bool hard = false;
  int hard_mu = 0;
  int hard_sigma = 0;

  std::vector<double> lambda_mu() const;
  std::vector<double> lambda_sigma() const;
};

RatioState make_ratio_state(const std::vector<NormKind>& omega, bool tied);

struct HardRatio {
  NormKind choice_mu = NormKind::instance;
  NormKind choice_sigma = NormKind::instance;
};

// Argmax of each ratio vector; ties break toward the earlier member in the
// (in, ln, bn) order.
HardRatio harden(const RatioState& state);
void apply_hard_ratio(RatioState& state, const HardRatio& hr);

// Saturated one-hot start for training with hard ratios from scratch: the
// chosen logit gets +logit_magnitude, the rest -logit_magnitude, and the
// state is pinned hard.
RatioState hard_init_state(const std::vector<NormKind>& omega, NormKind mu, NormKind sigma,
                           double logit_magnitude = 10.0);

// Drops the removed members' logits; surviving ratios are the softmax of the
// surviving logits.  Only soft states can be restricted.
RatioState restrict_omega(const RatioState& state, const std::vector<NormKind>& subset);

// Denominator rule: std_dev mixes standard deviations sum(l_z * sqrt(var_z +
// eps)); variance mixes variances sqrt(sum(l_z * var_z) + eps).
enum class SigmaAggregation { std_dev, variance };
SigmaAggregation sigma_aggregation_from_name(const std::string& name);
std::string sigma_aggregation_name(SigmaAggregation agg);

struct SNLayer {
  RatioState state;
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = kNormEps;
  SigmaAggregation agg = SigmaAggregation::std_dev;
};

// Everything the backward pass needs.  mu_mix and denom are per-(n,c) cell
// because every member's group is constant within one (n,c) slice.
struct SNCache {
  Tensor4 x{0, 0, 0, 0};
  std::vector<MomentScheme> schemes;
  std::vector<Moments> moments;  // entry left empty when a hard mode skipped it
  std::vector<double> lam_mu;
  std::vector<double> lam_sigma;
  std::vector<double> mu_mix;
  std::vector<double> denom;
  std::vector<double> gamma;
  SigmaAggregation agg = SigmaAggregation::std_dev;
  double eps = kNormEps;
  bool tied = false;
  bool hard = false;
};

// Training-time forward: computes each member's moments (hard mode computes
// only the selected ones), mixes them per the layer's ratios, then applies
// the per-channel affine transform.
Tensor4 sn_forward(const Tensor4& x, const SNLayer& layer, const ShardConfig& shard,
                   SNCache* cache = nullptr);

// Inference-time forward: the bn member reads running per-channel statistics
// instead of batch moments; in/ln are per-input as always.
Tensor4 sn_forward_eval(const Tensor4& x, const SNLayer& layer, const BnRunningStats* bn);

struct SNGrads {
  Tensor4 dx{0, 0, 0, 0};
  std::vector<double> dlogits_mu;
  std::vector<double> dlogits_sigma;  // zeros when tied (folded into dlogits_mu) or hard
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

SNGrads sn_backward(const SNCache& cache, const Tensor4& dy);

}  // namespace normlab
