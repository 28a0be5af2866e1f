#pragma once

#include <string>
#include <vector>

#include "normlab/analytics.hpp"
#include "normlab/kernels.hpp"
#include "normlab/normalizers.hpp"
#include "normlab/switchable.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

enum class NormChoice { bn, in_stat, ln, gn, sn, sn_tied };

NormChoice norm_choice_from_name(const std::string& name);
std::string norm_choice_name(NormChoice c);

struct ModelConfig {
  NormChoice norm = NormChoice::sn;
  std::vector<NormKind> omega;  // sn members; defaults to {in, ln, bn}
  int gn_groups = 4;
  double eps = kNormEps;
  SigmaAggregation agg = SigmaAggregation::std_dev;
  int input_channels = 3;
  int classes = 4;
  int stem_width = 16;
  std::vector<int> stage_widths{16, 32, 64};
  int blocks_per_stage = 2;
  uint64_t init_seed = 1;
};

// One normalization layer: a plain normalizer or a switchable mixture,
// followed by the per-channel affine transform.
struct NormUnit {
  std::string name;
  int layer_id = 0;
  int rf = 1;
  bool is_shortcut = false;

  NormChoice choice = NormChoice::bn;
  MomentScheme scheme;  // plain kinds
  RatioState state;     // sn kinds
  std::vector<double> gamma, beta;
  double eps = kNormEps;
  SigmaAggregation agg = SigmaAggregation::std_dev;
  BnRunningStats bn_stats;

  std::vector<double> dgamma, dbeta, dlogits_mu, dlogits_sigma;

  NormCache plain_cache;
  SNCache sn_cache;

  // Per-channel batch moments collected during the current batch (for the
  // running-statistics update, averaged over shards at finalize time).
  std::vector<double> pend_mean, pend_var;
  int pend_count = 0;

  bool is_sn() const { return choice == NormChoice::sn || choice == NormChoice::sn_tied; }
  bool uses_bn_stats() const;

  Tensor4 forward_train(const Tensor4& h);
  Tensor4 forward_eval(const Tensor4& h) const;
  Tensor4 backward(const Tensor4& dy);

  void finalize_batch_moments(BnStatsMode mode, double decay);
  void discard_batch_moments();
};

struct ConvUnit {
  std::string name;
  FilterBank w{0, 0, 0, 0};
  ConvGeom geom;
  NormUnit norm;
  bool relu_after = true;

  FilterBank dw{0, 0, 0, 0};
  Tensor4 x_in{0, 0, 0, 0};
  Tensor4 relu_in{0, 0, 0, 0};

  Tensor4 forward_train(const Tensor4& x);
  Tensor4 forward_eval(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& dy);
};

struct ResBlock {
  ConvUnit a, b;  // b has no activation of its own; relu follows the merge
  bool has_proj = false;
  ConvUnit proj;
  Tensor4 sum_relu_in{0, 0, 0, 0};

  Tensor4 forward_train(const Tensor4& x);
  Tensor4 forward_eval(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& dy);
};

struct ParamRef {
  std::string name;
  std::vector<double>* value = nullptr;
  std::vector<double>* grad = nullptr;
  bool decay = true;
  const bool* frozen = nullptr;
};

// Small residual classifier: stem conv, three stages of residual blocks with
// stride-2 transitions (projection shortcuts carry their own norm layer),
// global average pooling, linear head.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  // Forward+backward over one shard slice; accumulates parameter gradients
  // (of the summed loss) and returns the summed loss.
  double train_shard(const Tensor4& x, const std::vector<int>& labels);

  Tensor4 eval_logits(const Tensor4& x) const;

  // Forward pass in training mode with no loss or backward step; used to
  // collect batch moments when (re)estimating inference statistics.
  void stats_pass(const Tensor4& x);

  void zero_grads();
  void scale_grads(double s);

  std::vector<ParamRef> params();
  std::vector<NormUnit*> norm_units();
  std::vector<const NormUnit*> norm_units() const;

  const ModelConfig& config() const { return cfg_; }
  int norm_layer_count() const;

 private:
  ModelConfig cfg_;
  ConvUnit stem_;
  std::vector<std::vector<ResBlock>> stages_;
  FilterBank fc_w{0, 0, 0, 0};
  std::vector<double> fc_b;
  FilterBank dfc_w{0, 0, 0, 0};
  std::vector<double> dfc_b;
  Tensor4 gap_in_{0, 0, 0, 0};
  Tensor4 fc_in_{0, 0, 0, 0};
};

// Receptive-field graph matching the model's norm-layer construction order.
RfGraph miniresnet_rf_graph(const ModelConfig& cfg);

}  // namespace normlab
