#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "normlab/analytics.hpp"
#include "normlab/dataset.hpp"
#include "normlab/model.hpp"
#include "normlab/shard.hpp"

namespace normlab {

struct OptimizerConfig {
  enum class Kind { sgd_momentum, rmsprop };
  Kind kind = Kind::sgd_momentum;
  double momentum = 0.9;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
  double weight_decay = 1e-4;
};

OptimizerConfig::Kind optimizer_kind_from_name(const std::string& name);
std::string optimizer_kind_name(OptimizerConfig::Kind k);

struct LRSchedule {
  enum class Kind { stepwise, cosine };
  Kind kind = Kind::stepwise;
  std::vector<int> milestones{30, 60, 90};  // stepwise: divide by 10 at each
  int total_epochs = 90;                    // cosine horizon
};

LRSchedule::Kind lr_schedule_kind_from_name(const std::string& name);

// Learning rate for a given (0-based) epoch.
double lr_at(const LRSchedule& sched, double lr0, int epoch);

// Stateful first-order optimizer; buffers are keyed by parameter name so
// they survive across step calls and snapshot round trips.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<ParamRef>& params, double lr);

  const OptimizerConfig& config() const { return cfg_; }
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, std::vector<double>> buffers_;
};

struct ExperimentConfig {
  std::string network = "miniresnet";
  NormChoice norm = NormChoice::sn;
  std::vector<NormKind> omega;  // empty means the full member set
  int gn_groups = 4;
  std::string hard_init_mu;     // "", or one of in/ln/bn (set both or neither)
  std::string hard_init_sigma;
  SigmaAggregation sigma_aggregation = SigmaAggregation::std_dev;
  double eps = kNormEps;

  int n_shards = 1;
  int per_shard = 32;

  OptimizerConfig optimizer;
  double lr0 = 0.1;
  LRSchedule schedule;
  int lr_reference_batch = 256;
  int epochs = 30;
  std::uint64_t seed = 1;

  std::string dataset = "synthetic";
  std::vector<std::string> train_files, test_files;
  int synth_classes = 4;
  int synth_train = 128;
  int synth_test = 64;
  int synth_size = 32;
  int synth_channels = 3;
  double synth_noise = 0.35;
  std::uint64_t data_seed = 0;  // 0: derived from seed
  double fraction = 1.0;        // training subset fraction
  int downsample_factor = 1;

  BnStatsMode bn_stats = BnStatsMode::batch_average;
  double bn_decay = 0.9;
  int bn_batches = 100;

  int eval_batch = 64;
  int snapshot_every = 0;  // epochs between periodic snapshots; 0 disables
  std::string out_dir = "out";
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  RatioTrajectory trajectory;
  std::vector<double> step_losses;  // per optimizer step, mean loss
};

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

// Owns the datasets, model and optimizer; runs deterministic sharded epochs
// and records metrics plus the per-layer ratio trajectory.
class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg);

  // Trains from epochs_done() up to cfg.epochs.
  void run();

  // Pins every switchable layer to its dominant members and freezes the
  // ratio parameters; subsequent run() calls fine-tune the rest.
  void harden_all();

  void save_snapshot(const std::string& path) const;
  void load_snapshot(const std::string& path);

  // Re-estimates inference statistics for batch-normalized members by
  // averaging moments over training batches.
  void estimate_bn_stats();

  std::pair<double, double> evaluate();  // (mean loss, accuracy) on test set

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  Optimizer& optimizer() { return opt_; }
  const ExperimentConfig& config() const { return cfg_; }
  const TrainResult& result() const { return result_; }
  int epochs_done() const { return epochs_done_; }
  const Dataset& train_data() const { return train_; }
  const Dataset& test_data() const { return test_; }

 private:
  void train_epoch(int epoch);
  void record_ratios(int epoch);
  Tensor4 gather(const Dataset& d, const std::vector<std::size_t>& order, std::size_t start,
                 int count, std::vector<int>* labels) const;

  ExperimentConfig cfg_;
  Dataset train_, test_;
  std::unique_ptr<Model> model_;
  Optimizer opt_;
  ShardConfig shard_;
  double scaled_lr0_ = 0.0;
  int epochs_done_ = 0;
  bool needs_bn_stats_ = false;
  TrainResult result_;
};

}  // namespace normlab
