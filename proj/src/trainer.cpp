#include "normlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "normlab/errors.hpp"
#include "normlab/rng.hpp"
#include "normlab/textio.hpp"

namespace normlab {

namespace {
constexpr double kPi = 3.14159265358979323846;

int trajectory_slot(NormKind k) {
  switch (k) {
    case NormKind::instance:
      return 0;
    case NormKind::layer:
      return 1;
    case NormKind::batch:
      return 2;
    default:
      throw UsageError("no trajectory slot for normalizer '" + norm_kind_name(k) + "'");
  }
}
}  // namespace

OptimizerConfig::Kind optimizer_kind_from_name(const std::string& name) {
  if (name == "sgd_momentum") return OptimizerConfig::Kind::sgd_momentum;
  if (name == "rmsprop") return OptimizerConfig::Kind::rmsprop;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd_momentum or rmsprop)");
}

std::string optimizer_kind_name(OptimizerConfig::Kind k) {
  return k == OptimizerConfig::Kind::sgd_momentum ? "sgd_momentum" : "rmsprop";
}

LRSchedule::Kind lr_schedule_kind_from_name(const std::string& name) {
  if (name == "stepwise") return LRSchedule::Kind::stepwise;
  if (name == "cosine") return LRSchedule::Kind::cosine;
  throw ConfigError("unknown lr_schedule '" + name + "' (expected stepwise or cosine)");
}

double lr_at(const LRSchedule& sched, double lr0, int epoch) {
  if (epoch < 0) throw UsageError("epoch must be non-negative");
  if (sched.kind == LRSchedule::Kind::stepwise) {
    int drops = 0;
    for (int m : sched.milestones) {
      if (epoch >= m) ++drops;
    }
    return lr0 * std::pow(0.1, drops);
  }
  if (sched.total_epochs <= 0) throw ConfigError("cosine schedule needs a positive epoch count");
  const double t = std::min(static_cast<double>(epoch), static_cast<double>(sched.total_epochs));
  return 0.5 * lr0 * (1.0 + std::cos(kPi * t / sched.total_epochs));
}

void Optimizer::step(const std::vector<ParamRef>& params, double lr) {
  for (const ParamRef& p : params) {
    if (p.frozen && *p.frozen) continue;
    std::vector<double>& v = *p.value;
    std::vector<double>& g = *p.grad;
    if (v.size() != g.size()) {
      throw UsageError("parameter/gradient size mismatch for '" + p.name + "'");
    }
    std::vector<double>& buf = buffers_[p.name];
    if (buf.size() != v.size()) buf.assign(v.size(), 0.0);
    for (size_t i = 0; i < v.size(); ++i) {
      double grad = g[i];
      if (p.decay) grad += cfg_.weight_decay * v[i];
      if (!std::isfinite(grad)) throw NumericError("non-finite gradient in '" + p.name + "'");
      if (cfg_.kind == OptimizerConfig::Kind::sgd_momentum) {
        buf[i] = cfg_.momentum * buf[i] + grad;
        v[i] -= lr * buf[i];
      } else {
        buf[i] = cfg_.rms_decay * buf[i] + (1.0 - cfg_.rms_decay) * grad * grad;
        v[i] -= lr * grad / (std::sqrt(buf[i]) + cfg_.rms_eps);
      }
    }
  }
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,lr,train_loss,test_loss,test_accuracy\n";
  for (const EpochMetrics& m : metrics) {
    out += std::to_string(m.epoch) + "," + fmt_g12(m.lr) + "," + fmt_g12(m.train_loss) + "," +
           fmt_g12(m.test_loss) + "," + fmt_g12(m.test_accuracy) + "\n";
  }
  return out;
}

Trainer::Trainer(const ExperimentConfig& cfg) : cfg_(cfg), opt_(cfg.optimizer) {
  if (cfg_.network != "miniresnet") {
    throw ConfigError("unknown network '" + cfg_.network + "'");
  }
  if (cfg_.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg_.n_shards < 1 || cfg_.per_shard < 1) {
    throw ConfigError("n_shards and per_shard must be positive");
  }
  if (cfg_.lr_reference_batch <= 0) throw ConfigError("lr_reference_batch must be positive");
  if (cfg_.bn_decay <= 0.0 || cfg_.bn_decay >= 1.0) {
    throw ConfigError("bn_decay must lie in (0, 1)");
  }
  shard_.n_shards = cfg_.n_shards;
  shard_.per_shard = cfg_.per_shard;

  const uint64_t dseed = cfg_.data_seed != 0 ? cfg_.data_seed : derive_seed(cfg_.seed, 909);
  if (cfg_.dataset == "synthetic") {
    SyntheticSpec ts;
    ts.classes = cfg_.synth_classes;
    ts.samples = cfg_.synth_train;
    ts.size = cfg_.synth_size;
    ts.channels = cfg_.synth_channels;
    ts.noise = cfg_.synth_noise;
    ts.seed = dseed;
    ts.noise_stream = 0;
    train_ = make_synthetic(ts);
    ts.samples = cfg_.synth_test;
    ts.noise_stream = 1;
    test_ = make_synthetic(ts);
  } else if (cfg_.dataset == "cifar10") {
    train_ = load_cifar10_binary(cfg_.train_files);
    test_ = load_cifar10_binary(cfg_.test_files);
  } else {
    throw ConfigError("unknown dataset '" + cfg_.dataset + "' (expected synthetic or cifar10)");
  }

  if (cfg_.fraction < 1.0) train_ = subsample(train_, cfg_.fraction, cfg_.seed);
  if (cfg_.downsample_factor > 1) {
    train_ = downsample(train_, cfg_.downsample_factor);
    test_ = downsample(test_, cfg_.downsample_factor);
  }
  if (static_cast<int>(train_.size()) < shard_.total()) {
    throw ConfigError("training set of " + std::to_string(train_.size()) +
                      " samples is smaller than one batch of " + std::to_string(shard_.total()));
  }
  if (test_.size() == 0) throw InputError("test set is empty");

  ModelConfig mc;
  mc.norm = cfg_.norm;
  mc.omega = cfg_.omega.empty() ? full_omega() : cfg_.omega;
  mc.gn_groups = cfg_.gn_groups;
  mc.eps = cfg_.eps;
  mc.agg = cfg_.sigma_aggregation;
  mc.input_channels = train_.images.c;
  mc.classes = train_.classes;
  mc.init_seed = derive_seed(cfg_.seed, 606);
  model_ = std::make_unique<Model>(mc);

  if (!cfg_.hard_init_mu.empty() || !cfg_.hard_init_sigma.empty()) {
    if (cfg_.hard_init_mu.empty() || cfg_.hard_init_sigma.empty()) {
      throw ConfigError("hard_init_mu and hard_init_sigma must be set together");
    }
    if (cfg_.norm != NormChoice::sn && cfg_.norm != NormChoice::sn_tied) {
      throw ConfigError("hard_init_* requires a switchable normalizer");
    }
    const NormKind mu = norm_kind_from_name(cfg_.hard_init_mu);
    const NormKind sg = norm_kind_from_name(cfg_.hard_init_sigma);
    for (NormUnit* u : model_->norm_units()) {
      if (u->is_sn()) u->state = hard_init_state(u->state.omega, mu, sg);
    }
  }

  scaled_lr0_ = cfg_.lr0 * static_cast<double>(shard_.total()) / cfg_.lr_reference_batch;
  for (NormUnit* u : model_->norm_units()) {
    if (u->uses_bn_stats()) needs_bn_stats_ = true;
  }
}

Tensor4 Trainer::gather(const Dataset& d, const std::vector<size_t>& order, size_t start,
                        int count, std::vector<int>* labels) const {
  Tensor4 out(count, d.images.c, d.images.h, d.images.w);
  if (labels) labels->assign(static_cast<size_t>(count), 0);
  const size_t chw = static_cast<size_t>(d.images.c) * d.images.h * d.images.w;
  for (int i = 0; i < count; ++i) {
    const size_t src = order[start + static_cast<size_t>(i)];
    std::copy(d.images.data.begin() + static_cast<long>(src * chw),
              d.images.data.begin() + static_cast<long>((src + 1) * chw),
              out.data.begin() + static_cast<long>(static_cast<size_t>(i) * chw));
    if (labels) (*labels)[static_cast<size_t>(i)] = d.labels[src];
  }
  return out;
}

void Trainer::train_epoch(int epoch) {
  const int batch = shard_.total();
  const size_t n = train_.size();
  const int nb = static_cast<int>(n / static_cast<size_t>(batch));
  const double lr = lr_at(cfg_.schedule, scaled_lr0_, epoch);
  const std::vector<size_t> perm =
      Rng(derive_seed(cfg_.seed, 505, static_cast<uint64_t>(epoch))).permutation(n);

  double epoch_loss = 0.0;
  std::vector<int> labels;
  for (int b = 0; b < nb; ++b) {
    model_->zero_grads();
    double batch_loss = 0.0;
    for (int s = 0; s < shard_.n_shards; ++s) {
      const size_t start = static_cast<size_t>(b) * static_cast<size_t>(batch) +
                           static_cast<size_t>(s) * static_cast<size_t>(shard_.per_shard);
      const Tensor4 xs = gather(train_, perm, start, shard_.per_shard, &labels);
      batch_loss += model_->train_shard(xs, labels);
    }
    model_->scale_grads(1.0 / batch);
    for (NormUnit* u : model_->norm_units()) {
      if (u->uses_bn_stats() && cfg_.bn_stats == BnStatsMode::moving_average) {
        u->finalize_batch_moments(BnStatsMode::moving_average, cfg_.bn_decay);
      } else {
        u->discard_batch_moments();
      }
    }
    opt_.step(model_->params(), lr);
    const double mean_loss = batch_loss / batch;
    result_.step_losses.push_back(mean_loss);
    epoch_loss += mean_loss;
  }

  record_ratios(epoch);
  if (needs_bn_stats_ && cfg_.bn_stats == BnStatsMode::batch_average) estimate_bn_stats();
  const std::pair<double, double> ev = evaluate();

  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr;
  m.train_loss = epoch_loss / nb;
  m.test_loss = ev.first;
  m.test_accuracy = ev.second;
  result_.metrics.push_back(m);
  epochs_done_ = epoch + 1;
}

void Trainer::record_ratios(int epoch) {
  for (NormUnit* u : model_->norm_units()) {
    if (!u->is_sn()) continue;
    TrajectoryRecord r;
    r.layer_id = u->layer_id;
    r.epoch = epoch;
    r.rf = u->rf;
    const std::vector<double> lm = u->state.lambda_mu();
    const std::vector<double> ls = u->state.lambda_sigma();
    for (size_t z = 0; z < u->state.omega.size(); ++z) {
      const int slot = trajectory_slot(u->state.omega[z]);
      r.lambda_mu[static_cast<size_t>(slot)] = lm[z];
      r.lambda_sigma[static_cast<size_t>(slot)] = ls[z];
    }
    result_.trajectory.records.push_back(r);
  }
}

void Trainer::estimate_bn_stats() {
  const int batch = shard_.total();
  const int nb = static_cast<int>(train_.size() / static_cast<size_t>(batch));
  const int k = std::min(cfg_.bn_batches, nb);
  if (k <= 0) return;
  std::vector<size_t> ident(train_.size());
  for (size_t i = 0; i < ident.size(); ++i) ident[i] = i;
  for (NormUnit* u : model_->norm_units()) {
    u->discard_batch_moments();
    if (u->uses_bn_stats()) u->bn_stats.reset(static_cast<int>(u->gamma.size()));
  }
  for (int b = 0; b < k; ++b) {
    for (int s = 0; s < shard_.n_shards; ++s) {
      const size_t start = static_cast<size_t>(b) * static_cast<size_t>(batch) +
                           static_cast<size_t>(s) * static_cast<size_t>(shard_.per_shard);
      const Tensor4 xs = gather(train_, ident, start, shard_.per_shard, nullptr);
      model_->stats_pass(xs);
    }
    for (NormUnit* u : model_->norm_units()) {
      if (u->uses_bn_stats()) {
        u->finalize_batch_moments(BnStatsMode::batch_average, cfg_.bn_decay);
      } else {
        u->discard_batch_moments();
      }
    }
  }
}

std::pair<double, double> Trainer::evaluate() {
  const size_t n = test_.size();
  std::vector<size_t> ident(n);
  for (size_t i = 0; i < n; ++i) ident[i] = i;
  const size_t eb = static_cast<size_t>(std::max(1, cfg_.eval_batch));
  double loss = 0.0;
  size_t correct = 0;
  std::vector<int> labels;
  for (size_t start = 0; start < n; start += eb) {
    const int count = static_cast<int>(std::min(eb, n - start));
    const Tensor4 xs = gather(test_, ident, start, count, &labels);
    const Tensor4 logits = model_->eval_logits(xs);
    std::vector<double> row(static_cast<size_t>(logits.c));
    for (int i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 0; c < logits.c; ++c) {
        row[static_cast<size_t>(c)] = logits.at(i, c, 0, 0);
        if (row[static_cast<size_t>(c)] > row[static_cast<size_t>(best)]) best = c;
      }
      const XentResult xr = softmax_cross_entropy(row, labels[static_cast<size_t>(i)]);
      loss += xr.loss;
      if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return {loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

void Trainer::run() {
  for (int e = epochs_done_; e < cfg_.epochs; ++e) {
    train_epoch(e);
    if (cfg_.snapshot_every > 0 && (e + 1) % cfg_.snapshot_every == 0) {
      save_snapshot(cfg_.out_dir + "/snapshot_epoch" + std::to_string(e + 1) + ".bin");
    }
  }
}

void Trainer::harden_all() {
  bool any = false;
  for (NormUnit* u : model_->norm_units()) {
    if (!u->is_sn()) continue;
    apply_hard_ratio(u->state, harden(u->state));
    any = true;
  }
  if (!any) throw UsageError("no switchable layers to harden");
}

namespace {
constexpr char kSnapshotMagic[9] = "NRMLSNP1";
constexpr uint32_t kEndianTag = 0x01020304u;

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw ParseError(std::string("snapshot truncated while reading ") + what);
  return v;
}

uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw ParseError(std::string("snapshot truncated while reading ") + what);
  return v;
}
}  // namespace

void Trainer::save_snapshot(const std::string& path) const {
  std::vector<std::pair<std::string, std::vector<double>>> blobs;
  blobs.emplace_back("meta.format", std::vector<double>{1.0});
  blobs.emplace_back("meta.epochs_done", std::vector<double>{static_cast<double>(epochs_done_)});
  blobs.emplace_back("meta.seed", std::vector<double>{static_cast<double>(cfg_.seed)});
  blobs.emplace_back("meta.norm",
                     std::vector<double>{static_cast<double>(static_cast<int>(cfg_.norm))});
  {
    std::vector<double> m;
    m.reserve(result_.metrics.size() * 5);
    for (const EpochMetrics& e : result_.metrics) {
      m.push_back(static_cast<double>(e.epoch));
      m.push_back(e.lr);
      m.push_back(e.train_loss);
      m.push_back(e.test_loss);
      m.push_back(e.test_accuracy);
    }
    blobs.emplace_back("history.metrics", std::move(m));
  }
  {
    std::vector<double> t;
    t.reserve(result_.trajectory.records.size() * 9);
    for (const TrajectoryRecord& r : result_.trajectory.records) {
      t.push_back(static_cast<double>(r.layer_id));
      t.push_back(static_cast<double>(r.epoch));
      t.push_back(static_cast<double>(r.rf));
      for (double v : r.lambda_mu) t.push_back(v);
      for (double v : r.lambda_sigma) t.push_back(v);
    }
    blobs.emplace_back("history.trajectory", std::move(t));
  }
  for (const ParamRef& p : model_->params()) blobs.emplace_back("param." + p.name, *p.value);
  for (const auto& kv : opt_.buffers()) blobs.emplace_back("opt." + kv.first, kv.second);
  int idx = 0;
  for (const NormUnit* u : static_cast<const Model&>(*model_).norm_units()) {
    const std::string base = "norm." + std::to_string(idx++) + ".";
    blobs.emplace_back(base + "bn_mean", u->bn_stats.mean);
    blobs.emplace_back(base + "bn_var", u->bn_stats.var);
    blobs.emplace_back(base + "bn_seen",
                       std::vector<double>{static_cast<double>(u->bn_stats.batches_seen)});
    blobs.emplace_back(base + "ratio_mode",
                       std::vector<double>{u->state.hard ? 1.0 : 0.0,
                                           static_cast<double>(u->state.hard_mu),
                                           static_cast<double>(u->state.hard_sigma)});
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write snapshot '" + path + "'");
  os.write(kSnapshotMagic, 8);
  put_u32(os, kEndianTag);
  put_u32(os, static_cast<uint32_t>(blobs.size()));
  for (const auto& blob : blobs) {
    put_u32(os, static_cast<uint32_t>(blob.first.size()));
    os.write(blob.first.data(), static_cast<long>(blob.first.size()));
    put_u64(os, blob.second.size());
    os.write(reinterpret_cast<const char*>(blob.second.data()),
             static_cast<long>(blob.second.size() * sizeof(double)));
  }
  os.flush();
  if (!os) throw InputError("failed while writing snapshot '" + path + "'");
}

void Trainer::load_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open snapshot '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kSnapshotMagic, 8) != 0) {
    throw ParseError("'" + path + "' is not a snapshot file");
  }
  if (get_u32(is, "byte-order tag") != kEndianTag) {
    throw ParseError("snapshot '" + path + "' was written with a different byte order");
  }
  const uint32_t count = get_u32(is, "blob count");
  std::map<std::string, std::vector<double>> blobs;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(is, "name length");
    if (name_len == 0 || name_len > 4096) throw ParseError("snapshot blob name length corrupt");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("snapshot truncated inside a blob name");
    const uint64_t n = get_u64(is, "value count");
    if (n > (1ull << 31)) throw ParseError("snapshot blob '" + name + "' is implausibly large");
    std::vector<double> vals(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(vals.data()), static_cast<long>(n * sizeof(double)));
    if (!is) throw ParseError("snapshot truncated inside blob '" + name + "'");
    if (!blobs.emplace(std::move(name), std::move(vals)).second) {
      throw ParseError("snapshot contains a duplicate blob");
    }
  }

  const auto want = [&](const std::string& name) -> const std::vector<double>& {
    const auto it = blobs.find(name);
    if (it == blobs.end()) {
      throw UsageError("snapshot is missing '" + name + "'; incompatible with this configuration");
    }
    return it->second;
  };

  if (static_cast<int>(want("meta.norm").at(0)) != static_cast<int>(cfg_.norm)) {
    throw UsageError("snapshot was trained with norm '" +
                     norm_choice_name(static_cast<NormChoice>(
                         static_cast<int>(want("meta.norm").at(0)))) +
                     "' but this run uses '" + norm_choice_name(cfg_.norm) + "'");
  }
  epochs_done_ = static_cast<int>(want("meta.epochs_done").at(0));

  const std::vector<double>& mm = want("history.metrics");
  if (mm.size() % 5 != 0) throw ParseError("snapshot metrics history is malformed");
  result_.metrics.clear();
  for (size_t i = 0; i < mm.size(); i += 5) {
    EpochMetrics e;
    e.epoch = static_cast<int>(mm[i]);
    e.lr = mm[i + 1];
    e.train_loss = mm[i + 2];
    e.test_loss = mm[i + 3];
    e.test_accuracy = mm[i + 4];
    result_.metrics.push_back(e);
  }
  const std::vector<double>& tt = want("history.trajectory");
  if (tt.size() % 9 != 0) throw ParseError("snapshot ratio history is malformed");
  result_.trajectory.records.clear();
  for (size_t i = 0; i < tt.size(); i += 9) {
    TrajectoryRecord r;
    r.layer_id = static_cast<int>(tt[i]);
    r.epoch = static_cast<int>(tt[i + 1]);
    r.rf = static_cast<int>(tt[i + 2]);
    for (size_t z = 0; z < 3; ++z) r.lambda_mu[z] = tt[i + 3 + z];
    for (size_t z = 0; z < 3; ++z) r.lambda_sigma[z] = tt[i + 6 + z];
    result_.trajectory.records.push_back(r);
  }
  result_.step_losses.clear();

  for (const ParamRef& p : model_->params()) {
    const std::vector<double>& v = want("param." + p.name);
    if (v.size() != p.value->size()) {
      throw UsageError("snapshot parameter '" + p.name + "' holds " + std::to_string(v.size()) +
                       " values but the model expects " + std::to_string(p.value->size()));
    }
    *p.value = v;
  }
  opt_.buffers().clear();
  for (const auto& kv : blobs) {
    if (kv.first.rfind("opt.", 0) == 0) opt_.buffers()[kv.first.substr(4)] = kv.second;
  }
  int idx = 0;
  for (NormUnit* u : model_->norm_units()) {
    const std::string base = "norm." + std::to_string(idx++) + ".";
    const std::vector<double>& mean = want(base + "bn_mean");
    const std::vector<double>& var = want(base + "bn_var");
    if (mean.size() != u->bn_stats.mean.size() || var.size() != u->bn_stats.var.size()) {
      throw UsageError("snapshot statistics for '" + u->name +
                       "' do not match the model's channel count");
    }
    u->bn_stats.mean = mean;
    u->bn_stats.var = var;
    u->bn_stats.batches_seen = static_cast<long>(want(base + "bn_seen").at(0));
    const std::vector<double>& rm = want(base + "ratio_mode");
    if (rm.size() != 3) throw ParseError("snapshot ratio mode blob is malformed");
    if (u->is_sn()) {
      u->state.hard = rm[0] != 0.0;
      u->state.hard_mu = static_cast<int>(rm[1]);
      u->state.hard_sigma = static_cast<int>(rm[2]);
    }
  }
}

}  // namespace normlab
