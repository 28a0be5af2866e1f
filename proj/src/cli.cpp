#include "normlab/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "normlab/analytics.hpp"
#include "normlab/errors.hpp"
#include "normlab/gradsuite.hpp"
#include "normlab/svg.hpp"
#include "normlab/textio.hpp"

namespace normlab {

namespace {
void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write '" + path + "'");
  os << text;
  os.flush();
  if (!os) throw InputError("failed while writing '" + path + "'");
}

std::string join_csv(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::string join_ints(const std::vector<int>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(parts[i]);
  }
  return out;
}

std::string safe_label(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (c == '<') {
      out += "lt";
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += '_';
    }
  }
  return out;
}
}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  {
    std::istringstream is(text);
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                          line + "'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      }
      if (!kv.emplace(key, val).second) throw ConfigError("duplicate config key '" + key + "'");
    }
  }

  const auto take = [&](const char* key, std::string* out) {
    const auto it = kv.find(key);
    if (it == kv.end()) return false;
    *out = it->second;
    kv.erase(it);
    return true;
  };
  const auto take_str = [&](const char* key, std::string def) {
    std::string v;
    return take(key, &v) ? v : def;
  };
  const auto take_double = [&](const char* key, double def) {
    std::string v;
    if (!take(key, &v)) return def;
    try {
      return parse_double(v, 0);
    } catch (const ParseError&) {
      throw ConfigError(std::string(key) + ": not a number: '" + v + "'");
    }
  };
  const auto take_int = [&](const char* key, int def) {
    std::string v;
    if (!take(key, &v)) return def;
    try {
      return static_cast<int>(parse_long(v, 0));
    } catch (const ParseError&) {
      throw ConfigError(std::string(key) + ": not an integer: '" + v + "'");
    }
  };
  const auto take_u64 = [&](const char* key, uint64_t def) {
    std::string v;
    if (!take(key, &v)) return def;
    try {
      return static_cast<uint64_t>(std::stoull(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string(key) + ": not a seed value: '" + v + "'");
    }
  };
  const auto take_list = [&](const char* key) {
    std::string v;
    std::vector<std::string> out;
    if (!take(key, &v)) return out;
    for (const std::string& part : split(v, ',')) {
      const std::string p = trim(part);
      if (!p.empty()) out.push_back(p);
    }
    return out;
  };

  ExperimentConfig cfg;
  cfg.network = take_str("network", cfg.network);
  cfg.norm = norm_choice_from_name(take_str("norm", "sn"));
  {
    std::string v;
    if (take("omega", &v)) cfg.omega = omega_from_names(v);
  }
  cfg.hard_init_mu = take_str("hard_init_mu", "");
  cfg.hard_init_sigma = take_str("hard_init_sigma", "");
  if (cfg.hard_init_mu.empty() != cfg.hard_init_sigma.empty()) {
    throw ConfigError("hard_init_mu and hard_init_sigma must be set together");
  }
  cfg.gn_groups = take_int("gn_groups", cfg.gn_groups);
  cfg.sigma_aggregation = sigma_aggregation_from_name(take_str("sigma_aggregation", "std"));
  cfg.eps = take_double("eps", cfg.eps);
  cfg.n_shards = take_int("n_shards", cfg.n_shards);
  cfg.per_shard = take_int("per_shard", cfg.per_shard);

  cfg.optimizer.kind = optimizer_kind_from_name(take_str("optimizer", "sgd_momentum"));
  cfg.optimizer.momentum = take_double("momentum", cfg.optimizer.momentum);
  cfg.optimizer.rms_decay = take_double("rmsprop_decay", cfg.optimizer.rms_decay);
  cfg.optimizer.rms_eps = take_double("rmsprop_eps", cfg.optimizer.rms_eps);
  cfg.optimizer.weight_decay = take_double("weight_decay", cfg.optimizer.weight_decay);

  cfg.lr0 = take_double("lr0", cfg.lr0);
  cfg.schedule.kind = lr_schedule_kind_from_name(take_str("lr_schedule", "stepwise"));
  {
    std::string v;
    if (take("lr_milestones", &v)) {
      cfg.schedule.milestones.clear();
      for (const std::string& part : split(v, ',')) {
        const std::string p = trim(part);
        if (p.empty()) continue;
        try {
          cfg.schedule.milestones.push_back(static_cast<int>(parse_long(p, 0)));
        } catch (const ParseError&) {
          throw ConfigError("lr_milestones: not an integer: '" + p + "'");
        }
      }
    }
  }
  cfg.lr_reference_batch = take_int("lr_reference_batch", cfg.lr_reference_batch);
  cfg.epochs = take_int("epochs", cfg.epochs);
  cfg.seed = take_u64("seed", cfg.seed);

  cfg.dataset = take_str("dataset", cfg.dataset);
  cfg.train_files = take_list("train_files");
  cfg.test_files = take_list("test_files");
  cfg.synth_classes = take_int("synth_classes", cfg.synth_classes);
  cfg.synth_train = take_int("synth_train", cfg.synth_train);
  cfg.synth_test = take_int("synth_test", cfg.synth_test);
  cfg.synth_size = take_int("synth_size", cfg.synth_size);
  cfg.synth_channels = take_int("synth_channels", cfg.synth_channels);
  cfg.synth_noise = take_double("synth_noise", cfg.synth_noise);
  cfg.data_seed = take_u64("data_seed", cfg.data_seed);
  cfg.fraction = take_double("fraction", cfg.fraction);
  cfg.downsample_factor = take_int("downsample", cfg.downsample_factor);

  cfg.bn_stats = bn_stats_mode_from_name(take_str("bn_stats", "batch_average"));
  cfg.bn_decay = take_double("bn_decay", cfg.bn_decay);
  cfg.bn_batches = take_int("bn_batches", cfg.bn_batches);

  cfg.eval_batch = take_int("eval_batch", cfg.eval_batch);
  cfg.snapshot_every = take_int("snapshot_every", cfg.snapshot_every);
  cfg.out_dir = take_str("out_dir", cfg.out_dir);

  if (!kv.empty()) throw ConfigError("unknown config key '" + kv.begin()->first + "'");

  if (cfg.eps < 0.0) throw ConfigError("eps must be non-negative");
  if (cfg.fraction <= 0.0 || cfg.fraction > 1.0) throw ConfigError("fraction must lie in (0, 1]");
  if (cfg.downsample_factor < 1) throw ConfigError("downsample must be >= 1");
  if (cfg.gn_groups < 1) throw ConfigError("gn_groups must be positive");
  if (cfg.eval_batch < 1) throw ConfigError("eval_batch must be positive");
  if (cfg.bn_batches < 1) throw ConfigError("bn_batches must be positive");
  if (cfg.snapshot_every < 0) throw ConfigError("snapshot_every must be non-negative");
  cfg.schedule.total_epochs = cfg.epochs;

  if (const char* env = std::getenv("NORMSWITCH_SEED")) {
    try {
      cfg.seed = static_cast<uint64_t>(std::stoull(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("NORMSWITCH_SEED: not a seed value: '") + env + "'");
    }
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  std::string text;
  for (const std::string& l : lines) {
    text += l;
    text += '\n';
  }
  return parse_experiment_config(text);
}

std::string config_echo(const ExperimentConfig& cfg) {
  std::string out;
  out += "network=" + cfg.network + "\n";
  out += "norm=" + norm_choice_name(cfg.norm) + "\n";
  out += "omega=" + omega_to_names(cfg.omega.empty() ? full_omega() : cfg.omega) + "\n";
  out += "hard_init_mu=" + cfg.hard_init_mu + "\n";
  out += "hard_init_sigma=" + cfg.hard_init_sigma + "\n";
  out += "gn_groups=" + std::to_string(cfg.gn_groups) + "\n";
  out += "sigma_aggregation=" + sigma_aggregation_name(cfg.sigma_aggregation) + "\n";
  out += "eps=" + fmt_g12(cfg.eps) + "\n";
  out += "n_shards=" + std::to_string(cfg.n_shards) + "\n";
  out += "per_shard=" + std::to_string(cfg.per_shard) + "\n";
  out += "optimizer=" + optimizer_kind_name(cfg.optimizer.kind) + "\n";
  out += "momentum=" + fmt_g12(cfg.optimizer.momentum) + "\n";
  out += "rmsprop_decay=" + fmt_g12(cfg.optimizer.rms_decay) + "\n";
  out += "rmsprop_eps=" + fmt_g12(cfg.optimizer.rms_eps) + "\n";
  out += "weight_decay=" + fmt_g12(cfg.optimizer.weight_decay) + "\n";
  out += "lr0=" + fmt_g12(cfg.lr0) + "\n";
  out += "lr_schedule=" +
         std::string(cfg.schedule.kind == LRSchedule::Kind::stepwise ? "stepwise" : "cosine") +
         "\n";
  out += "lr_milestones=" + join_ints(cfg.schedule.milestones) + "\n";
  out += "lr_reference_batch=" + std::to_string(cfg.lr_reference_batch) + "\n";
  out += "epochs=" + std::to_string(cfg.epochs) + "\n";
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  out += "dataset=" + cfg.dataset + "\n";
  out += "train_files=" + join_csv(cfg.train_files) + "\n";
  out += "test_files=" + join_csv(cfg.test_files) + "\n";
  out += "synth_classes=" + std::to_string(cfg.synth_classes) + "\n";
  out += "synth_train=" + std::to_string(cfg.synth_train) + "\n";
  out += "synth_test=" + std::to_string(cfg.synth_test) + "\n";
  out += "synth_size=" + std::to_string(cfg.synth_size) + "\n";
  out += "synth_channels=" + std::to_string(cfg.synth_channels) + "\n";
  out += "synth_noise=" + fmt_g12(cfg.synth_noise) + "\n";
  out += "data_seed=" + std::to_string(cfg.data_seed) + "\n";
  out += "fraction=" + fmt_g12(cfg.fraction) + "\n";
  out += "downsample=" + std::to_string(cfg.downsample_factor) + "\n";
  out += "bn_stats=" +
         std::string(cfg.bn_stats == BnStatsMode::batch_average ? "batch_average"
                                                                : "moving_average") +
         "\n";
  out += "bn_decay=" + fmt_g12(cfg.bn_decay) + "\n";
  out += "bn_batches=" + std::to_string(cfg.bn_batches) + "\n";
  out += "eval_batch=" + std::to_string(cfg.eval_batch) + "\n";
  out += "snapshot_every=" + std::to_string(cfg.snapshot_every) + "\n";
  out += "out_dir=" + cfg.out_dir + "\n";
  return out;
}

namespace {
void write_run_outputs(const Trainer& trainer, const ExperimentConfig& cfg) {
  write_text(cfg.out_dir + "/config_used.cfg", config_echo(cfg));
  write_text(cfg.out_dir + "/metrics.csv", metrics_csv(trainer.result().metrics));
  export_trajectory(trainer.result().trajectory, cfg.out_dir + "/trajectory.csv");
  trainer.save_snapshot(cfg.out_dir + "/snapshot.bin");
}

void print_run_summary(const Trainer& trainer) {
  const auto& metrics = trainer.result().metrics;
  if (metrics.empty()) {
    std::printf("trained 0 epochs\n");
    return;
  }
  const EpochMetrics& last = metrics.back();
  std::printf("trained %d epochs; final test loss %s, accuracy %s\n", trainer.epochs_done(),
              fmt_g12(last.test_loss).c_str(), fmt_g12(last.test_accuracy).c_str());
}
}  // namespace

int cmd_run(const RunOptions& opt) {
  ExperimentConfig cfg = load_experiment_config(opt.config_path);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  std::filesystem::create_directories(cfg.out_dir);
  Trainer trainer(cfg);
  if (!opt.resume.empty()) trainer.load_snapshot(opt.resume);
  trainer.run();
  write_run_outputs(trainer, cfg);
  print_run_summary(trainer);
  return 0;
}

namespace {
// One chart per rf range: the range's mean divergence across epochs.
void write_binned_charts(const DivergenceReport& rep, const std::vector<int>& epoch_filter,
                         const std::string& out_dir, const std::string& title_prefix) {
  for (const RfRange& range : default_rf_ranges()) {
    std::vector<double> xs, ys;
    for (size_t j = 0; j < rep.epochs.size(); ++j) {
      if (!epoch_filter.empty() &&
          std::find(epoch_filter.begin(), epoch_filter.end(), rep.epochs[j]) ==
              epoch_filter.end()) {
        continue;
      }
      std::vector<double> column(rep.layer_ids.size());
      for (size_t i = 0; i < rep.layer_ids.size(); ++i) column[i] = rep.values[i][j];
      for (const RfBinned& bin : bin_by_rf(rep.rfs, column, {range})) {
        xs.push_back(static_cast<double>(rep.epochs[j]));
        ys.push_back(bin.mean);
      }
    }
    if (xs.empty()) continue;
    SvgSeries series{range.label, xs, ys};
    write_svg_lines(out_dir + "/divergence_" + safe_label(range.label) + ".svg",
                    title_prefix + " rf " + range.label, "epoch", "mean divergence", {series});
  }
}

std::string divergence_csv(const DivergenceReport& rep) {
  std::string csv = "layer_id,rf,epoch,divergence\n";
  for (size_t i = 0; i < rep.layer_ids.size(); ++i) {
    for (size_t j = 0; j < rep.epochs.size(); ++j) {
      csv += std::to_string(rep.layer_ids[i]) + "," + std::to_string(rep.rfs[i]) + "," +
             std::to_string(rep.epochs[j]) + "," + fmt_g12(rep.values[i][j]) + "\n";
    }
  }
  return csv;
}

std::string binned_csv(const DivergenceReport& rep, const std::vector<int>& epoch_filter) {
  std::string csv = "range,epoch,mean_divergence,layer_count\n";
  for (size_t j = 0; j < rep.epochs.size(); ++j) {
    if (!epoch_filter.empty() &&
        std::find(epoch_filter.begin(), epoch_filter.end(), rep.epochs[j]) ==
            epoch_filter.end()) {
      continue;
    }
    std::vector<double> column(rep.layer_ids.size());
    for (size_t i = 0; i < rep.layer_ids.size(); ++i) column[i] = rep.values[i][j];
    for (const RfBinned& bin : bin_by_rf(rep.rfs, column, default_rf_ranges())) {
      csv += bin.label + "," + std::to_string(rep.epochs[j]) + "," + fmt_g12(bin.mean) + "," +
             std::to_string(bin.count) + "\n";
    }
  }
  return csv;
}
}  // namespace

int cmd_analyze(const AnalyzeOptions& opt) {
  const RatioTrajectory traj = import_trajectory(opt.trajectory_path);
  if (traj.records.empty()) {
    throw InputError("trajectory '" + opt.trajectory_path + "' has no rows");
  }
  std::filesystem::create_directories(opt.out_dir);
  const DivergenceReport rep = self_divergence(traj);
  std::vector<int> epoch_filter;
  if (opt.final_only && !rep.epochs.empty()) epoch_filter.push_back(rep.epochs.back());
  write_text(opt.out_dir + "/divergence.csv", divergence_csv(rep));
  write_text(opt.out_dir + "/rf_binned.csv", binned_csv(rep, epoch_filter));
  write_binned_charts(rep, epoch_filter, opt.out_dir, "mean vs variance ratio divergence,");
  std::printf("analyzed %zu layers over %zu epochs\n", rep.layer_ids.size(), rep.epochs.size());
  return 0;
}

namespace {
void write_compare_side(const RatioTrajectory& a, const RatioTrajectory& b, RatioSide side,
                        const std::string& out_dir) {
  const char* tag = side == RatioSide::mu ? "mu" : "sigma";
  const DivergenceReport rep = trajectory_divergence(a, b, side);
  write_text(out_dir + "/compare_" + tag + ".csv", divergence_csv(rep));

  std::vector<SvgSeries> series;
  for (const RfRange& range : default_rf_ranges()) {
    SvgSeries s;
    s.label = range.label;
    for (size_t j = 0; j < rep.epochs.size(); ++j) {
      std::vector<double> column(rep.layer_ids.size());
      for (size_t i = 0; i < rep.layer_ids.size(); ++i) column[i] = rep.values[i][j];
      for (const RfBinned& bin : bin_by_rf(rep.rfs, column, {range})) {
        s.x.push_back(static_cast<double>(rep.epochs[j]));
        s.y.push_back(bin.mean);
      }
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  if (!series.empty()) {
    write_svg_lines(out_dir + "/compare_" + tag + ".svg",
                    std::string("cross-run divergence, ") + tag + " ratios", "epoch",
                    "mean divergence", series);
  }
}
}  // namespace

int cmd_compare(const CompareOptions& opt) {
  if (opt.which != "mu" && opt.which != "sigma" && opt.which != "both") {
    throw ConfigError("--which must be mu, sigma or both");
  }
  const RatioTrajectory a = import_trajectory(opt.path_a);
  const RatioTrajectory b = import_trajectory(opt.path_b);
  if (a.records.empty() || b.records.empty()) throw InputError("a trajectory has no rows");
  if (a.layer_ids() != b.layer_ids()) {
    throw UsageError("trajectories cover different layer sets; runs are not comparable");
  }
  std::filesystem::create_directories(opt.out_dir);
  if (opt.which != "sigma") write_compare_side(a, b, RatioSide::mu, opt.out_dir);
  if (opt.which != "mu") write_compare_side(a, b, RatioSide::sigma, opt.out_dir);
  std::printf("compared %zu layers\n", a.layer_ids().size());
  return 0;
}

int cmd_harden_finetune(const HardenFinetuneOptions& opt) {
  ExperimentConfig cfg = load_experiment_config(opt.config_path);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  std::filesystem::create_directories(cfg.out_dir);
  Trainer trainer(cfg);
  trainer.load_snapshot(opt.snapshot_path);
  if (trainer.epochs_done() >= cfg.epochs) {
    throw ConfigError("snapshot already covers " + std::to_string(trainer.epochs_done()) +
                      " epochs; raise epochs beyond that to fine-tune");
  }
  trainer.harden_all();
  trainer.run();
  write_run_outputs(trainer, cfg);
  print_run_summary(trainer);
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& opt) {
  const std::vector<GradSuiteEntry> entries = run_gradcheck_suite(opt.module, opt.corrupt);
  std::fputs(gradcheck_report(entries).c_str(), stdout);
  if (!gradcheck_all_pass(entries)) {
    std::printf("gradcheck FAILED\n");
    return 1;
  }
  std::printf("gradcheck passed (%zu ops)\n", entries.size());
  return 0;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "incompatible inputs: %s\n", e.what());
    return 4;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace normlab
