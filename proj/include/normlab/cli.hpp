#pragma once

#include <functional>
#include <string>

#include "normlab/trainer.hpp"

namespace normlab {

// Flat key=value text with '#' comments; unknown or malformed keys are
// rejected.  The NORMSWITCH_SEED environment variable, when set, overrides
// the seed key.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical echo of every resolved setting, itself parseable.
std::string config_echo(const ExperimentConfig& cfg);

struct RunOptions {
  std::string config_path;
  std::string out_dir;  // empty keeps the config's out_dir
  std::string resume;   // optional snapshot to continue from
};

struct AnalyzeOptions {
  std::string trajectory_path;
  std::string out_dir = "analysis";
  bool final_only = false;
};

struct CompareOptions {
  std::string path_a;
  std::string path_b;
  std::string out_dir = "comparison";
  std::string which = "both";  // mu | sigma | both
};

struct HardenFinetuneOptions {
  std::string snapshot_path;
  std::string config_path;
  std::string out_dir;
};

struct GradcheckOptions {
  std::string module = "all";
  std::string corrupt;
};

int cmd_run(const RunOptions& opt);
int cmd_analyze(const AnalyzeOptions& opt);
int cmd_compare(const CompareOptions& opt);
int cmd_harden_finetune(const HardenFinetuneOptions& opt);
int cmd_gradcheck(const GradcheckOptions& opt);

// Maps the library's exceptions onto the process exit contract:
// 0 ok, 1 check/numeric failure, 2 configuration error, 3 input data error,
// 4 incompatible inputs.
int run_guarded(const std::function<int()>& body);

}  // namespace normlab
