#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "normlab/cli.hpp"
#include "normlab/errors.hpp"

using namespace normlab;

namespace {
int run_cmd(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string binary() { return NORMSWITCH_BIN; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const char* kTinyConfig =
    "# comment line\n"
    "synth_classes=3\n"
    "synth_train=24\n"
    "synth_test=12\n"
    "synth_size=8\n"
    "synth_channels=2\n"
    "synth_noise=0.15\n"
    "n_shards=2\n"
    "per_shard=4\n"
    "epochs=2\n"
    "eval_batch=8\n"
    "lr_reference_batch=8\n"
    "seed=5\n";
}  // namespace

TEST_CASE("empty config text yields the documented defaults") {
  const ExperimentConfig cfg = parse_experiment_config("");
  CHECK(cfg.network == "miniresnet");
  CHECK(cfg.norm == NormChoice::sn);
  CHECK(cfg.omega.empty());
  CHECK(cfg.epochs == 30);
  CHECK(cfg.lr0 == 0.1);
  CHECK(cfg.n_shards == 1);
  CHECK(cfg.per_shard == 32);
  CHECK(cfg.optimizer.kind == OptimizerConfig::Kind::sgd_momentum);
  CHECK(cfg.schedule.kind == LRSchedule::Kind::stepwise);
  CHECK(cfg.schedule.total_epochs == cfg.epochs);
  CHECK(cfg.bn_stats == BnStatsMode::batch_average);
  CHECK(cfg.dataset == "synthetic");
  CHECK(cfg.out_dir == "out");
}

TEST_CASE("config keys are parsed, validated, and echoed canonically") {
  const ExperimentConfig cfg = parse_experiment_config(
      "norm=sn_tied\nomega=bn,in\nepochs=7\nlr0=0.02\nlr_schedule=cosine\n"
      "optimizer=rmsprop\nsigma_aggregation=var\nn_shards=2\nper_shard=8\n"
      "lr_milestones=10,20\nfraction=0.5\ndownsample=2\nseed=11\n");
  CHECK(cfg.norm == NormChoice::sn_tied);
  CHECK(omega_to_names(cfg.omega) == "in,bn");
  CHECK(cfg.epochs == 7);
  CHECK(cfg.schedule.kind == LRSchedule::Kind::cosine);
  CHECK(cfg.schedule.total_epochs == 7);
  CHECK(cfg.schedule.milestones == std::vector<int>{10, 20});
  CHECK(cfg.optimizer.kind == OptimizerConfig::Kind::rmsprop);
  CHECK(cfg.sigma_aggregation == SigmaAggregation::variance);
  CHECK(cfg.fraction == 0.5);
  CHECK(cfg.downsample_factor == 2);

  // The echo is itself a parseable config that reproduces the echo.
  const std::string echo = config_echo(cfg);
  const ExperimentConfig back = parse_experiment_config(echo);
  CHECK(config_echo(back) == echo);
  CHECK(back.seed == 11);
}

TEST_CASE("malformed configs are rejected with a configuration error") {
  CHECK_THROWS_AS(parse_experiment_config("no_such_key=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("epochs=2\nepochs=3\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("epochs=banana\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("just a line without equals\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("=5\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("eps=-1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("fraction=0\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("downsample=0\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("hard_init_mu=ln\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("norm=frobnorm\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("bn_stats=sometimes\n"), ConfigError);
}

TEST_CASE("the seed environment variable overrides the config key") {
  setenv("NORMSWITCH_SEED", "4242", 1);
  const ExperimentConfig cfg = parse_experiment_config("seed=7\n");
  CHECK(cfg.seed == 4242);
  setenv("NORMSWITCH_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(parse_experiment_config("seed=7\n"), ConfigError);
  unsetenv("NORMSWITCH_SEED");
  CHECK(parse_experiment_config("seed=7\n").seed == 7);
}

TEST_CASE("guarded execution maps exceptions onto the exit contract") {
  CHECK(run_guarded([] { return 0; }) == 0);
  CHECK(run_guarded([]() -> int { throw ConfigError("x"); }) == 2);
  CHECK(run_guarded([]() -> int { throw ParseError("x", 3); }) == 3);
  CHECK(run_guarded([]() -> int { throw InputError("x"); }) == 3);
  CHECK(run_guarded([]() -> int { throw UsageError("x"); }) == 4);
  CHECK(run_guarded([]() -> int { throw NumericError("x"); }) == 1);
  CHECK(run_guarded([]() -> int { throw std::runtime_error("x"); }) == 1);
}

TEST_CASE("command line end to end: train, rerun, analyze, compare, gradcheck") {
  namespace fs = std::filesystem;
  const std::string base = "cli_test_area";
  fs::remove_all(base);
  fs::create_directories(base);
  const std::string cfg_path = base + "/tiny.cfg";
  {
    std::ofstream out(cfg_path);
    out << kTinyConfig;
  }

  SUBCASE("training produces the artifact set and reruns byte-identically") {
    CHECK(run_cmd(binary() + " run --config " + cfg_path + " --out " + base +
                  "/run1 > /dev/null") == 0);
    CHECK(fs::exists(base + "/run1/metrics.csv"));
    CHECK(fs::exists(base + "/run1/trajectory.csv"));
    CHECK(fs::exists(base + "/run1/snapshot.bin"));
    CHECK(fs::exists(base + "/run1/config_used.cfg"));

    CHECK(run_cmd(binary() + " run --config " + cfg_path + " --out " + base +
                  "/run2 > /dev/null") == 0);
    CHECK(slurp(base + "/run1/metrics.csv") == slurp(base + "/run2/metrics.csv"));
    CHECK(slurp(base + "/run1/trajectory.csv") == slurp(base + "/run2/trajectory.csv"));
    CHECK(slurp(base + "/run1/snapshot.bin") == slurp(base + "/run2/snapshot.bin"));

    CHECK(run_cmd(binary() + " analyze --trajectory " + base + "/run1/trajectory.csv --out " +
                  base + "/an > /dev/null") == 0);
    CHECK(fs::exists(base + "/an/divergence.csv"));
    CHECK(fs::exists(base + "/an/rf_binned.csv"));
    CHECK(run_cmd(binary() + " analyze --trajectory " + base + "/run1/trajectory.csv --out " +
                  base + "/anf --final-only > /dev/null") == 0);

    CHECK(run_cmd(binary() + " compare --a " + base + "/run1/trajectory.csv --b " + base +
                  "/run2/trajectory.csv --out " + base + "/cmp > /dev/null") == 0);
    const std::string mu_csv = slurp(base + "/cmp/compare_mu.csv");
    // identical runs diverge nowhere: every data row ends in ,0
    size_t rows = 0, zero_rows = 0;
    std::istringstream is(mu_csv);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      ++rows;
      zero_rows += line.size() >= 2 && line.compare(line.size() - 2, 2, ",0") == 0;
    }
    CHECK(rows > 0);
    CHECK(rows == zero_rows);
  }

  SUBCASE("failure modes use the documented exit codes") {
    {
      std::ofstream out(base + "/bad.cfg");
      out << "definitely_not_a_key=1\n";
    }
    CHECK(run_cmd(binary() + " run --config " + base + "/bad.cfg --out " + base +
                  "/x 2> /dev/null") == 2);
    {
      std::ofstream out(base + "/missing_data.cfg");
      out << "dataset=cifar10\ntrain_files=" << base << "/none.bin\ntest_files=" << base
          << "/none.bin\n";
    }
    CHECK(run_cmd(binary() + " run --config " + base + "/missing_data.cfg --out " + base +
                  "/x 2> /dev/null") == 3);
    CHECK(run_cmd(binary() + " run --config " + base + "/nonexistent.cfg 2> /dev/null") == 3);
    CHECK(run_cmd(binary() + " analyze --trajectory " + base + "/no_traj.csv 2> /dev/null") == 3);

    // Incompatible comparison: disjoint layer sets.
    CHECK(run_cmd(binary() + " run --config " + cfg_path + " --out " + base +
                  "/runa > /dev/null") == 0);
    {
      std::ofstream out(base + "/other.csv");
      out << "layer_id,epoch,rf,lambda_mu_in,lambda_mu_ln,lambda_mu_bn,lambda_sigma_in,"
             "lambda_sigma_ln,lambda_sigma_bn\n"
          << "99,0,7,0.4,0.3,0.3,0.2,0.5,0.3\n";
    }
    CHECK(run_cmd(binary() + " compare --a " + base + "/runa/trajectory.csv --b " + base +
                  "/other.csv 2> /dev/null") == 4);

    // Unknown flags and subcommands come back as usage errors from the parser.
    CHECK(run_cmd(binary() + " frobnicate 2> /dev/null") != 0);
    CHECK(run_cmd(binary() + " run 2> /dev/null") != 0);  // --config is required
  }

  SUBCASE("gradient checking subcommand") {
    CHECK(run_cmd(binary() + " gradcheck --module tensor > " + base + "/gc.txt") == 0);
    const std::string report = slurp(base + "/gc.txt");
    CHECK(report.find("conv.dx") != std::string::npos);
    CHECK(report.find("sn_std.dx") == std::string::npos);  // filtered out

    CHECK(run_cmd(binary() + " gradcheck --module bogus 2> /dev/null") == 2);
    CHECK(run_cmd(binary() + " gradcheck --module tensor --corrupt relu.dx > " + base +
                  "/gc_bad.txt") == 1);
    const std::string bad = slurp(base + "/gc_bad.txt");
    CHECK(bad.find("relu.dx") != std::string::npos);
    CHECK(bad.find("FAIL") != std::string::npos);
  }

  fs::remove_all(base);
}
