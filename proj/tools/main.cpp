#include <CLI11.hpp>

#include "normlab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"normswitch: switchable-normalization training and ratio analysis"};
  app.require_subcommand(1);

  normlab::RunOptions run_opt;
  CLI::App* run = app.add_subcommand("run", "train a model from a config file");
  run->add_option("--config", run_opt.config_path, "key=value config file")->required();
  run->add_option("--out", run_opt.out_dir, "output directory (overrides out_dir)");
  run->add_option("--resume", run_opt.resume, "snapshot to continue from");

  normlab::AnalyzeOptions an_opt;
  CLI::App* an = app.add_subcommand("analyze", "ratio divergence report for one run");
  an->add_option("--trajectory", an_opt.trajectory_path, "trajectory.csv from a run")->required();
  an->add_option("--out", an_opt.out_dir, "output directory");
  an->add_flag("--final-only", an_opt.final_only, "bin only the final epoch");

  normlab::CompareOptions cp_opt;
  CLI::App* cp = app.add_subcommand("compare", "ratio divergence between two runs");
  cp->add_option("--a", cp_opt.path_a, "first trajectory.csv")->required();
  cp->add_option("--b", cp_opt.path_b, "second trajectory.csv")->required();
  cp->add_option("--out", cp_opt.out_dir, "output directory");
  cp->add_option("--which", cp_opt.which, "mu, sigma or both");

  normlab::HardenFinetuneOptions hf_opt;
  CLI::App* hf = app.add_subcommand("harden-finetune",
                                    "pin ratios to their dominant members, then fine-tune");
  hf->add_option("--snapshot", hf_opt.snapshot_path, "snapshot to harden")->required();
  hf->add_option("--config", hf_opt.config_path, "config file (epochs sets the new horizon)")
      ->required();
  hf->add_option("--out", hf_opt.out_dir, "output directory (overrides out_dir)");

  normlab::GradcheckOptions gc_opt;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--module", gc_opt.module, "all, tensor, normalizers or switchable");
  gc->add_option("--corrupt", gc_opt.corrupt, "perturb this op's gradient (must then fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  return normlab::run_guarded([&]() -> int {
    if (run->parsed()) return normlab::cmd_run(run_opt);
    if (an->parsed()) return normlab::cmd_analyze(an_opt);
    if (cp->parsed()) return normlab::cmd_compare(cp_opt);
    if (hf->parsed()) return normlab::cmd_harden_finetune(hf_opt);
    if (gc->parsed()) return normlab::cmd_gradcheck(gc_opt);
    return 2;
  });
}
