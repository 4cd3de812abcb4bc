// Command-line entry point: train / eval / ablate / plan-trace.
//
//   aesmpfp train      --config toy.cfg --out runs/exp [--seed N] [--scenario S]
//                      [--steps N]
//   aesmpfp eval       --config toy.cfg --checkpoint C --out report.jsonl
//                      [--scenario S] [--episodes N] [--seed N]
//   aesmpfp ablate     --config toy.cfg --out runs/ablation
//   aesmpfp plan-trace --config toy.cfg --checkpoint C --out trace.jsonl
//                      [--scenario S] [--episodes N] [--seed N]
//
// train without --seed runs every seed in the config, each into
// <out>/seed<k>/. AESMPFP_THREADS caps the planner's rollout pool.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "aesmpfp/trainer.hpp"

using namespace aesmpfp;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::string scenario;
  std::string checkpoint;
  int64_t seed = -1;
  int64_t steps = -1;
  size_t episodes = 0;
};

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  if (!a.scenario.empty()) cfg.eval_scenario = cfg.scenario = a.scenario;
  if (a.steps >= 0) cfg.total_steps = static_cast<size_t>(a.steps);
  return cfg;
}

uint64_t resolve_seed(const CommonArgs& a, const RunConfig& cfg) {
  return a.seed >= 0 ? static_cast<uint64_t>(a.seed) : cfg.seeds.front();
}

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_ckpt) {
  cmd->add_option("--config", a.config_path, "run configuration file")->required();
  cmd->add_option("--out", a.out, "output path")->required();
  cmd->add_option("--scenario", a.scenario, "override the scenario path");
  cmd->add_option("--seed", a.seed, "run a single seed");
  if (needs_ckpt)
    cmd->add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive experience selection + model-predictive forward planning"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, trace_args;

  CLI::App* cmd_train = app.add_subcommand("train", "train on a scenario");
  add_common(cmd_train, train_args, false);
  cmd_train->add_option("--steps", train_args.steps, "override total training steps");

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(cmd_eval, eval_args, true);
  eval_args.episodes = 0;
  cmd_eval->add_option("--episodes", eval_args.episodes, "episodes to evaluate");

  CLI::App* cmd_ablate = app.add_subcommand("ablate", "run the ablation preset grid");
  cmd_ablate->add_option("--config", ablate_args.config_path, "run configuration file")
      ->required();
  cmd_ablate->add_option("--out", ablate_args.out, "output directory")->required();

  CLI::App* cmd_trace =
      app.add_subcommand("plan-trace", "log per-iteration planner internals");
  add_common(cmd_trace, trace_args, true);
  trace_args.episodes = 1;
  cmd_trace->add_option("--episodes", trace_args.episodes, "episodes to trace");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      const RunConfig cfg = resolve_config(train_args);
      if (train_args.seed >= 0) {
        train_run(cfg, static_cast<uint64_t>(train_args.seed), train_args.out);
      } else {
        for (uint64_t seed : cfg.seeds)
          train_run(cfg, seed, train_args.out + "/seed" + std::to_string(seed));
      }
    } else if (cmd_eval->parsed()) {
      const RunConfig cfg = resolve_config(eval_args);
      const uint64_t seed = resolve_seed(eval_args, cfg);
      const size_t episodes =
          eval_args.episodes > 0 ? eval_args.episodes : cfg.eval_episodes;
      const EvalReport rep = eval_checkpoint(cfg, eval_args.checkpoint,
                                             eval_scenario_of(cfg), episodes, seed);
      write_eval_report(eval_args.out, rep);
      std::printf("episodes %zu  aikf %.3f+-%.3f  abc %.3f+-%.3f  tcr %.1f%%  psr %.1f%%\n",
                  rep.agg.episodes, rep.agg.aikf_mean, rep.agg.aikf_sd,
                  rep.agg.abc_mean, rep.agg.abc_sd, rep.agg.tcr_pct, rep.agg.psr_pct);
    } else if (cmd_ablate->parsed()) {
      const RunConfig cfg = load_config(ablate_args.config_path);
      ablation_suite(cfg, ablate_args.out);
      std::printf("ablation table: %s/ablation.csv\n", ablate_args.out.c_str());
    } else if (cmd_trace->parsed()) {
      const RunConfig cfg = resolve_config(trace_args);
      const uint64_t seed = resolve_seed(trace_args, cfg);
      plan_trace(cfg, trace_args.checkpoint, eval_scenario_of(cfg), seed,
                 trace_args.episodes, trace_args.out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
