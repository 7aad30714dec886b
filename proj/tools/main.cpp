// hyperx: synthetic data, preprocessing, training, evaluation and gradient checks.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hyperx/commands.hpp"

namespace cli = hyperx::cli;

namespace {

template <class T>
void put_if(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypercomplex multimodal emotion recognition toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hyperx 1.0.0");

  // synth
  cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a labelled synthetic raw dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--subjects", synth.spec.subjects, "Number of subjects")->capture_default_str();
  synth_cmd->add_option("--trials", synth.spec.trials_per_subject, "Trials per subject")->capture_default_str();
  synth_cmd->add_option("--seed", synth.spec.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise, "Noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--trial-seconds", synth.spec.trial_s, "Stimulus length in seconds")->capture_default_str();
  synth_cmd->add_option("--pre-trial-seconds", synth.spec.pre_trial_s, "Baseline length in seconds")
      ->capture_default_str();
  synth_cmd->add_option("--blink-rate", synth.spec.blink_rate_hz, "Blinks per second")->capture_default_str();
  synth_cmd->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  // preprocess
  cli::PreprocessOptions pre;
  std::optional<std::size_t> pre_threads;
  auto* pre_cmd = app.add_subcommand("preprocess", "Filter, baseline-correct, resample and normalise a raw dataset");
  pre_cmd->add_option("--data", pre.data, "Raw dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--threads", pre_threads, "Worker threads");
  pre_cmd->add_flag("--force", pre.force, "Overwrite a non-empty output directory");

  // train
  cli::TrainOptions tr;
  std::optional<std::string> config_file, variant, seeds, target, split_unit;
  std::optional<int> epochs, patience;
  std::optional<std::size_t> batch_size, train_threads;
  std::optional<double> max_lr, train_frac, stop_at;
  std::optional<std::uint64_t> seed;
  bool no_augment = false, track_train = false;
  auto* train_cmd = app.add_subcommand("train", "Train one or more encoder variants");
  train_cmd->add_option("--data", tr.data, "Dataset directory (raw or preprocessed)")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--config", config_file, "JSON file with \"model\" and \"train\" sections");
  auto* variant_opt = train_cmd->add_option("--variant", variant, "linear | phm | conv | phc");
  auto* sweep_flag = train_cmd->add_flag("--sweep-variants", tr.sweep_variants, "Train all four variants");
  train_cmd->add_option("--seed", seed, "Single run seed");
  train_cmd->add_option("--seeds", seeds, "Comma-separated run seeds, e.g. 1,2,3,4,5");
  train_cmd->add_option("--target", target, "arousal | valence");
  train_cmd->add_option("--epochs", epochs, "Maximum epochs");
  train_cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
  train_cmd->add_option("--max-lr", max_lr, "Peak learning rate of the one-cycle schedule");
  train_cmd->add_option("--batch-size", batch_size, "Mini-batch size");
  train_cmd->add_option("--split-unit", split_unit, "segment | trial");
  train_cmd->add_option("--train-frac", train_frac, "Fraction of each class used for training");
  train_cmd->add_flag("--no-augment", no_augment, "Disable training-time augmentation");
  train_cmd->add_option("--stop-at-train-accuracy", stop_at, "Stop once train accuracy reaches this value");
  train_cmd->add_flag("--track-train", track_train, "Evaluate the train split after every epoch");
  train_cmd->add_option("--threads", train_threads, "Worker threads for evaluation");
  train_cmd->add_flag("--quiet", tr.quiet, "Only print the summary table");
  train_cmd->add_flag("--force", tr.force, "Overwrite a non-empty run directory");
  sweep_flag->excludes(variant_opt);

  // eval
  cli::EvalOptions ev;
  std::optional<std::string> eval_target;
  std::optional<std::string> eval_out, embeddings;
  std::optional<std::size_t> eval_threads;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "test | train | all")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--target", eval_target, "Override the checkpoint's target");
  eval_cmd->add_option("--out", eval_out, "Directory for eval.json, confusion.csv and metrics.csv");
  eval_cmd->add_option("--emit-embeddings", embeddings, "CSV of fused-input embeddings with labels");
  eval_cmd->add_option("--threads", eval_threads, "Worker threads");

  // gradcheck
  cli::GradcheckOptions gc;
  std::optional<std::string> gc_json;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare tape gradients with central differences");
  std::vector<std::string> layer_choices{"all"};
  for (const auto& l : cli::gradcheck_layers()) layer_choices.push_back(l);
  gc_cmd->add_option("--layer", gc.layer, "Layer to check")->check(CLI::IsMember(layer_choices))->capture_default_str();
  gc_cmd->add_option("--n", gc.n, "Hypercomplex dimension for phm/phc");
  gc_cmd->add_flag("--hamilton", gc.hamilton, "Freeze the algebra to the quaternion rules (phm, n=4)");
  gc_cmd->add_flag("--break-backward", gc.break_backward, "Corrupt backward passes to confirm the check can fail");
  gc_cmd->add_option("--seed", gc.seed, "Seed for inputs and sampled coordinates")->capture_default_str();
  gc_cmd->add_option("--json", gc_json, "Write a JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kOk : cli::kUsage;
  }

  return cli::run_guarded(
      [&]() -> int {
        if (*synth_cmd) return cli::cmd_synth(synth, std::cout);
        if (*pre_cmd) {
          pre.threads = pre_threads;
          return cli::cmd_preprocess(pre, std::cout);
        }
        if (*train_cmd) {
          if (seed && seeds) throw cli::UsageError("--seed and --seeds are mutually exclusive");
          if (config_file) tr.config_file = *config_file;
          if (variant) tr.model_overrides["variant"] = *variant;
          put_if(tr.train_overrides, "target", target);
          put_if(tr.train_overrides, "epochs", epochs);
          put_if(tr.train_overrides, "patience", patience);
          put_if(tr.train_overrides, "max_lr", max_lr);
          put_if(tr.train_overrides, "batch_size", batch_size);
          put_if(tr.train_overrides, "split_unit", split_unit);
          put_if(tr.train_overrides, "train_frac", train_frac);
          put_if(tr.train_overrides, "stop_at_train_accuracy", stop_at);
          put_if(tr.train_overrides, "seed", seed);
          if (no_augment) tr.train_overrides["augment"] = false;
          if (track_train) tr.train_overrides["track_train_metrics"] = true;
          if (seeds) tr.seeds = cli::parse_seed_list(*seeds);
          tr.threads = train_threads;
          tr.argv.assign(argv, argv + argc);
          return cli::cmd_train(tr, std::cout);
        }
        if (*eval_cmd) {
          if (eval_target) ev.target = hyperx::parse_target(*eval_target);
          if (eval_out) ev.out = *eval_out;
          if (embeddings) ev.emit_embeddings = *embeddings;
          ev.threads = eval_threads;
          return cli::cmd_eval(ev, std::cout);
        }
        if (gc_json) gc.json_out = *gc_json;
        return cli::cmd_gradcheck(gc, std::cout);
      },
      std::cerr);
}
