// anchorfuse CLI: fuse document embeddings from multiple frozen encoders by
// aligning them into an anchor space, train a lightweight readout, and emit
// the diagnostic reports.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anchorfuse/pipeline.hpp"

namespace {

using namespace anchorfuse;

struct GlobalFlags {
  std::string run_dir;
  std::uint64_t seed = 42;
  bool quiet = false;
};

void report(const GlobalFlags& flags, const StageOutcome& outcome) {
  if (flags.quiet) return;
  std::cout << outcome.message << "\n";
}

std::array<double, 3> parse_fractions(const std::string& text) {
  std::array<double, 3> fractions{};
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &fractions[0], &fractions[1],
                  &fractions[2]) != 3)
    throw CLI::ValidationError("--split", "expected three comma-separated fractions");
  return fractions;
}

std::vector<std::pair<std::string, std::filesystem::path>> parse_embedding_args(
    const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::filesystem::path>> out;
  for (const auto& arg : args) {
    auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
      throw CLI::ValidationError("--embeddings", "expected NAME=PATH, got '" + arg + "'");
    out.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
  }
  return out;
}

void add_train_knobs(CLI::App* cmd, TrainConfig& config) {
  cmd->add_option("--lr", config.learning_rate, "Learning rate");
  cmd->add_option("--batch-size", config.batch_size, "Mini-batch size");
  cmd->add_option("--max-epochs", config.max_epochs, "Epoch cap");
  cmd->add_option("--patience", config.patience, "Early-stopping patience");
  cmd->add_option("--hidden", config.hidden_dims, "Hidden layer widths");
  cmd->add_option("--dropout", config.dropout_rate, "Dropout rate on hidden activations");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchorfuse: multi-encoder embedding fusion via anchor-space alignment"};
  app.require_subcommand(1);

  GlobalFlags flags;
  app.add_option("--run", flags.run_dir, "Run directory")->envname("ANCHORFUSE_RUN");
  app.add_option("--seed", flags.seed, "Seed for every random draw");
  app.add_flag("--quiet", flags.quiet, "Suppress stage messages");
  app.fallthrough();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Ingest a manifest and embedding stores");
  std::string ingest_manifest, ingest_out, ingest_split = "0.7,0.1,0.2";
  std::vector<std::string> ingest_embeddings;
  double ingest_delta = 0.5;
  ingest->add_option("--manifest", ingest_manifest, "JSONL document manifest")->required();
  ingest->add_option("--embeddings", ingest_embeddings, "NAME=PATH embedding store")
      ->required()
      ->take_all();
  ingest->add_option("--delta", ingest_delta, "SUE labeling threshold");
  ingest->add_option("--split", ingest_split, "train,val,test fractions");
  ingest->add_option("--out", ingest_out, "Run directory to create")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-encoder dataset");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "JSON synthetic spec")->required();
  synth->add_option("--out", synth_out, "Run directory to create")->required();

  // fit-align
  auto* fit_align = app.add_subcommand("fit-align", "Fit per-source alignment maps");
  FitAlignOptions align_options;
  fit_align->add_option("--anchor", align_options.anchor, "Anchor encoder name")->required();
  fit_align->add_option("--alpha", align_options.alpha, "Ridge regularization strength");

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Fit the fusion stage");
  std::string fuse_strategy = "aligned_mean";
  fuse_cmd->add_option("--strategy", fuse_strategy,
                       "aligned_mean | aligned_concat | raw_concat");

  // train
  auto* train = app.add_subcommand("train", "Train a readout");
  TrainStageOptions train_options;
  std::string train_head = "binary";
  bool train_no_threshold = false;
  train->add_option("--target", train_options.target, "'fused' or an encoder name");
  train->add_option("--head", train_head, "binary | multiclass");
  train->add_flag("--no-threshold-select", train_no_threshold,
                  "Keep the 0.5 operating threshold");
  add_train_knobs(train, train_options.train);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Predict and score a split");
  EvaluateOptions eval_options;
  std::string eval_split = "test";
  evaluate->add_option("--target", eval_options.target, "'fused' or an encoder name");
  evaluate->add_option("--split", eval_split, "train | val | test");

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Error overlap, transitions, confidence shifts");
  std::string diagnose_against;
  diagnose->add_option("--against", diagnose_against, "Model tag to compare the fused readout to")
      ->required();

  // occlude
  auto* occlude = app.add_subcommand("occlude", "Sentence occlusion attribution");
  std::string occlude_doc, occlude_variants;
  int occlude_up_class = 1;
  occlude->add_option("--doc", occlude_doc, "Document id")->required();
  occlude->add_option("--variants", occlude_variants,
                      "Directory of per-encoder occluded stores")
      ->required();
  occlude->add_option("--up-class", occlude_up_class, "Class index of the up logit");

  // run
  auto* run_cmd = app.add_subcommand("run", "Run every stage in order");
  PipelineConfig run_config;
  std::string run_strategy = "aligned_mean", run_head = "binary";
  bool run_no_threshold = false;
  run_cmd->add_option("--anchor", run_config.anchor,
                      "Anchor encoder (defaults to the first store)");
  run_cmd->add_option("--alpha", run_config.alpha, "Ridge regularization strength");
  run_cmd->add_option("--strategy", run_strategy, "aligned_mean | aligned_concat | raw_concat");
  run_cmd->add_option("--head", run_head, "binary | multiclass");
  run_cmd->add_flag("--no-threshold-select", run_no_threshold,
                    "Keep the 0.5 operating threshold");
  add_train_knobs(run_cmd, run_config.train);

  // compare
  auto* compare = app.add_subcommand("compare", "Tabulate metrics across completed runs");
  std::vector<std::string> compare_dirs;
  std::string compare_out;
  compare->add_option("runs", compare_dirs, "Run directories")->required()->expected(-1);
  compare->add_option("--out", compare_out, "Write the comparison CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto require_run_dir = [&]() -> std::filesystem::path {
    if (flags.run_dir.empty()) {
      std::cerr << "error: --run RUNDIR is required for this subcommand\n";
      std::exit(2);
    }
    return flags.run_dir;
  };

  std::string stage_name = app.get_subcommands().front()->get_name();
  try {
    if (*ingest) {
      IngestOptions options;
      options.manifest_path = ingest_manifest;
      options.embeddings = parse_embedding_args(ingest_embeddings);
      options.delta = ingest_delta;
      options.fractions = parse_fractions(ingest_split);
      report(flags, stage_ingest(ingest_out, options));
    } else if (*synth) {
      report(flags, stage_synth(synth_out, load_synthetic_spec(synth_spec)));
    } else if (*fit_align) {
      report(flags, stage_fit_align(require_run_dir(), align_options));
    } else if (*fuse_cmd) {
      auto strategy = parse_fusion_strategy(fuse_strategy);
      if (!strategy) {
        std::cerr << "fuse: unknown strategy '" << fuse_strategy << "'\n";
        return 2;
      }
      report(flags, stage_fuse(require_run_dir(), *strategy));
    } else if (*train) {
      auto head = parse_head_kind(train_head);
      if (!head) {
        std::cerr << "train: unknown head '" << train_head << "'\n";
        return 2;
      }
      train_options.head = *head;
      train_options.train.seed = flags.seed;
      train_options.select_threshold = !train_no_threshold;
      report(flags, stage_train(require_run_dir(), train_options));
    } else if (*evaluate) {
      auto split = parse_split_name(eval_split);
      if (!split) {
        std::cerr << "evaluate: unknown split '" << eval_split << "'\n";
        return 2;
      }
      eval_options.split = *split;
      report(flags, stage_evaluate(require_run_dir(), eval_options));
    } else if (*diagnose) {
      report(flags, stage_diagnose(require_run_dir(), diagnose_against));
    } else if (*occlude) {
      report(flags,
             stage_occlude(require_run_dir(), occlude_doc, occlude_variants, occlude_up_class));
    } else if (*run_cmd) {
      auto strategy = parse_fusion_strategy(run_strategy);
      auto head = parse_head_kind(run_head);
      if (!strategy || !head) {
        std::cerr << "run: unknown strategy or head\n";
        return 2;
      }
      run_config.strategy = *strategy;
      run_config.head = *head;
      run_config.seed = flags.seed;
      run_config.select_thresholds = !run_no_threshold;
      for (const auto& outcome : run_pipeline(require_run_dir(), run_config))
        report(flags, outcome);
    } else if (*compare) {
      std::vector<std::filesystem::path> dirs(compare_dirs.begin(), compare_dirs.end());
      std::string csv = compare_runs(dirs);
      if (!compare_out.empty()) {
        std::ofstream out(compare_out);
        if (!out) throw FormatError("cannot write " + compare_out);
        out << csv;
      }
      if (!flags.quiet) std::cout << csv;
    }
  } catch (const std::exception& e) {
    std::cerr << "anchorfuse " << stage_name << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
