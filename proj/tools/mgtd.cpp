// mgtd: prepare data, train, predict and evaluate machine-generated text detectors.

#include <iostream>

#include <CLI11.hpp>

#include "mgtd/commands.hpp"
#include "mgtd/config.hpp"
#include "mgtd/toy_corpus.hpp"

namespace {

using mgtd::cli::CommandArgs;

void add_common(CLI::App* cmd, CommandArgs& a) {
  cmd->add_option("--task", a.task, "A-mono, A-multi, B or C");
  cmd->add_option("--preset", a.preset, "named preset (see `mgtd presets`)");
  cmd->add_option("--config", a.config, "flat JSON config file");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--data-dir", a.data_dir, "directory holding train.jsonl (and validation.jsonl)");
  cmd->add_option("--out-dir", a.out_dir, "directory for all outputs");
  cmd->add_option("--checkpoint", a.checkpoint, "model checkpoint");
  cmd->add_option("--set", a.set, "config override key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"machine-generated text detection toolkit"};
  app.require_subcommand(1);
  CommandArgs a;

  auto* prepare = app.add_subcommand("prepare", "merge, deduplicate and split a corpus");
  add_common(prepare, a);
  prepare->add_option("--extra", a.extra, "extra multiclass corpus merged after relabelling");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, a);

  auto* predict = app.add_subcommand("predict", "write predictions.jsonl for an input file");
  add_common(predict, a);
  predict->add_option("--input", a.input, "JSONL records to predict")->required();

  auto* evaluate = app.add_subcommand("eval", "write an evaluation report with charts");
  add_common(evaluate, a);
  evaluate->add_option("--input", a.input, "gold JSONL records")->required();
  evaluate->add_option("--predictions", a.predictions, "predictions.jsonl instead of a checkpoint");

  auto* presets = app.add_subcommand("presets", "list presets, or show one resolved");
  std::optional<std::string> show;
  presets->add_option("name", show, "preset to resolve");

  auto* toy = app.add_subcommand("toy", "write a synthetic corpus as train.jsonl");
  std::size_t toy_n = 200;
  add_common(toy, a);
  toy->add_option("--count", toy_n, "number of records");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*prepare) return mgtd::cli::cmd_prepare(a);
    if (*train) return mgtd::cli::cmd_train(a);
    if (*predict) return mgtd::cli::cmd_predict(a);
    if (*evaluate) return mgtd::cli::cmd_eval(a);
    if (*presets) {
      if (show) {
        std::cout << mgtd::config::resolve(std::nullopt, *show).to_flat().dump(2) << '\n';
      } else {
        for (const auto& name : mgtd::config::preset_names()) std::cout << name << '\n';
      }
      return 0;
    }
    if (*toy) {
      if (!a.task || !a.out_dir) throw mgtd::Error("toy needs --task and --out-dir");
      const auto task = mgtd::parse_task(*a.task);
      const auto seed = a.seed.value_or(42);
      const auto records = task == mgtd::Task::C ? mgtd::toy::boundary(toy_n, seed)
                                                 : mgtd::toy::classification(task, toy_n, seed);
      std::filesystem::create_directories(*a.out_dir);
      mgtd::corpus::write_corpus(*a.out_dir / "train.jsonl", records);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
