#pragma once

// Two-phase training: a frozen phase that updates only the head, then a
// fine-tune phase that also updates the encoder layers features are read
// from, with a linear warmup/decay schedule.

#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/corpus.hpp"
#include "mgtd/nn.hpp"
#include "mgtd/types.hpp"

namespace mgtd::train {

struct TrainSchedule {
  int total_epochs = 5;
  int freeze_epochs = 5;
  double lr_frozen = 2e-4;
  double lr_finetune = 2e-4;
  int warmup_steps = 50;
  int batch_size = 24;
  LossKind loss = LossKind::BinaryCrossEntropy;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  /// Optional per-epoch base learning rate; entry e-1 replaces the phase rate in epoch e.
  std::vector<double> epoch_lr;

  void validate() const {
    if (total_epochs < 1) throw Error("total_epochs must be >= 1");
    if (freeze_epochs < 0 || freeze_epochs > total_epochs)
      throw Error("freeze_epochs must be in [0, total_epochs]");
    if (!(lr_frozen > 0) || !(lr_finetune > 0)) throw Error("learning rates must be positive");
    if (warmup_steps < 0) throw Error("warmup_steps must be >= 0");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (weight_decay < 0) throw Error("weight_decay must be >= 0");
    if (clip_norm < 0) throw Error("clip_norm must be >= 0");
    if (!epoch_lr.empty() && static_cast<int>(epoch_lr.size()) != total_epochs)
      throw Error("epoch_lr needs one entry per epoch");
    for (double lr : epoch_lr)
      if (!(lr > 0)) throw Error("learning rates must be positive");
  }

  nlohmann::json to_json() const {
    return {{"total_epochs", total_epochs}, {"freeze_epochs", freeze_epochs}, {"lr_frozen", lr_frozen},
            {"lr_finetune", lr_finetune},   {"warmup_steps", warmup_steps},   {"batch_size", batch_size},
            {"loss", loss_name(loss)},      {"weight_decay", weight_decay},   {"clip_norm", clip_norm},
            {"epoch_lr", epoch_lr}};
  }
};

enum class Phase { Frozen, FineTune };

inline std::string_view phase_name(Phase p) { return p == Phase::Frozen ? "frozen" : "finetune"; }

struct PhaseState {
  Phase phase = Phase::Frozen;
  std::vector<std::string> trainable;  // parameter-group ids
  double lr = 0.0;
};

/// Phase of a 1-based epoch.  `selected_layers` are the encoder layers
/// unfrozen in the fine-tune phase.
inline PhaseState phase_at(int epoch, const TrainSchedule& s, const std::vector<int>& selected_layers = {}) {
  if (epoch < 1 || epoch > s.total_epochs)
    throw Error("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(s.total_epochs) + "]");
  PhaseState st;
  st.trainable.push_back("head");
  if (epoch <= s.freeze_epochs) {
    st.phase = Phase::Frozen;
    st.lr = s.lr_frozen;
  } else {
    st.phase = Phase::FineTune;
    st.lr = s.lr_finetune;
    for (int l : selected_layers) st.trainable.push_back("encoder.layer." + std::to_string(l));
  }
  if (!s.epoch_lr.empty()) st.lr = s.epoch_lr[static_cast<std::size_t>(epoch - 1)];
  return st;
}

/// Linear warmup to base_lr, then linear decay to 0 at total_steps.
inline double lr_at(long step, double base_lr, long warmup_steps, long total_steps) {
  if (step < 0) throw Error("step must be >= 0");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const long span = std::max(1L, total_steps - warmup_steps);
  return base_lr * std::max(0.0, static_cast<double>(total_steps - step) / static_cast<double>(span));
}

struct EpochMetrics {
  int epoch = 0;
  Phase phase = Phase::Frozen;
  double lr = 0.0;  // rate of the last step in the epoch
  long steps = 0;
  double train_loss = 0.0;  // mean batch loss with dropout on
  std::optional<EvalStats> train_eval;
  EvalStats validation;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch},       {"phase", phase_name(phase)},
                     {"lr", lr},             {"steps", steps},
                     {"train_loss", train_loss}, {"validation_loss", validation.loss},
                     {"validation_accuracy", validation.accuracy}};
    if (validation.mae) j["validation_mae"] = *validation.mae;
    if (train_eval) {
      j["train_eval_loss"] = train_eval->loss;
      j["train_accuracy"] = train_eval->accuracy;
      if (train_eval->mae) j["train_mae"] = *train_eval->mae;
    }
    return j;
  }
};

struct FitOptions {
  std::string run_id = "run";
  /// Output directory for the metrics log and checkpoints; nothing is written when empty.
  std::filesystem::path out_dir;
  bool evaluate_train = true;
  /// Called after every optimizer step, e.g. to snapshot parameters in tests.
  std::function<void(int epoch, long step)> on_step;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  std::filesystem::path metrics_path;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

inline std::string checkpoint_name(const std::string& run_id, int epoch, std::string_view split) {
  return run_id + "." + std::to_string(epoch) + "." + std::string(split);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

template <class Model>
FitResult fit(Model& model, const corpus::DatasetSplit& data, const TrainSchedule& schedule, std::uint64_t seed,
              const FitOptions& options = {}) {
  schedule.validate();
  if (schedule.loss != model.expected_loss())
    throw Error("loss " + std::string(loss_name(schedule.loss)) + " does not match model loss " +
                std::string(loss_name(model.expected_loss())));
  if (data.train.empty()) throw Error("training set is empty");

  using Example = typename Model::Example;
  std::vector<Example> train_set, val_set;
  for (const auto& r : data.train) train_set.push_back(model.prepare(r));
  for (const auto& r : data.validation) val_set.push_back(model.prepare(r));

  FitResult result;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    result.metrics_path = options.out_dir / (options.run_id + ".metrics.jsonl");
    metrics.open(result.metrics_path);
    if (!metrics) throw Error("cannot write " + result.metrics_path.string());
  }

  nn::Rng rng(seed);
  const nn::AdamW opt{.weight_decay = schedule.weight_decay};
  const nn::ParamList all = model.all_params();
  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(schedule.batch_size);
  const long steps_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long finetune_steps = steps_per_epoch * (schedule.total_epochs - schedule.freeze_epochs);
  const auto selected = model.selected_layers();
  long finetune_step = 0;
  long global_step = 0;
  std::optional<double> best_loss;
  nlohmann::json best_json;

  for (int epoch = 1; epoch <= schedule.total_epochs; ++epoch) {
    const PhaseState phase = phase_at(epoch, schedule, selected);
    nn::ParamList trainable;
    int lowest_layer = INT_MAX;
    for (const auto& id : phase.trainable) {
      const auto group = model.param_group(id);
      trainable.insert(trainable.end(), group.begin(), group.end());
      constexpr std::string_view prefix = "encoder.layer.";
      if (std::string_view(id).starts_with(prefix)) lowest_layer = std::min(lowest_layer, std::stoi(id.substr(prefix.size())));
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.phase = phase.phase;
    const auto order = corpus::seeded_permutation(n, rng());
    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      std::vector<const Example*> items;
      for (std::size_t i = start; i < std::min(n, start + batch); ++i) items.push_back(&train_set[order[i]]);
      nn::zero_grads(all);
      loss_sum += model.accumulate_gradients(items, lowest_layer, rng);
      if (schedule.clip_norm > 0) nn::clip_grad_norm(trainable, schedule.clip_norm);
      const double lr = phase.phase == Phase::FineTune
                            ? lr_at(finetune_step++, phase.lr, schedule.warmup_steps, finetune_steps)
                            : phase.lr;
      opt.step(trainable, lr);
      m.lr = lr;
      ++m.steps;
      ++global_step;
      if (options.on_step) options.on_step(epoch, global_step);
    }
    m.train_loss = loss_sum / static_cast<double>(m.steps);
    if (options.evaluate_train) m.train_eval = model.evaluate(train_set);
    m.validation = model.evaluate(val_set);

    const bool has_val = !val_set.empty();
    const double select_loss = has_val ? m.validation.loss : m.train_loss;
    if (!best_loss || select_loss < *best_loss) {
      best_loss = select_loss;
      result.best_epoch = epoch;
      if (!options.out_dir.empty()) best_json = model.to_json();
    }
    if (metrics) metrics << m.to_json().dump() << '\n';
    result.history.push_back(std::move(m));
  }

  if (!options.out_dir.empty()) {
    result.final_checkpoint = options.out_dir / checkpoint_name(options.run_id, schedule.total_epochs, "final");
    result.best_checkpoint = options.out_dir / checkpoint_name(options.run_id, result.best_epoch, "best");
    write_json(result.final_checkpoint, model.to_json());
    write_json(result.best_checkpoint, best_json);
  }
  return result;
}

}  // namespace mgtd::train
