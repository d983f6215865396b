#pragma once

// Run configuration: a flat key/value map fully determining a run, the
// shipped presets, and resolution (explicit flag > config file > preset).

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/clshead.hpp"
#include "mgtd/encoder.hpp"
#include "mgtd/hybrid.hpp"
#include "mgtd/textprep.hpp"
#include "mgtd/train.hpp"
#include "mgtd/types.hpp"

namespace mgtd::config {

struct RunConfig {
  Task task = Task::AMono;
  std::string preset;
  std::uint64_t seed = 42;
  double split_ratio = 0.8;
  int min_freq = 1;
  train::TrainSchedule schedule;

  // Classifier tasks.
  textprep::PreprocessLevel preprocess = textprep::PreprocessLevel::None;
  textprep::TruncationStrategy longtext = textprep::TruncationStrategy::head_only();
  int budget = textprep::kDefaultBudget;
  clshead::LayerSelection selection = clshead::LayerSelection::last_layer();
  clshead::FCBlockConfig head;
  std::string encoder_reference = "roberta-base";
  std::string encoder_backend = "tiny";
  TinyEncoderConfig encoder;

  // Boundary task.
  hybrid::HybridConfig hybrid;

  clshead::ClassifierConfig classifier_config() const {
    clshead::ClassifierConfig c;
    c.task = task;
    c.selection = selection;
    c.head = head;
    c.longtext = longtext;
    c.budget = budget;
    c.preprocess = preprocess;
    return c;
  }

  nlohmann::json to_flat() const {
    nlohmann::json j{
        {"task", task_name(task)},
        {"preset", preset},
        {"seed", seed},
        {"data.split_ratio", split_ratio},
        {"vocab.min_freq", min_freq},
        {"train.total_epochs", schedule.total_epochs},
        {"train.freeze_epochs", schedule.freeze_epochs},
        {"train.lr_frozen", schedule.lr_frozen},
        {"train.lr_finetune", schedule.lr_finetune},
        {"train.warmup_steps", schedule.warmup_steps},
        {"train.batch_size", schedule.batch_size},
        {"train.loss", loss_name(schedule.loss)},
        {"train.weight_decay", schedule.weight_decay},
        {"train.clip_norm", schedule.clip_norm},
        {"train.epoch_lr", schedule.epoch_lr},
    };
    if (task == Task::C) {
      const auto h = hybrid.to_json();
      for (const auto& [k, v] : h.items()) j["hybrid." + k] = v;
    } else {
      j["preprocess.level"] = textprep::level_name(preprocess);
      j["longtext.strategy"] = textprep::truncation_name(longtext.kind);
      j["longtext.pool"] = textprep::pool_name(longtext.pool);
      j["longtext.budget"] = budget;
      j["longtext.head_len"] = longtext.head_len;
      j["longtext.tail_len"] = longtext.tail_len;
      j["longtext.chunk_len"] = longtext.chunk_len;
      j["features.selection"] = clshead::selection_name(selection);
      j["features.k"] = selection.layer_count();
      j["head.hidden_sizes"] = head.hidden_sizes;
      j["head.dropout"] = head.dropout;
      j["head.feature_dropout"] = head.feature_dropout;
      j["head.norm"] = nn::norm_name(head.norm);
      j["encoder.reference"] = encoder_reference;
      j["encoder.backend"] = encoder_backend;
      j["encoder.hidden_size"] = encoder.hidden_size;
      j["encoder.layers"] = encoder.layers;
      j["encoder.embedding_range"] = encoder.embedding_range;
    }
    return j;
  }

  void validate() const {
    schedule.validate();
    if (!(split_ratio > 0 && split_ratio < 1)) throw Error("data.split_ratio must be in (0, 1)");
    if (min_freq < 1) throw Error("vocab.min_freq must be >= 1");
    if (task == Task::C) {
      hybrid.validate();
      if (schedule.loss != (hybrid.method == hybrid::DecodeMethod::Crf ? LossKind::CrfNll : LossKind::CrossEntropy))
        throw Error("train.loss " + std::string(loss_name(schedule.loss)) + " does not match hybrid.method " +
                    std::string(hybrid::method_name(hybrid.method)));
      return;
    }
    const LossKind want = is_binary(task) ? LossKind::BinaryCrossEntropy : LossKind::CrossEntropy;
    if (schedule.loss != want)
      throw Error("train.loss " + std::string(loss_name(schedule.loss)) + " does not match task " +
                  std::string(task_name(task)));
    if (encoder_backend != "tiny") throw Error("unsupported encoder.backend: " + encoder_backend);
    if (encoder.hidden_size <= 0 || encoder.layers <= 0) throw Error("encoder dimensions must be positive");
    selection.layers(encoder.layers);
    longtext.validate();
    if (longtext.kind == textprep::TruncationKind::HeadOnly || longtext.kind == textprep::TruncationKind::TailOnly)
      textprep::effective_budget(longtext, budget);
    head.validate();
  }
};

/// Applies one flat key; unknown keys are an error.
inline void apply_key(RunConfig& c, const std::string& key, const nlohmann::json& v) {
  auto str = [&] { return v.get<std::string>(); };
  try {
    if (key == "task") c.task = parse_task(str());
    else if (key == "preset") c.preset = str();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "data.split_ratio") c.split_ratio = v.get<double>();
    else if (key == "vocab.min_freq") c.min_freq = v.get<int>();
    else if (key == "train.total_epochs") c.schedule.total_epochs = v.get<int>();
    else if (key == "train.freeze_epochs") c.schedule.freeze_epochs = v.get<int>();
    else if (key == "train.lr_frozen") c.schedule.lr_frozen = v.get<double>();
    else if (key == "train.lr_finetune") c.schedule.lr_finetune = v.get<double>();
    else if (key == "train.warmup_steps") c.schedule.warmup_steps = v.get<int>();
    else if (key == "train.batch_size") c.schedule.batch_size = v.get<int>();
    else if (key == "train.loss") c.schedule.loss = parse_loss(str());
    else if (key == "train.weight_decay") c.schedule.weight_decay = v.get<double>();
    else if (key == "train.clip_norm") c.schedule.clip_norm = v.get<double>();
    else if (key == "train.epoch_lr") c.schedule.epoch_lr = v.get<std::vector<double>>();
    else if (key == "preprocess.level") c.preprocess = textprep::parse_level(str());
    else if (key == "longtext.strategy") c.longtext.kind = textprep::parse_truncation(str());
    else if (key == "longtext.pool") c.longtext.pool = textprep::parse_pool(str());
    else if (key == "longtext.budget") c.budget = v.get<int>();
    else if (key == "longtext.head_len") c.longtext.head_len = v.get<int>();
    else if (key == "longtext.tail_len") c.longtext.tail_len = v.get<int>();
    else if (key == "longtext.chunk_len") c.longtext.chunk_len = v.get<int>();
    else if (key == "features.selection") {
      const auto s = str();
      if (s == "last") c.selection = clshead::LayerSelection::last_layer();
      else if (s == "concat_last_k") c.selection = clshead::LayerSelection::concat_last(std::max(1, c.selection.layer_count()));
      else throw Error("unknown features.selection: " + s);
    } else if (key == "features.k") {
      const int k = v.get<int>();
      if (c.selection.kind == clshead::LayerSelection::Kind::ConcatLastK) c.selection = clshead::LayerSelection::concat_last(k);
      else if (k != 1) throw Error("features.k must be 1 with features.selection=last");
    } else if (key == "head.hidden_sizes") c.head.hidden_sizes = v.get<std::vector<int>>();
    else if (key == "head.dropout") c.head.dropout = v.get<double>();
    else if (key == "head.feature_dropout") c.head.feature_dropout = v.get<double>();
    else if (key == "head.norm") c.head.norm = nn::parse_norm(str());
    else if (key == "encoder.reference") c.encoder_reference = str();
    else if (key == "encoder.backend") c.encoder_backend = str();
    else if (key == "encoder.hidden_size") c.encoder.hidden_size = v.get<int>();
    else if (key == "encoder.layers") c.encoder.layers = v.get<int>();
    else if (key == "encoder.embedding_range") c.encoder.embedding_range = v.get<double>();
    else if (key.starts_with("hybrid.")) {
      nlohmann::json j = c.hybrid.to_json();
      const auto sub = key.substr(7);
      if (!j.contains(sub)) throw Error("unknown config key: " + key);
      j[sub] = v;
      c.hybrid = hybrid::HybridConfig::from_json(j);
    } else {
      throw Error("unknown config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad value for " + key + ": " + e.what());
  }
}

/// Order matters for selection: features.selection before features.k.
inline void apply_flat(RunConfig& c, const nlohmann::json& flat) {
  if (!flat.is_object()) throw Error("config must be a flat JSON object");
  if (flat.contains("task")) apply_key(c, "task", flat.at("task"));
  if (flat.contains("features.selection")) apply_key(c, "features.selection", flat.at("features.selection"));
  for (const auto& [k, v] : flat.items())
    if (k != "task" && k != "features.selection") apply_key(c, k, v);
}

/// Task defaults before any preset.
inline RunConfig defaults(Task task) {
  RunConfig c;
  c.task = task;
  c.schedule.loss = task == Task::C ? LossKind::CrfNll
                    : is_binary(task) ? LossKind::BinaryCrossEntropy
                                      : LossKind::CrossEntropy;
  if (task == Task::C) {
    c.schedule.total_epochs = 3;
    c.schedule.freeze_epochs = 0;
    c.schedule.warmup_steps = 0;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Presets, one per experiment row.  Values are plain data.

inline const char* kPresetsJson = R"json({
  "A-mono-roberta":          {"task": "A-mono", "encoder.reference": "roberta-base", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-flan-t5":          {"task": "A-mono", "encoder.reference": "flan-t5-base", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-deberta-v3-large": {"task": "A-mono", "encoder.reference": "deberta-v3-large", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-albert":           {"task": "A-mono", "encoder.reference": "albert-base-v2", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-bert-cased":       {"task": "A-mono", "encoder.reference": "bert-base-cased", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-distilbert":       {"task": "A-mono", "encoder.reference": "distilbert-base-uncased", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-gpt2":             {"task": "A-mono", "encoder.reference": "gpt2", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-xlm-roberta":      {"task": "A-mono", "encoder.reference": "xlm-roberta-base", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-xlnet":            {"task": "A-mono", "encoder.reference": "xlnet-base-cased", "train.total_epochs": 5, "train.freeze_epochs": 5, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-roberta-ft4":      {"task": "A-mono", "encoder.reference": "roberta-base", "train.total_epochs": 5, "train.freeze_epochs": 4, "train.lr_frozen": 2e-4, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},
  "A-mono-roberta-ft3":      {"task": "A-mono", "encoder.reference": "roberta-base", "train.total_epochs": 5, "train.freeze_epochs": 3, "train.lr_frozen": 2e-4, "train.lr_finetune": 1e-4, "train.warmup_steps": 50, "train.batch_size": 24, "head.hidden_sizes": [256, 64]},

  "A-multi-mdeberta-v3":     {"task": "A-multi", "encoder.reference": "mdeberta-v3-base", "train.total_epochs": 5, "train.freeze_epochs": 4, "train.lr_frozen": 1e-3, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [128], "longtext.budget": 510},
  "A-multi-xlm-roberta":     {"task": "A-multi", "encoder.reference": "xlm-roberta-base", "train.total_epochs": 5, "train.freeze_epochs": 4, "train.lr_frozen": 1e-3, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [128]},
  "A-multi-bert-multi":      {"task": "A-multi", "encoder.reference": "bert-base-multilingual-cased", "train.total_epochs": 5, "train.freeze_epochs": 4, "train.lr_frozen": 1e-3, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [128]},
  "A-multi-distilbert-multi":{"task": "A-multi", "encoder.reference": "distilbert-base-multilingual-cased", "train.total_epochs": 5, "train.freeze_epochs": 4, "train.lr_frozen": 1e-3, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [128]},

  "B-roberta-hefit":         {"task": "B", "encoder.reference": "roberta-base", "train.total_epochs": 8, "train.freeze_epochs": 6, "train.lr_frozen": 3e-4, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [512, 128]},
  "B-roberta-frozen":        {"task": "B", "encoder.reference": "roberta-base", "train.total_epochs": 6, "train.freeze_epochs": 6, "train.lr_frozen": 3e-4, "train.lr_finetune": 3e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [512, 128]},
  "B-bert-cased-hefit":      {"task": "B", "encoder.reference": "bert-base-cased", "train.total_epochs": 8, "train.freeze_epochs": 6, "train.lr_frozen": 3e-4, "train.lr_finetune": 2e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [512, 128]},
  "B-bert-cased-frozen":     {"task": "B", "encoder.reference": "bert-base-cased", "train.total_epochs": 6, "train.freeze_epochs": 6, "train.lr_frozen": 3e-4, "train.lr_finetune": 3e-4, "train.warmup_steps": 50, "train.batch_size": 32, "head.hidden_sizes": [512, 128]},

  "C-bilstm-crf":            {"task": "C", "hybrid.method": "crf", "train.loss": "crf_nll", "train.total_epochs": 3, "train.freeze_epochs": 0, "train.lr_frozen": 5e-3, "train.lr_finetune": 5e-3, "train.epoch_lr": [5e-3, 5e-3, 3e-3], "train.warmup_steps": 0, "train.batch_size": 12},
  "C-bilstm":                {"task": "C", "hybrid.method": "direct", "train.loss": "cross_entropy", "train.total_epochs": 3, "train.freeze_epochs": 0, "train.lr_frozen": 5e-3, "train.lr_finetune": 5e-3, "train.epoch_lr": [5e-3, 5e-3, 3e-3], "train.warmup_steps": 0, "train.batch_size": 12}
})json";

inline const std::map<std::string, std::string>& preset_aliases() {
  static const std::map<std::string, std::string> aliases{
      {"subtaskA-mono-roberta", "A-mono-roberta"},
      {"subtaskA-multi-mdeberta", "A-multi-mdeberta-v3"},
      {"subtaskB-roberta", "B-roberta-hefit"},
      {"subtaskC", "C-bilstm-crf"}};
  return aliases;
}

inline const nlohmann::json& presets() {
  static const nlohmann::json j = nlohmann::json::parse(kPresetsJson);
  return j;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : presets().items()) out.push_back(k);
  for (const auto& [k, v] : preset_aliases()) out.push_back(k);
  return out;
}

inline nlohmann::json preset(const std::string& name) {
  std::string key = name;
  if (auto it = preset_aliases().find(name); it != preset_aliases().end()) key = it->second;
  if (!presets().contains(key)) throw Error("unknown preset: " + name);
  nlohmann::json j = presets().at(key);
  j["preset"] = name;
  return j;
}

inline nlohmann::json load_flat_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

/// Resolves a run: task defaults, then preset, then config file, then explicit overrides.
inline RunConfig resolve(std::optional<Task> task, const std::optional<std::string>& preset_name,
                         const nlohmann::json& file = nlohmann::json::object(),
                         const nlohmann::json& overrides = nlohmann::json::object()) {
  nlohmann::json p = preset_name ? preset(*preset_name) : nlohmann::json::object();
  auto task_of = [](const nlohmann::json& j) -> std::optional<Task> {
    if (j.contains("task")) return parse_task(j.at("task").get<std::string>());
    return std::nullopt;
  };
  const auto preset_task = task_of(p);
  const auto file_task = task_of(file);
  const auto override_task = task_of(overrides);
  std::optional<Task> t = override_task ? override_task : task ? task : file_task ? file_task : preset_task;
  if (!t) throw Error("no task given");
  if (preset_task && *preset_task != *t)
    throw Error("preset " + *preset_name + " is for task " + std::string(task_name(*preset_task)) + ", not " +
                std::string(task_name(*t)));
  if (file_task && *file_task != *t)
    throw Error("config file is for task " + std::string(task_name(*file_task)) + ", not " + std::string(task_name(*t)));
  RunConfig c = defaults(*t);
  apply_flat(c, p);
  apply_flat(c, file);
  apply_flat(c, overrides);
  c.task = *t;
  c.validate();
  return c;
}

}  // namespace mgtd::config
