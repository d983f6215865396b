#pragma once

// Pipeline commands behind the mgtd CLI: prepare, train, predict, eval.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/clshead.hpp"
#include "mgtd/config.hpp"
#include "mgtd/corpus.hpp"
#include "mgtd/encoder.hpp"
#include "mgtd/eval.hpp"
#include "mgtd/hybrid.hpp"
#include "mgtd/textprep.hpp"
#include "mgtd/train.hpp"
#include "mgtd/types.hpp"

namespace mgtd::cli {

namespace fs = std::filesystem;

struct CommandArgs {
  std::optional<std::string> task;
  std::optional<std::string> preset;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> data_dir;
  std::optional<fs::path> out_dir;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> input;
  std::optional<fs::path> extra;
  std::optional<fs::path> predictions;
  /// key=value overrides of config keys.
  std::vector<std::string> set;
};

using Model = std::variant<clshead::SequenceClassifier, hybrid::HybridTagger>;

namespace detail {

inline fs::path require_dir(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw Error(std::string("missing ") + flag);
  if (!fs::is_directory(*p)) throw Error(std::string(flag) + " is not a directory: " + p->string());
  return *p;
}

inline fs::path require_file(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw Error(std::string("missing ") + flag);
  if (!fs::is_regular_file(*p)) throw Error(std::string(flag) + " does not exist: " + p->string());
  return *p;
}

inline fs::path require_out(const std::optional<fs::path>& p) {
  if (!p) throw Error("missing --out-dir");
  return *p;
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

inline void write_json_file(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Records for prediction; `label` is optional and defaults to 0.
inline corpus::RecordList load_unlabeled(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw corpus::CorpusError(0, "cannot open " + path.string());
  corpus::RecordList out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (unicode::is_blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw corpus::CorpusError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") || !obj.at("text").is_string())
      throw corpus::CorpusError(lineno, "record needs id and text");
    corpus::TextRecord r;
    r.id = obj.at("id").is_string() ? obj.at("id").get<std::string>() : obj.at("id").dump();
    r.text = obj.at("text").get<std::string>();
    if (obj.contains("model") && obj.at("model").is_string()) r.generator = obj.at("model").get<std::string>();
    if (unicode::is_blank(r.text)) throw corpus::CorpusError(lineno, "empty text for id " + r.id);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json parse_value(const std::string& raw) {
  try {
    return nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    return raw;
  }
}

inline config::RunConfig resolve_run(const CommandArgs& a) {
  nlohmann::json file = a.config ? config::load_flat_file(*a.config) : nlohmann::json::object();
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got " + kv);
    overrides[kv.substr(0, eq)] = parse_value(kv.substr(eq + 1));
  }
  if (a.seed) overrides["seed"] = *a.seed;
  std::optional<Task> task;
  if (a.task) task = parse_task(*a.task);
  return config::resolve(task, a.preset, file, overrides);
}

inline Task model_task(const Model& m) {
  if (const auto* c = std::get_if<clshead::SequenceClassifier>(&m)) return c->config().task;
  return Task::C;
}

inline void check_task(const Model& m, const std::optional<std::string>& requested, const fs::path& ckpt) {
  if (!requested) return;
  const Task want = parse_task(*requested);
  const Task have = model_task(m);
  if (want != have)
    throw Error("checkpoint " + ckpt.string() + " is for task " + std::string(task_name(have)) + " but --task is " +
                std::string(task_name(want)));
}

}  // namespace detail

inline Model load_model(const fs::path& path) {
  const auto j = detail::read_json(path);
  const auto kind = j.value("model", std::string());
  if (kind == "classifier") return clshead::SequenceClassifier::from_json(j);
  if (kind == "tagger") return hybrid::HybridTagger::from_json(j);
  throw Error("not a model checkpoint: " + path.string());
}

/// Builds an untrained model for a run; the vocabulary comes from the training records.
inline Model build_model(const config::RunConfig& cfg, const corpus::RecordList& train_records) {
  nn::Rng rng(cfg.seed);
  if (cfg.task == Task::C)
    return hybrid::HybridTagger(corpus::build_vocab(train_records, cfg.min_freq), cfg.hybrid, rng);
  corpus::RecordList prepped = train_records;
  for (auto& r : prepped) r.text = textprep::preprocess(r.text, cfg.preprocess);
  auto encoder = std::make_unique<TinyEncoder>(corpus::build_vocab(prepped, cfg.min_freq), cfg.encoder, rng);
  return clshead::SequenceClassifier(std::move(encoder), cfg.classifier_config(), rng);
}

struct Predictions {
  std::vector<std::string> ids;
  std::vector<int> values;  // label or boundary index
  std::vector<std::vector<int>> tags;  // boundary task only
};

inline Predictions predict_records(const Model& model, const corpus::RecordList& records) {
  Predictions p;
  for (const auto& r : records) {
    p.ids.push_back(r.id);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, hybrid::HybridTagger>) {
            p.tags.push_back(m.predict_tags(m.prepare(r)));
            p.values.push_back(hybrid::tags_to_boundary(p.tags.back()));
          } else {
            p.values.push_back(m.predict_label(m.prepare(r)));
          }
        },
        model);
  }
  return p;
}

inline eval::EvalReport report_for(Task task, const corpus::RecordList& gold, const std::vector<int>& preds) {
  std::vector<int> golds, lengths;
  std::vector<std::string> gens;
  for (const auto& r : gold) {
    golds.push_back(r.label);
    lengths.push_back(static_cast<int>(unicode::count_tokens(r.text)));
    gens.push_back(r.generator.empty() ? "unknown" : r.generator);
  }
  if (task == Task::C) return eval::boundary_report(preds, golds, gens, lengths);
  return eval::classification_report(task, preds, golds, gens, lengths);
}

// ---------------------------------------------------------------------------

/// load -> merge_dedup -> split; writes merged.jsonl, train.jsonl,
/// validation.jsonl and split_manifest.json.
inline int cmd_prepare(const CommandArgs& a, std::ostream& log = std::cout) {
  if (!a.task) throw Error("missing --task");
  const Task task = parse_task(*a.task);
  const fs::path data = detail::require_dir(a.data_dir, "--data-dir");
  const fs::path out = detail::require_out(a.out_dir);
  const fs::path train_file = data / "train.jsonl";
  if (!fs::is_regular_file(train_file)) throw Error("missing " + train_file.string());
  if (a.extra) detail::require_file(a.extra, "--extra");
  const double ratio = [&] {
    for (const auto& kv : a.set)
      if (kv.starts_with("data.split_ratio=")) return std::stod(kv.substr(17));
    return 0.8;
  }();
  const std::uint64_t seed = a.seed.value_or(42);

  const auto primary = corpus::load_corpus(train_file, task);
  corpus::RecordList extra;
  if (a.extra) {
    extra = corpus::load_corpus(*a.extra, Task::B);
    if (is_binary(task)) extra = corpus::relabel_to_binary(std::move(extra));
  }
  auto count_file = [&](const char* name) -> std::size_t {
    const fs::path p = data / name;
    return fs::is_regular_file(p) ? corpus::load_corpus(p, task).size() : 0;
  };
  const std::size_t dev = count_file("dev.jsonl");
  const std::size_t test = count_file("test.jsonl");
  const auto merged = corpus::merge_dedup(primary, extra);
  const auto split = corpus::split_dataset(merged, ratio, seed);

  fs::create_directories(out);
  corpus::write_corpus(out / "merged.jsonl", merged);
  corpus::write_corpus(out / "train.jsonl", split.train);
  corpus::write_corpus(out / "validation.jsonl", split.validation);
  nlohmann::json manifest = corpus::split_manifest(split);
  manifest["task"] = task_name(task);
  manifest["inputs"] = {{"train", primary.size()}, {"extra", extra.size()}};
  manifest["merged"] = merged.size();
  manifest["counts"] = {{"train", merged.size()}, {"dev", dev}, {"test", test}};
  manifest["split"] = {{"train", split.train.size()}, {"validation", split.validation.size()}};
  detail::write_json_file(out / "split_manifest.json", manifest);
  log << "train " << merged.size() << " dev " << dev << " test " << test << " (split " << split.train.size() << "/"
      << split.validation.size() << ")\n";
  return 0;
}

struct TrainOutcome {
  train::FitResult fit;
  config::RunConfig config;
};

inline TrainOutcome run_training(const CommandArgs& a, std::ostream& log = std::cout) {
  const auto cfg = detail::resolve_run(a);
  const fs::path data = detail::require_dir(a.data_dir, "--data-dir");
  const fs::path out = detail::require_out(a.out_dir);
  const fs::path train_file = data / "train.jsonl";
  const fs::path val_file = data / "validation.jsonl";
  if (!fs::is_regular_file(train_file)) throw Error("missing " + train_file.string());

  corpus::DatasetSplit split;
  if (fs::is_regular_file(val_file)) {
    split.train = corpus::load_corpus(train_file, cfg.task);
    split.validation = corpus::load_corpus(val_file, cfg.task);
    split.seed = cfg.seed;
    split.ratio = cfg.split_ratio;
  } else {
    split = corpus::split_dataset(corpus::load_corpus(train_file, cfg.task), cfg.split_ratio, cfg.seed);
  }

  Model model = build_model(cfg, split.train);
  fs::create_directories(out);
  detail::write_json_file(out / "config.json", cfg.to_flat());
  train::FitOptions opts;
  opts.run_id = cfg.preset.empty() ? std::string(task_name(cfg.task)) : cfg.preset;
  opts.out_dir = out;
  TrainOutcome outcome{std::visit([&](auto& m) { return train::fit(m, split, cfg.schedule, cfg.seed, opts); }, model),
                       cfg};
  const auto& last = outcome.fit.history.back().validation;
  if (cfg.task == Task::C)
    log << "final validation mae " << std::setprecision(6) << last.mae.value_or(0.0) << '\n';
  else
    log << "final validation accuracy " << std::setprecision(6) << last.accuracy << '\n';
  return outcome;
}

inline int cmd_train(const CommandArgs& a, std::ostream& log = std::cout) {
  run_training(a, log);
  return 0;
}

/// Writes predictions.jsonl: {id, label} per line, or {id, boundary_index, tags} for the boundary task.
inline int cmd_predict(const CommandArgs& a, std::ostream& log = std::cout) {
  const fs::path ckpt = detail::require_file(a.checkpoint, "--checkpoint");
  const fs::path input = detail::require_file(a.input, "--input");
  const fs::path out = detail::require_out(a.out_dir);
  const Model model = load_model(ckpt);
  detail::check_task(model, a.task, ckpt);
  const auto records = detail::load_unlabeled(input);
  const auto preds = predict_records(model, records);
  fs::create_directories(out);
  std::ofstream f(out / "predictions.jsonl");
  if (!f) throw Error("cannot write " + (out / "predictions.jsonl").string());
  const bool boundary = detail::model_task(model) == Task::C;
  for (std::size_t i = 0; i < preds.ids.size(); ++i) {
    nlohmann::json line{{"id", preds.ids[i]}, {boundary ? "boundary_index" : "label", preds.values[i]}};
    if (boundary) line["tags"] = preds.tags[i];
    f << line.dump() << '\n';
  }
  log << "wrote " << preds.ids.size() << " predictions\n";
  return 0;
}

inline eval::EvalReport run_eval(const CommandArgs& a, std::ostream& log = std::cout) {
  const fs::path input = detail::require_file(a.input, "--input");
  const fs::path out = detail::require_out(a.out_dir);
  if (a.checkpoint.has_value() == a.predictions.has_value())
    throw Error("give exactly one of --checkpoint or --predictions");

  Task task;
  std::vector<int> preds;
  corpus::RecordList gold;
  if (a.checkpoint) {
    const fs::path ckpt = detail::require_file(a.checkpoint, "--checkpoint");
    const Model model = load_model(ckpt);
    detail::check_task(model, a.task, ckpt);
    task = detail::model_task(model);
    gold = corpus::load_corpus(input, task);
    preds = predict_records(model, gold).values;
  } else {
    if (!a.task) throw Error("--predictions needs --task");
    task = parse_task(*a.task);
    gold = corpus::load_corpus(input, task);
    const fs::path pfile = detail::require_file(a.predictions, "--predictions");
    std::map<std::string, int> by_id;
    const char* key = task == Task::C ? "boundary_index" : "label";
    std::ifstream in(pfile);
    std::string line;
    while (std::getline(in, line)) {
      if (unicode::is_blank(line)) continue;
      const auto j = nlohmann::json::parse(line);
      const auto& id = j.at("id");
      by_id[id.is_string() ? id.get<std::string>() : id.dump()] = j.at(key).get<int>();
    }
    for (const auto& r : gold) {
      const auto it = by_id.find(r.id);
      if (it == by_id.end()) throw Error("no prediction for id " + r.id);
      preds.push_back(it->second);
    }
  }
  auto report = report_for(task, gold, preds);
  eval::render_report(report, out);
  log << report.metric << ' ' << std::setprecision(6) << report.overall << " over " << report.count << " examples\n";
  return report;
}

inline int cmd_eval(const CommandArgs& a, std::ostream& log = std::cout) {
  run_eval(a, log);
  return 0;
}

}  // namespace mgtd::cli
