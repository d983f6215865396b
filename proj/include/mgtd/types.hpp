#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mgtd {

using TokenId = std::int32_t;

/// Thrown for any contract violation on inputs (bad config, bad shapes, bad data).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { AMono, AMulti, B, C };

enum class Mode { Train, Eval };

inline std::string_view task_name(Task task) {
  switch (task) {
    case Task::AMono: return "A-mono";
    case Task::AMulti: return "A-multi";
    case Task::B: return "B";
    case Task::C: return "C";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  if (name == "A-mono" || name == "A" || name == "a-mono") return Task::AMono;
  if (name == "A-multi" || name == "a-multi") return Task::AMulti;
  if (name == "B" || name == "b") return Task::B;
  if (name == "C" || name == "c") return Task::C;
  throw Error("unknown task: " + std::string(name));
}

inline bool is_binary(Task task) { return task == Task::AMono || task == Task::AMulti; }

/// Number of classes (or tags for the boundary task).
inline int num_labels(Task task) {
  switch (task) {
    case Task::AMono:
    case Task::AMulti: return 2;
    case Task::B: return 6;
    case Task::C: return 2;
  }
  return 0;
}

enum class LossKind { BinaryCrossEntropy, CrossEntropy, CrfNll };

inline LossKind parse_loss(std::string_view s) {
  if (s == "binary_cross_entropy" || s == "bce") return LossKind::BinaryCrossEntropy;
  if (s == "cross_entropy" || s == "ce") return LossKind::CrossEntropy;
  if (s == "crf_nll") return LossKind::CrfNll;
  throw Error("unknown loss: " + std::string(s));
}

inline std::string_view loss_name(LossKind k) {
  switch (k) {
    case LossKind::BinaryCrossEntropy: return "binary_cross_entropy";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::CrfNll: return "crf_nll";
  }
  return "?";
}

/// Loss and headline metrics of a model over a dataset, dropout disabled.
struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
  std::optional<double> mae;
  std::size_t count = 0;
};

}  // namespace mgtd
