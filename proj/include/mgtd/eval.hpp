#pragma once

// Metrics and error-analysis reports: overall accuracy or boundary MAE,
// breakdowns by generator and by length bucket, prediction counts, a
// confusion matrix, and PNG bar charts of the breakdowns.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/types.hpp"

namespace mgtd::eval {

inline const std::vector<int> kDefaultEdges{0, 250, 500, 1000, 1500, 2500, 5000};

namespace detail {
inline void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}
}  // namespace detail

inline double accuracy(std::span<const int> preds, std::span<const int> golds) {
  detail::check_aligned(preds.size(), golds.size(), "accuracy");
  if (preds.empty()) throw Error("accuracy: no examples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

inline std::map<std::string, double> group_accuracy(std::span<const int> preds, std::span<const int> golds,
                                                    std::span<const std::string> groups) {
  detail::check_aligned(preds.size(), golds.size(), "group_accuracy");
  detail::check_aligned(preds.size(), groups.size(), "group_accuracy");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& [hit, total] = tally[groups[i]];
    hit += preds[i] == golds[i] ? 1 : 0;
    ++total;
  }
  std::map<std::string, double> out;
  for (const auto& [g, t] : tally) out[g] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return out;
}

inline std::map<std::string, std::size_t> group_counts(std::span<const std::string> groups) {
  std::map<std::string, std::size_t> out;
  for (const auto& g : groups) ++out[g];
  return out;
}

inline std::string bucket_key(int count, std::span<const int> edges) {
  if (count < edges.front()) return "<" + std::to_string(edges.front());
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (count < edges[i + 1]) return "[" + std::to_string(edges[i]) + "," + std::to_string(edges[i + 1]) + ")";
  return ">=" + std::to_string(edges.back());
}

/// Half-open [e_i, e_{i+1}) bucket keys with underflow "<e_0" and overflow ">=e_last".
inline std::vector<std::string> length_buckets(std::span<const int> counts, std::span<const int> edges = kDefaultEdges) {
  if (edges.empty()) throw Error("length_buckets: no edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1]) throw Error("length_buckets: edges must be strictly increasing");
  std::vector<std::string> out;
  out.reserve(counts.size());
  for (int c : counts) out.push_back(bucket_key(c, edges));
  return out;
}

inline double mae_boundary(std::span<const int> preds, std::span<const int> golds) {
  detail::check_aligned(preds.size(), golds.size(), "mae_boundary");
  if (preds.empty()) throw Error("mae_boundary: no examples");
  double sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(static_cast<double>(preds[i]) - golds[i]);
  return sum / static_cast<double>(preds.size());
}

inline std::map<std::string, double> group_mae(std::span<const int> preds, std::span<const int> golds,
                                               std::span<const std::string> groups) {
  detail::check_aligned(preds.size(), golds.size(), "group_mae");
  detail::check_aligned(preds.size(), groups.size(), "group_mae");
  std::map<std::string, std::pair<double, std::size_t>> tally;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& [sum, n] = tally[groups[i]];
    sum += std::abs(static_cast<double>(preds[i]) - golds[i]);
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [g, t] : tally) out[g] = t.first / static_cast<double>(t.second);
  return out;
}

/// confusion[gold][pred].
inline std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> preds, std::span<const int> golds,
                                                              int num_classes) {
  detail::check_aligned(preds.size(), golds.size(), "confusion_matrix");
  std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(num_classes),
                                          std::vector<std::size_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= num_classes || golds[i] < 0 || golds[i] >= num_classes)
      throw Error("confusion_matrix: label out of range");
    ++m[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

struct EvalReport {
  std::string task;
  std::string metric = "accuracy";  // "accuracy" or "mae"
  std::size_t count = 0;
  double overall = 0.0;
  std::map<std::string, double> by_generator;
  std::map<std::string, std::size_t> generator_counts;
  std::map<std::string, double> by_length;
  std::map<std::string, std::size_t> length_counts;
  std::map<std::string, std::size_t> prediction_counts;
  std::vector<std::vector<std::size_t>> confusion;

  bool operator==(const EvalReport&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json j{{"task", task},
                     {"metric", metric},
                     {"count", count},
                     {"overall", overall},
                     {"by_generator", by_generator},
                     {"generator_counts", generator_counts},
                     {"by_length", by_length},
                     {"length_counts", length_counts},
                     {"prediction_counts", prediction_counts},
                     {"confusion", confusion}};
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.task = j.at("task").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.count = j.at("count").get<std::size_t>();
    r.overall = j.at("overall").get<double>();
    r.by_generator = j.at("by_generator").get<std::map<std::string, double>>();
    r.generator_counts = j.at("generator_counts").get<std::map<std::string, std::size_t>>();
    r.by_length = j.at("by_length").get<std::map<std::string, double>>();
    r.length_counts = j.at("length_counts").get<std::map<std::string, std::size_t>>();
    r.prediction_counts = j.at("prediction_counts").get<std::map<std::string, std::size_t>>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    return r;
  }
};

/// Report for the binary and multiclass tasks.  `lengths` are whitespace token counts.
inline EvalReport classification_report(Task task, std::span<const int> preds, std::span<const int> golds,
                                        std::span<const std::string> generators, std::span<const int> lengths,
                                        std::span<const int> edges = kDefaultEdges) {
  detail::check_aligned(preds.size(), lengths.size(), "classification_report");
  EvalReport r;
  r.task = std::string(task_name(task));
  r.count = preds.size();
  r.overall = accuracy(preds, golds);
  r.by_generator = group_accuracy(preds, golds, generators);
  r.generator_counts = group_counts(generators);
  const auto buckets = length_buckets(lengths, edges);
  r.by_length = group_accuracy(preds, golds, buckets);
  r.length_counts = group_counts(buckets);
  for (int p : preds) ++r.prediction_counts[std::to_string(p)];
  r.confusion = confusion_matrix(preds, golds, num_labels(task));
  return r;
}

/// Report for the boundary task; group values are MAE.
inline EvalReport boundary_report(std::span<const int> preds, std::span<const int> golds,
                                  std::span<const std::string> generators, std::span<const int> lengths,
                                  std::span<const int> edges = kDefaultEdges) {
  detail::check_aligned(preds.size(), lengths.size(), "boundary_report");
  EvalReport r;
  r.task = std::string(task_name(Task::C));
  r.metric = "mae";
  r.count = preds.size();
  r.overall = mae_boundary(preds, golds);
  r.by_generator = group_mae(preds, golds, generators);
  r.generator_counts = group_counts(generators);
  const auto buckets = length_buckets(lengths, edges);
  r.by_length = group_mae(preds, golds, buckets);
  r.length_counts = group_counts(buckets);
  for (int p : preds) ++r.prediction_counts[std::to_string(p)];
  return r;
}

// ---------------------------------------------------------------------------
// Charts.

/// 8-bit RGB bar chart; bar heights are value / max(values, 1 for accuracy).
/// Group names and values are stored as PNG text chunks.
inline void write_bar_chart(const std::filesystem::path& path, const std::map<std::string, double>& values,
                            const std::string& title, double scale_max) {
  constexpr int kBar = 24, kGap = 8, kHeight = 160, kMargin = 10;
  const int n = static_cast<int>(values.size());
  const int width = 2 * kMargin + n * kBar + std::max(0, n - 1) * kGap;
  const int height = kHeight + 2 * kMargin;
  std::vector<png_byte> pixels(static_cast<std::size_t>(width * height * 3), 255);
  auto put = [&](int x, int y, png_byte r, png_byte g, png_byte b) {
    auto* p = &pixels[static_cast<std::size_t>((y * width + x) * 3)];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  };
  for (int x = kMargin; x < width - kMargin; ++x) put(x, kMargin + kHeight, 0, 0, 0);
  int i = 0;
  for (const auto& [name, v] : values) {
    const double frac = scale_max > 0 ? std::clamp(v / scale_max, 0.0, 1.0) : 0.0;
    const int h = static_cast<int>(std::lround(frac * kHeight));
    const int x0 = kMargin + i * (kBar + kGap);
    for (int y = kMargin + kHeight - h; y < kMargin + kHeight; ++y)
      for (int x = x0; x < x0 + kBar; ++x) put(x, y, 60, 110, 180);
    ++i;
  }

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<std::string> keys{"Title"}, texts{title};
  for (const auto& [name, v] : values) {
    keys.push_back("bar");
    texts.push_back(name + "=" + std::to_string(v));
  }
  std::vector<png_text> chunks(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    chunks[k].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[k].key = keys[k].data();
    chunks[k].text = texts[k].data();
  }
  png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, &pixels[static_cast<std::size_t>(y * width * 3)]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw Error("failed writing " + path.string());
}

struct RenderedFiles {
  std::filesystem::path report;
  std::vector<std::filesystem::path> charts;
};

/// Writes report.json and one chart per non-empty breakdown.
inline RenderedFiles render_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw Error("cannot create directory " + out_dir.string());
  RenderedFiles files;
  files.report = out_dir / "report.json";
  {
    std::ofstream out(files.report);
    if (!out) throw Error("cannot write " + files.report.string());
    out << report.to_json().dump(2) << '\n';
    if (!out) throw Error("failed writing " + files.report.string());
  }
  auto scale = [&](const std::map<std::string, double>& m) {
    if (report.metric == "accuracy") return 1.0;
    double mx = 0;
    for (const auto& [k, v] : m) mx = std::max(mx, v);
    return mx;
  };
  if (!report.by_generator.empty()) {
    files.charts.push_back(out_dir / "by_generator.png");
    write_bar_chart(files.charts.back(), report.by_generator, report.metric + " by generator", scale(report.by_generator));
  }
  if (!report.by_length.empty()) {
    files.charts.push_back(out_dir / "by_length.png");
    write_bar_chart(files.charts.back(), report.by_length, report.metric + " by length", scale(report.by_length));
  }
  return files;
}

}  // namespace mgtd::eval
