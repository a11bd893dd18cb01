#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "yoto/checkpoint.hpp"
#include "yoto/corpus.hpp"
#include "yoto/trainer.hpp"
#include "yoto/vulvector.hpp"

namespace yoto {

// binary_positive: precision/recall of class 1 (two-class data only).
// macro_vul: unweighted mean over vulnerability classes (ids >= 1) of the
// per-class values that are defined.
enum class MetricScheme { binary_positive, macro_vul };
std::string to_string(MetricScheme scheme);
MetricScheme default_scheme(std::size_t n_classes);

struct ClassMetrics {
  std::optional<double> recall;     // absent when the class has no support
  std::optional<double> precision;  // absent when never predicted
  std::size_t support = 0;
};

// Undefined ratios are absent, never silently zero.
struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> recall;
  std::optional<double> precision;
  std::vector<ClassMetrics> per_class;
  std::size_t count = 0;
};

Metrics compute_metrics(std::span<const int> preds, std::span<const int> targets, std::size_t n_classes,
                        MetricScheme scheme);

std::vector<int> predict_dataset(const Checkpoint& checkpoint, const std::string& head_id, const Dataset& dataset);
Metrics cross_eval(const Checkpoint& checkpoint, const std::string& head_id, const Dataset& dataset,
                   std::optional<MetricScheme> scheme = std::nullopt);

struct ReportRow {
  std::string model;
  std::string dataset;
  std::string split;
  Metrics metrics;
  std::optional<double> lambda;
  std::string fingerprint;
};

struct Report {
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> provenance;

  // Mean accuracy of the rows of one model (optionally restricted to datasets).
  double mean_accuracy(const std::string& model) const;
  std::vector<const ReportRow*> rows_for(const std::string& model) const;
};

inline constexpr const char* kReportHeader = "model,dataset,split,accuracy,recall,precision,lambda,fingerprint";
std::string report_to_csv(const Report& report);
void emit_report(const Report& report, const std::string& path);

struct ParsedReportRow {
  std::string model, dataset, split;
  std::optional<double> accuracy, recall, precision, lambda;
  std::string fingerprint;
};
std::vector<ParsedReportRow> parse_report_csv(const std::string& text);

// Evaluation target: a validation/test dataset scored with one head.
struct EvalTarget {
  const Dataset* dataset = nullptr;
  std::string head_id;
  std::string label;
};

std::vector<float> default_lambda_grid();

struct LambdaSelection {
  float lambda = 0.0f;
  std::vector<std::pair<float, double>> scores;  // grid value -> mean val accuracy
  Report report;
};

// Every valset must carry the val split role; anything else is rejected.
LambdaSelection select_lambda(const Checkpoint& base, const std::vector<VulVector>& vectors,
                              const std::vector<HeadSource>& heads, const std::vector<EvalTarget>& valsets,
                              const std::vector<float>& grid);

// ---- experiment protocols --------------------------------------------------

struct Task {
  std::string name;  // also the head id
  Dataset train, val, test;
};

Task make_task(const std::string& name, const Dataset& whole, const SplitRatios& ratios, std::uint64_t seed);

enum class ScenarioKind { single_merge, multi_merge, incremental };
std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& text);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::single_merge;
  const Checkpoint* base = nullptr;
  // single_merge: K binary tasks. multi_merge: multi-class tasks.
  // incremental: tasks[0] is the multi-class starting task, the rest are
  // single-vulnerability tasks folded in order.
  std::vector<Task> tasks;
  // Optional pre-trained models by task name; missing ones are fine-tuned.
  std::map<std::string, Checkpoint> trained;
  TrainHyper hyper;
  std::optional<float> lambda;  // fixed; otherwise selected on validation data
  std::vector<float> grid = default_lambda_grid();
  bool with_joint = false;
  std::uint64_t seed = 42;
  // On failure the partial report (plus a FAILED row) is written here.
  std::string partial_report_path;
};

struct ScenarioOutcome {
  Report report;
  std::map<std::string, Checkpoint> models;
  std::map<std::string, double> summary;
};

ScenarioOutcome run_scenario(const ScenarioSpec& spec);

}  // namespace yoto
