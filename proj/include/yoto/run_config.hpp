#pragma once

// Declarative run file (JSON). Unknown keys anywhere are rejected so a typo
// cannot silently fall back to a default.
//
//   {
//     "scenario": "single" | "multi" | "incremental",
//     "seed": 42,
//     "model": {"vocab_size": 256, "d_model": 64, "n_heads": 4, "n_layers": 2, "d_ff": 128, "max_len": 128},
//     "pretrain": {"epochs": 3, "batch_size": 16, "lr_encoder": 1e-3, ...},
//     "hyper": {"epochs": 6, "batch_size": 16, "lr_encoder": 1e-3, "lr_head": 1e-2, "vul_class_weight": 5},
//     "corpus": {"seed": 42, "signature_rate": 1.0, "positives": 60, "negatives": 60},
//     "tasks": [{"name": "A", "patterns": ["cwe190"]}, {"name": "B", "path": "b.jsonl"}],
//     "split": {"train": 0.8, "val": 0.1, "test": 0.1},
//     "base": "optional/pretrained.yoto",
//     "lambda": 0.3,            (or omit and give "grid")
//     "grid": [0.1, 0.2],
//     "with_joint": true,
//     "output_dir": "out"
//   }

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "yoto/corpus.hpp"
#include "yoto/evaluator.hpp"
#include "yoto/trainer.hpp"

namespace yoto {

struct TaskSource {
  std::string name;
  std::vector<std::string> patterns;  // synthetic families; several make a multi-class task
  std::string path;                   // or a JSONL dataset
};

struct RunConfig {
  ScenarioKind scenario = ScenarioKind::single_merge;
  std::uint64_t seed = 42;
  // Toy encoder; vocab_size is a cap, shrunk to the real vocabulary.
  ModelConfig model{.vocab_size = 256, .d_model = 64, .n_heads = 4, .n_layers = 2, .d_ff = 128, .max_len = 128};
  TrainHyper pretrain = default_pretrain_hyper();
  TrainHyper hyper;
  std::uint64_t corpus_seed = 42;
  double signature_rate = 1.0;
  int positives = 60;
  int negatives = 60;
  std::vector<TaskSource> tasks;
  SplitRatios split;
  std::string base_path;
  std::optional<float> lambda;
  std::vector<float> grid = default_lambda_grid();
  bool with_joint = false;
  std::string output_dir = ".";
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

TrainHyper parse_hyper(const nlohmann::json& j, TrainHyper defaults);
nlohmann::json hyper_to_json(const TrainHyper& h);
ModelConfig parse_model_config(const nlohmann::json& j, ModelConfig defaults);
nlohmann::json model_config_to_json(const ModelConfig& c);

// Whole (unsplit) datasets for each task, synthetic or loaded.
std::vector<std::pair<std::string, Dataset>> build_task_data(const RunConfig& config);

struct PreparedRun {
  std::vector<Task> tasks;
  Checkpoint base;
  std::vector<std::string> inputs;  // files read
};

// Splits every task and loads or pretrains the base encoder (on the
// training splits only).
PreparedRun prepare_run(const RunConfig& config);

ScenarioSpec scenario_spec(const RunConfig& config, const PreparedRun& prepared);

}  // namespace yoto
