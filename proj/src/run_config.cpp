#include "yoto/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "yoto/error.hpp"

namespace yoto {

using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw Error(ErrorKind::config, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, where + "." + key + " has the wrong type");
  }
}

}  // namespace

TrainHyper parse_hyper(const json& j, TrainHyper h) {
  require_object(j, "hyper", {"epochs", "batch_size", "lr_encoder", "lr_head", "vul_class_weight", "seed"});
  h.epochs = get(j, "epochs", "hyper", h.epochs);
  h.batch_size = get(j, "batch_size", "hyper", h.batch_size);
  h.lr_encoder = get(j, "lr_encoder", "hyper", h.lr_encoder);
  h.lr_head = get(j, "lr_head", "hyper", h.lr_head);
  h.vul_class_weight = get(j, "vul_class_weight", "hyper", h.vul_class_weight);
  h.seed = get(j, "seed", "hyper", h.seed);
  h.validate();
  return h;
}

json hyper_to_json(const TrainHyper& h) {
  return {{"epochs", h.epochs},     {"batch_size", h.batch_size},           {"lr_encoder", h.lr_encoder},
          {"lr_head", h.lr_head},   {"vul_class_weight", h.vul_class_weight}, {"seed", h.seed}};
}

ModelConfig parse_model_config(const json& j, ModelConfig c) {
  require_object(j, "model", {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_len"});
  c.vocab_size = get(j, "vocab_size", "model", c.vocab_size);
  c.d_model = get(j, "d_model", "model", c.d_model);
  c.n_heads = get(j, "n_heads", "model", c.n_heads);
  c.n_layers = get(j, "n_layers", "model", c.n_layers);
  c.d_ff = get(j, "d_ff", "model", c.d_ff);
  c.max_len = get(j, "max_len", "model", c.max_len);
  c.validate();
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},       {"max_len", c.max_len}};
}

RunConfig parse_run_config(const json& j) {
  require_object(j, "run config",
                 {"scenario", "seed", "model", "pretrain", "hyper", "corpus", "tasks", "split", "base", "lambda",
                  "grid", "with_joint", "output_dir"});
  RunConfig c;
  if (j.contains("scenario")) c.scenario = parse_scenario_kind(get<std::string>(j, "scenario", "run config", ""));
  c.seed = get(j, "seed", "run config", c.seed);
  // Training seeds follow the run seed unless given explicitly.
  c.pretrain.seed = c.seed;
  c.hyper.seed = c.seed;
  c.corpus_seed = c.seed;
  if (j.contains("model")) c.model = parse_model_config(j["model"], c.model);
  if (j.contains("pretrain")) c.pretrain = parse_hyper(j["pretrain"], c.pretrain);
  if (j.contains("hyper")) c.hyper = parse_hyper(j["hyper"], c.hyper);
  if (j.contains("corpus")) {
    const json& k = j["corpus"];
    require_object(k, "corpus", {"seed", "signature_rate", "positives", "negatives"});
    c.corpus_seed = get(k, "seed", "corpus", c.corpus_seed);
    c.signature_rate = get(k, "signature_rate", "corpus", c.signature_rate);
    c.positives = get(k, "positives", "corpus", c.positives);
    c.negatives = get(k, "negatives", "corpus", c.negatives);
  }
  if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty()) {
    throw Error(ErrorKind::config, "run config needs a non-empty 'tasks' array");
  }
  for (const auto& t : j["tasks"]) {
    require_object(t, "task", {"name", "patterns", "path"});
    TaskSource src;
    src.name = get<std::string>(t, "name", "task", "");
    src.patterns = get<std::vector<std::string>>(t, "patterns", "task", {});
    src.path = get<std::string>(t, "path", "task", "");
    if (src.name.empty()) throw Error(ErrorKind::config, "every task needs a name");
    if (src.patterns.empty() == src.path.empty()) {
      throw Error(ErrorKind::config, "task '" + src.name + "' needs exactly one of 'patterns' or 'path'");
    }
    c.tasks.push_back(std::move(src));
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    require_object(s, "split", {"train", "val", "test"});
    c.split.train = get(s, "train", "split", c.split.train);
    c.split.val = get(s, "val", "split", c.split.val);
    c.split.test = get(s, "test", "split", c.split.test);
  }
  c.base_path = get<std::string>(j, "base", "run config", "");
  if (j.contains("lambda")) c.lambda = get(j, "lambda", "run config", 0.0f);
  c.grid = get(j, "grid", "run config", c.grid);
  if (c.grid.empty()) throw Error(ErrorKind::config, "grid must not be empty");
  c.with_joint = get(j, "with_joint", "run config", c.with_joint);
  c.output_dir = get<std::string>(j, "output_dir", "run config", c.output_dir);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::io, "cannot open run config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, "run config '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

std::vector<std::pair<std::string, Dataset>> build_task_data(const RunConfig& config) {
  CorpusSpec spec;
  spec.seed = config.corpus_seed;
  spec.signature_rate = config.signature_rate;
  for (const auto& t : config.tasks) {
    for (const auto& p : t.patterns) spec.patterns[p] = {config.positives, config.negatives};
  }
  std::map<std::string, Dataset> synthetic;
  if (!spec.patterns.empty()) synthetic = generate_corpus(spec);

  std::vector<std::pair<std::string, Dataset>> out;
  for (const auto& t : config.tasks) {
    if (!t.path.empty()) {
      out.emplace_back(t.name, load_jsonl(t.path));
      continue;
    }
    std::vector<Dataset> parts;
    for (const auto& p : t.patterns) parts.push_back(synthetic.at(p));
    Dataset d = parts.size() == 1 ? parts.front() : concat_datasets(parts);
    d.provenance = "synthetic:" + t.name + ":seed=" + std::to_string(config.corpus_seed);
    out.emplace_back(t.name, std::move(d));
  }
  return out;
}

PreparedRun prepare_run(const RunConfig& config) {
  PreparedRun run;
  for (const auto& t : config.tasks) {
    if (!t.path.empty()) run.inputs.push_back(t.path);
  }
  std::uint64_t stream = 1;
  for (auto& [name, whole] : build_task_data(config)) {
    run.tasks.push_back(make_task(name, whole, config.split, derive_seed(config.seed, stream++)));
  }
  if (!config.base_path.empty()) {
    run.base = load_checkpoint(config.base_path);
    run.inputs.push_back(config.base_path);
  } else {
    std::vector<Dataset> corpus;
    for (const auto& t : run.tasks) corpus.push_back(t.train);
    run.base = pretrain(corpus, config.model, config.pretrain).checkpoint;
  }
  return run;
}

ScenarioSpec scenario_spec(const RunConfig& config, const PreparedRun& prepared) {
  ScenarioSpec spec;
  spec.kind = config.scenario;
  spec.base = &prepared.base;
  spec.tasks = prepared.tasks;
  spec.hyper = config.hyper;
  spec.lambda = config.lambda;
  spec.grid = config.grid;
  spec.with_joint = config.with_joint;
  spec.seed = config.seed;
  return spec;
}

}  // namespace yoto
