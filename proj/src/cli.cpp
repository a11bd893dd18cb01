#include "yoto/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "yoto/checkpoint.hpp"
#include "yoto/corpus.hpp"
#include "yoto/error.hpp"
#include "yoto/evaluator.hpp"
#include "yoto/run_config.hpp"
#include "yoto/trainer.hpp"
#include "yoto/vulvector.hpp"

namespace yoto {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Inputs are recorded by file digest, so a manifest pins exact bytes.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> args) : command_(std::move(command)), args_(std::move(args)) {}

  void input(const std::string& path) { inputs_[path] = file_digest(path); }
  void output(const std::string& path) { outputs_[path] = file_digest(path); }
  void seed(const std::string& key, std::uint64_t value) { seeds_[key] = value; }

  void write(const std::string& path) const {
    const json j = {{"command", command_}, {"args", args_},       {"inputs", inputs_},
                    {"seeds", seeds_},     {"outputs", outputs_}};
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write manifest '" + path + "'");
    f << j.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  json inputs_ = json::object();
  json seeds_ = json::object();
  json outputs_ = json::object();
};

std::string manifest_beside(const std::string& output) { return output + ".manifest.json"; }
std::string manifest_in(const std::string& dir) { return (fs::path(dir) / "manifest.json").string(); }

std::string stem_of(const std::string& path) {
  std::string s = fs::path(path).filename().string();
  for (const char* ext : {".jsonl", ".yoto"}) {
    const std::string e = ext;
    if (s.size() > e.size() && s.ends_with(e)) return s.substr(0, s.size() - e.size());
  }
  return fs::path(path).stem().string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create directory '" + dir + "': " + ec.message());
}

std::pair<std::string, std::string> split_ref(const std::string& ref, const char* what) {
  const auto at = ref.rfind(':');
  if (at == std::string::npos || at == 0 || at + 1 == ref.size()) {
    throw Error(ErrorKind::argument, std::string(what) + " must look like PATH:HEAD, got '" + ref + "'");
  }
  return {ref.substr(0, at), ref.substr(at + 1)};
}

std::vector<float> parse_grid(const std::string& text) {
  std::vector<float> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    float x = 0.0f;
    auto res = std::from_chars(item.data(), item.data() + item.size(), x);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw Error(ErrorKind::argument, "bad lambda grid entry '" + item + "'");
    }
    grid.push_back(x);
  }
  if (grid.empty()) throw Error(ErrorKind::argument, "lambda grid is empty");
  return grid;
}

std::string quote_msg(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

struct HyperFlags {
  std::optional<int> epochs, batch_size;
  std::optional<float> lr_encoder, lr_head, vul_weight;
  std::optional<std::uint64_t> seed;
  std::string config;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Mini-batch size");
    app->add_option("--lr-encoder", lr_encoder, "Encoder learning rate");
    app->add_option("--lr-head", lr_head, "Head learning rate");
    app->add_option("--vul-weight", vul_weight, "Loss weight of vulnerable classes");
    app->add_option("--seed", seed, "Training seed");
    app->add_option("--config", config, "Run file supplying defaults (flags win)");
  }

  TrainHyper resolve(TrainHyper h, const char* section) const {
    if (!config.empty()) {
      const RunConfig rc = load_run_config_lenient(config);
      h = std::string(section) == "pretrain" ? rc.pretrain : rc.hyper;
    }
    if (epochs) h.epochs = *epochs;
    if (batch_size) h.batch_size = *batch_size;
    if (lr_encoder) h.lr_encoder = *lr_encoder;
    if (lr_head) h.lr_head = *lr_head;
    if (vul_weight) h.vul_class_weight = *vul_weight;
    if (seed) h.seed = *seed;
    h.validate();
    return h;
  }

  // Run files used only for hyperparameters need no tasks.
  static RunConfig load_run_config_lenient(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::io, "cannot open run config '" + path + "'");
    json j;
    try {
      j = json::parse(f);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse, "run config '" + path + "': " + e.what());
    }
    if (!j.contains("tasks")) j["tasks"] = json::array({{{"name", "unused"}, {"patterns", {"cwe190"}}}});
    return parse_run_config(j);
  }
};

void write_report(const Report& report, const std::string& path, Manifest& manifest) {
  emit_report(report, path);
  manifest.output(path);
}

void save_ckpt(const Checkpoint& c, const std::string& path, Manifest& manifest) {
  save_checkpoint(c, path);
  manifest.output(path);
}

std::vector<HeadSource> load_heads(const std::vector<std::string>& refs, std::vector<Checkpoint>& store,
                                   Manifest& manifest) {
  store.reserve(refs.size());
  std::vector<HeadSource> heads;
  for (const auto& ref : refs) {
    auto [path, head] = split_ref(ref, "--head");
    manifest.input(path);
    store.push_back(load_checkpoint(path));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) heads.push_back({&store[i], split_ref(refs[i], "--head").second});
  return heads;
}

VulVector load_vector(const std::string& path, Manifest& manifest) {
  manifest.input(path);
  return from_container(load_checkpoint(path));
}

// ---- command implementations ----------------------------------------------

struct GenCorpusOpts {
  std::string out_dir;
  std::vector<std::string> patterns;
  int positives = 100, negatives = 100;
  std::uint64_t seed = 42;
  double signature_rate = 1.0;
  bool imbalanced = false;
  std::string merge;
};

void cmd_gen_corpus(const GenCorpusOpts& o, Manifest& m, std::ostream& out) {
  CorpusSpec spec;
  if (o.imbalanced) {
    spec = imbalanced_scaled_spec(o.seed);
  } else {
    spec.seed = o.seed;
    std::vector<std::string> ids = o.patterns;
    if (ids.empty()) ids = {"cwe190", "cwe617", "cwe772", "cwe269"};
    for (const auto& id : ids) spec.patterns[id] = {o.positives, o.negatives};
  }
  spec.signature_rate = o.signature_rate;
  m.seed("corpus", spec.seed);
  ensure_dir(o.out_dir);
  auto data = generate_corpus(spec);
  std::vector<Dataset> parts;
  for (const auto& [id, ds] : data) {
    const std::string path = (fs::path(o.out_dir) / (id + ".jsonl")).string();
    save_jsonl(ds, path);
    m.output(path);
    parts.push_back(ds);
    out << path << " " << ds.records.size() << "\n";
  }
  if (!o.merge.empty()) {
    const std::string path = (fs::path(o.out_dir) / (o.merge + ".jsonl")).string();
    save_jsonl(concat_datasets(parts), path);
    m.output(path);
    out << path << "\n";
  }
  m.write(manifest_in(o.out_dir));
}

struct SplitOpts {
  std::string in, out_dir;
  double train = 0.8, val = 0.1, test = 0.1;
  std::uint64_t seed = 42;
};

void cmd_split(const SplitOpts& o, Manifest& m, std::ostream& out, std::ostream& err) {
  m.input(o.in);
  m.seed("split", o.seed);
  const Dataset whole = load_jsonl(o.in);
  const SplitResult s = split(whole, {o.train, o.val, o.test}, o.seed);
  for (const auto& w : s.warnings) err << "warning: " << w << "\n";
  ensure_dir(o.out_dir);
  const std::string stem = stem_of(o.in);
  for (const Dataset* d : {&s.train, &s.val, &s.test}) {
    const std::string path = (fs::path(o.out_dir) / (stem + "." + to_string(d->role) + ".jsonl")).string();
    save_jsonl(*d, path);
    m.output(path);
    out << path << " " << d->records.size() << "\n";
  }
  m.write(manifest_in(o.out_dir));
}

struct PretrainOpts {
  std::vector<std::string> data;
  std::string out, log;
  std::optional<int> vocab_size, d_model, n_heads, n_layers, d_ff, max_len;
  HyperFlags hyper;
};

void cmd_pretrain(const PretrainOpts& o, Manifest& m, std::ostream& out) {
  ModelConfig config = RunConfig{}.model;
  if (!o.hyper.config.empty()) config = HyperFlags::load_run_config_lenient(o.hyper.config).model;
  if (o.vocab_size) config.vocab_size = *o.vocab_size;
  if (o.d_model) config.d_model = *o.d_model;
  if (o.n_heads) config.n_heads = *o.n_heads;
  if (o.n_layers) config.n_layers = *o.n_layers;
  if (o.d_ff) config.d_ff = *o.d_ff;
  if (o.max_len) config.max_len = *o.max_len;
  const TrainHyper h = o.hyper.resolve(default_pretrain_hyper(), "pretrain");
  m.seed("pretrain", h.seed);
  std::vector<Dataset> corpus;
  for (const auto& p : o.data) {
    m.input(p);
    corpus.push_back(load_jsonl(p));
  }
  const TrainResult r = pretrain(corpus, config, h);
  save_ckpt(r.checkpoint, o.out, m);
  if (!o.log.empty()) {
    write_training_log(r.log, o.log);
    m.output(o.log);
  }
  out << "fingerprint " << fingerprint(r.checkpoint.params) << "\n";
  m.write(manifest_beside(o.out));
}

struct FinetuneOpts {
  std::string base, head = "joint", out, log;
  std::vector<std::string> data;
  HyperFlags hyper;
};

void cmd_finetune(const FinetuneOpts& o, bool joint, Manifest& m, std::ostream& out) {
  const TrainHyper h = o.hyper.resolve(TrainHyper{}, "hyper");
  m.seed("train", h.seed);
  m.input(o.base);
  const Checkpoint base = load_checkpoint(o.base);
  std::vector<Dataset> parts;
  for (const auto& p : o.data) {
    m.input(p);
    parts.push_back(load_jsonl(p));
  }
  if (!joint && parts.size() != 1) throw Error(ErrorKind::argument, "finetune takes exactly one --data file");
  const TrainResult r = joint ? joint_train(base, parts, o.head, h) : finetune(base, parts.front(), o.head, h);
  save_ckpt(r.checkpoint, o.out, m);
  if (!o.log.empty()) {
    write_training_log(r.log, o.log);
    m.output(o.log);
  }
  if (!r.log.empty()) out << "final_loss " << r.log.back().loss << " train_acc " << r.log.back().train_acc << "\n";
  m.write(manifest_beside(o.out));
}

struct VecOpts {
  std::string ft, base, out;
  std::vector<std::string> vecs, ckpts, heads;
  float lambda = 1.0f;
  bool keep_embeddings = false;
};

void cmd_vec_diff(const VecOpts& o, Manifest& m) {
  m.input(o.ft);
  m.input(o.base);
  const VulVector v = compute_vulvector(load_checkpoint(o.ft), load_checkpoint(o.base));
  save_ckpt(to_container(v), o.out, m);
  m.write(manifest_beside(o.out));
}

void cmd_vec_add(const VecOpts& o, Manifest& m) {
  std::vector<VulVector> vs;
  for (const auto& p : o.vecs) vs.push_back(load_vector(p, m));
  save_ckpt(to_container(vv_sum(vs)), o.out, m);
  m.write(manifest_beside(o.out));
}

void cmd_vec_scale(const VecOpts& o, Manifest& m) {
  const VulVector v = load_vector(o.vecs.front(), m);
  save_ckpt(to_container(vv_scale(v, o.lambda)), o.out, m);
  m.write(manifest_beside(o.out));
}

void cmd_vec_apply(const VecOpts& o, Manifest& m, std::ostream& out) {
  m.input(o.base);
  const Checkpoint base = load_checkpoint(o.base);
  const VulVector v = load_vector(o.vecs.front(), m);
  std::vector<Checkpoint> donors;
  const auto heads = load_heads(o.heads, donors, m);
  Checkpoint merged = apply(base, vv_scale(v, o.lambda), heads, {.merge_embeddings = !o.keep_embeddings});
  merged.meta.lambda = decimal_lambda(o.lambda);
  save_ckpt(merged, o.out, m);
  out << "fingerprint " << fingerprint(merged.params) << "\n";
  m.write(manifest_beside(o.out));
}

void cmd_vec_mean(const VecOpts& o, Manifest& m, std::ostream& out) {
  std::vector<Checkpoint> cs;
  cs.reserve(o.ckpts.size());
  for (const auto& p : o.ckpts) {
    m.input(p);
    cs.push_back(load_checkpoint(p));
  }
  std::vector<const Checkpoint*> ptrs;
  for (const auto& c : cs) ptrs.push_back(&c);
  std::vector<Checkpoint> donors;
  const auto heads = load_heads(o.heads, donors, m);
  const Checkpoint mean = param_mean(ptrs, heads);
  save_ckpt(mean, o.out, m);
  out << "fingerprint " << fingerprint(mean.params) << "\n";
  m.write(manifest_beside(o.out));
}

struct EvalOpts {
  std::string model, head, report, scheme = "auto";
  std::vector<std::string> data;
};

void cmd_eval(const EvalOpts& o, Manifest& m, std::ostream& out) {
  m.input(o.model);
  const Checkpoint c = load_checkpoint(o.model);
  Report report;
  for (const auto& p : o.data) {
    m.input(p);
    const Dataset d = load_jsonl(p);
    std::optional<MetricScheme> scheme;
    if (o.scheme == "binary") scheme = MetricScheme::binary_positive;
    else if (o.scheme == "macro") scheme = MetricScheme::macro_vul;
    const Metrics metrics = cross_eval(c, o.head, d, scheme);
    report.rows.push_back({stem_of(o.model), stem_of(p), to_string(d.role), metrics, c.meta.lambda,
                           fingerprint(c.params)});
  }
  out << report_to_csv(report);
  if (!o.report.empty()) {
    write_report(report, o.report, m);
    m.write(manifest_beside(o.report));
  }
}

struct SelectOpts {
  std::string base, grid, report, out;
  std::vector<std::string> vecs, heads, valsets;
};

void cmd_select_lambda(const SelectOpts& o, Manifest& m, std::ostream& out) {
  m.input(o.base);
  const Checkpoint base = load_checkpoint(o.base);
  std::vector<VulVector> vs;
  for (const auto& p : o.vecs) vs.push_back(load_vector(p, m));
  std::vector<Checkpoint> donors;
  const auto heads = load_heads(o.heads, donors, m);
  std::vector<Dataset> sets;
  sets.reserve(o.valsets.size());
  std::vector<EvalTarget> targets;
  for (const auto& ref : o.valsets) {
    auto [path, head] = split_ref(ref, "--valset");
    m.input(path);
    sets.push_back(load_jsonl(path));
    targets.push_back({&sets.back(), head, stem_of(path)});
  }
  const auto grid = o.grid.empty() ? default_lambda_grid() : parse_grid(o.grid);
  const LambdaSelection sel = select_lambda(base, vs, heads, targets, grid);
  for (const auto& [lambda, score] : sel.scores) out << "lambda " << lambda << " val_accuracy " << score << "\n";
  out << "selected " << sel.lambda << "\n";
  std::string anchor;
  if (!o.report.empty()) {
    write_report(sel.report, o.report, m);
    anchor = o.report;
  }
  if (!o.out.empty()) {
    std::vector<const VulVector*> ptrs;
    for (const auto& v : vs) ptrs.push_back(&v);
    save_ckpt(merge(base, MergeSpec{ptrs, sel.lambda}, heads), o.out, m);
    anchor = o.out;
  }
  if (!anchor.empty()) m.write(manifest_beside(anchor));
}

struct ScenarioOpts {
  std::string config, output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<float> lambda;
  std::optional<int> epochs;
  bool with_joint = false;
};

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  }
  return s;
}

void cmd_scenario(const std::string& kind, const ScenarioOpts& o, Manifest& m, std::ostream& out) {
  std::ifstream f(o.config);
  if (!f) throw Error(ErrorKind::io, "cannot open run config '" + o.config + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, "run config '" + o.config + "': " + e.what());
  }
  m.input(o.config);
  j["scenario"] = kind;
  if (o.seed) j["seed"] = *o.seed;
  if (o.lambda) j["lambda"] = decimal_lambda(*o.lambda);
  if (o.epochs) j["hyper"]["epochs"] = *o.epochs;
  if (o.with_joint) j["with_joint"] = true;
  if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
  const RunConfig rc = parse_run_config(j);
  m.seed("run", rc.seed);
  m.seed("pretrain", rc.pretrain.seed);
  m.seed("hyper", rc.hyper.seed);
  m.seed("corpus", rc.corpus_seed);

  ensure_dir(rc.output_dir);
  const PreparedRun prepared = prepare_run(rc);
  for (const auto& p : prepared.inputs) m.input(p);
  ScenarioSpec spec = scenario_spec(rc, prepared);
  const std::string report_path = (fs::path(rc.output_dir) / "report.csv").string();
  spec.partial_report_path = report_path;
  const ScenarioOutcome outcome = run_scenario(spec);
  write_report(outcome.report, report_path, m);

  const fs::path models = fs::path(rc.output_dir) / "models";
  ensure_dir(models.string());
  if (rc.base_path.empty()) save_ckpt(prepared.base, (models / "base.yoto").string(), m);
  for (const auto& [name, c] : outcome.models) save_ckpt(c, (models / (file_safe(name) + ".yoto")).string(), m);

  json summary = outcome.summary;
  const std::string summary_path = (fs::path(rc.output_dir) / "summary.json").string();
  {
    std::ofstream s(summary_path, std::ios::binary | std::ios::trunc);
    if (!s) throw Error(ErrorKind::io, "cannot write '" + summary_path + "'");
    s << summary.dump(2) << "\n";
  }
  m.output(summary_path);
  out << report_to_csv(outcome.report);
  m.write(manifest_in(rc.output_dir));
}

struct InspectOpts {
  std::string model;
};

void cmd_inspect(const InspectOpts& o, std::ostream& out) {
  json j;
  for (const auto& e : read_tensor_index(o.model)) {
    j["tensors"][e.name] = {{"shape", e.shape}, {"offset", e.offset}, {"length", e.length}};
  }
  const Checkpoint c = load_checkpoint(o.model);
  j["role"] = to_string(c.meta.role);
  j["fingerprint"] = fingerprint(c.params);
  j["lineage"] = c.meta.lineage;
  j["heads"] = head_ids(c.params);
  j["config"] = model_config_to_json(c.config);
  out << j.dump(2) << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vul-Vector fine-tune, merge and evaluation toolkit", "yoto"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::function<void(Manifest&)> action;
  std::string command;

  auto bind = [&](CLI::App* sub, std::string name, std::function<void(Manifest&)> fn) {
    sub->callback([&, name, fn] {
      command = name;
      action = fn;
    });
  };

  GenCorpusOpts gen;
  auto* s_gen = app.add_subcommand("gen-corpus", "Generate synthetic per-CWE datasets");
  s_gen->add_option("--out-dir", gen.out_dir)->required();
  s_gen->add_option("--pattern", gen.patterns, "Pattern id (repeatable)");
  s_gen->add_option("--positives", gen.positives);
  s_gen->add_option("--negatives", gen.negatives);
  s_gen->add_option("--seed", gen.seed);
  s_gen->add_option("--signature-rate", gen.signature_rate);
  s_gen->add_flag("--imbalanced", gen.imbalanced, "Use the scaled imbalanced class counts");
  s_gen->add_option("--merge", gen.merge, "Also write all patterns as one multi-class dataset");
  bind(s_gen, "gen-corpus", [&](Manifest& m) { cmd_gen_corpus(gen, m, out); });

  SplitOpts sp;
  auto* s_split = app.add_subcommand("split", "Stratified train/val/test split");
  s_split->add_option("--in", sp.in)->required();
  s_split->add_option("--out-dir", sp.out_dir)->required();
  s_split->add_option("--train", sp.train);
  s_split->add_option("--val", sp.val);
  s_split->add_option("--test", sp.test);
  s_split->add_option("--seed", sp.seed);
  bind(s_split, "split", [&](Manifest& m) { cmd_split(sp, m, out, err); });

  PretrainOpts pt;
  auto* s_pt = app.add_subcommand("pretrain", "Masked-token pretraining of a base encoder");
  s_pt->add_option("--data", pt.data)->required();
  s_pt->add_option("--out", pt.out)->required();
  s_pt->add_option("--log", pt.log, "Per-epoch CSV log");
  s_pt->add_option("--vocab-size", pt.vocab_size);
  s_pt->add_option("--d-model", pt.d_model);
  s_pt->add_option("--n-heads", pt.n_heads);
  s_pt->add_option("--n-layers", pt.n_layers);
  s_pt->add_option("--d-ff", pt.d_ff);
  s_pt->add_option("--max-len", pt.max_len);
  pt.hyper.add(s_pt);
  bind(s_pt, "pretrain", [&](Manifest& m) { cmd_pretrain(pt, m, out); });

  FinetuneOpts ft;
  auto* s_ft = app.add_subcommand("finetune", "Fine-tune a classifier head and the encoder");
  s_ft->add_option("--base", ft.base)->required();
  s_ft->add_option("--data", ft.data)->required();
  s_ft->add_option("--head", ft.head)->required();
  s_ft->add_option("--out", ft.out)->required();
  s_ft->add_option("--log", ft.log);
  ft.hyper.add(s_ft);
  bind(s_ft, "finetune", [&](Manifest& m) { cmd_finetune(ft, false, m, out); });

  FinetuneOpts jt;
  auto* s_jt = app.add_subcommand("joint-train", "Train one classifier on the union of datasets");
  s_jt->add_option("--base", jt.base)->required();
  s_jt->add_option("--data", jt.data)->required();
  s_jt->add_option("--head", jt.head);
  s_jt->add_option("--out", jt.out)->required();
  s_jt->add_option("--log", jt.log);
  jt.hyper.add(s_jt);
  bind(s_jt, "joint-train", [&](Manifest& m) { cmd_finetune(jt, true, m, out); });

  VecOpts vo;
  auto* s_vec = app.add_subcommand("vec", "Vul-Vector arithmetic");
  s_vec->require_subcommand(1);
  auto* v_diff = s_vec->add_subcommand("diff", "ft - base");
  v_diff->add_option("--ft", vo.ft)->required();
  v_diff->add_option("--base", vo.base)->required();
  v_diff->add_option("--out", vo.out)->required();
  bind(v_diff, "vec diff", [&](Manifest& m) { cmd_vec_diff(vo, m); });
  auto* v_add = s_vec->add_subcommand("add", "Sum vectors in the given order");
  v_add->add_option("--vec", vo.vecs)->required();
  v_add->add_option("--out", vo.out)->required();
  bind(v_add, "vec add", [&](Manifest& m) { cmd_vec_add(vo, m); });
  auto* v_scale = s_vec->add_subcommand("scale", "Multiply a vector by lambda");
  v_scale->add_option("--vec", vo.vecs)->required()->expected(1);
  v_scale->add_option("--lambda", vo.lambda)->required();
  v_scale->add_option("--out", vo.out)->required();
  bind(v_scale, "vec scale", [&](Manifest& m) { cmd_vec_scale(vo, m); });
  auto* v_apply = s_vec->add_subcommand("apply", "base + lambda * vec, with a head bank");
  v_apply->add_option("--base", vo.base)->required();
  v_apply->add_option("--vec", vo.vecs)->required()->expected(1);
  v_apply->add_option("--lambda", vo.lambda);
  v_apply->add_option("--head", vo.heads, "PATH:HEAD donor (repeatable)");
  v_apply->add_flag("--keep-embeddings", vo.keep_embeddings, "Leave embedding tables at base values");
  v_apply->add_option("--out", vo.out)->required();
  bind(v_apply, "vec apply", [&](Manifest& m) { cmd_vec_apply(vo, m, out); });
  auto* v_mean = s_vec->add_subcommand("mean", "Parameter mean of checkpoints");
  v_mean->add_option("--ckpt", vo.ckpts)->required();
  v_mean->add_option("--head", vo.heads, "PATH:HEAD donor (repeatable)");
  v_mean->add_option("--out", vo.out)->required();
  bind(v_mean, "vec mean", [&](Manifest& m) { cmd_vec_mean(vo, m, out); });

  EvalOpts ev;
  auto* s_ev = app.add_subcommand("eval", "Evaluate a checkpoint head on datasets");
  s_ev->add_option("--model", ev.model)->required();
  s_ev->add_option("--head", ev.head)->required();
  s_ev->add_option("--data", ev.data)->required();
  s_ev->add_option("--scheme", ev.scheme)->check(CLI::IsMember({"auto", "binary", "macro"}));
  s_ev->add_option("--report", ev.report);
  bind(s_ev, "eval", [&](Manifest& m) { cmd_eval(ev, m, out); });

  SelectOpts sl;
  auto* s_sl = app.add_subcommand("select-lambda", "Pick lambda on validation splits");
  s_sl->add_option("--base", sl.base)->required();
  s_sl->add_option("--vec", sl.vecs)->required();
  s_sl->add_option("--head", sl.heads, "PATH:HEAD donor (repeatable)");
  s_sl->add_option("--valset", sl.valsets, "PATH:HEAD validation split (repeatable)")->required();
  s_sl->add_option("--grid", sl.grid, "Comma-separated lambdas (default 0.1..1.0)");
  s_sl->add_option("--report", sl.report);
  s_sl->add_option("--out", sl.out, "Write the merged model at the selected lambda");
  bind(s_sl, "select-lambda", [&](Manifest& m) { cmd_select_lambda(sl, m, out); });

  ScenarioOpts so;
  auto* s_sc = app.add_subcommand("scenario", "Run an experiment protocol from a run file");
  s_sc->require_subcommand(1);
  for (const char* kind : {"single", "multi", "incremental"}) {
    auto* k = s_sc->add_subcommand(kind, std::string(kind) + " protocol");
    k->add_option("--config", so.config)->required();
    k->add_option("--output-dir", so.output_dir);
    k->add_option("--seed", so.seed);
    k->add_option("--lambda", so.lambda);
    k->add_option("--epochs", so.epochs);
    k->add_flag("--with-joint", so.with_joint);
    const std::string name = kind;
    bind(k, "scenario " + name, [&, name](Manifest& m) { cmd_scenario(name, so, m, out); });
  }

  InspectOpts in;
  auto* s_in = app.add_subcommand("inspect", "Print a checkpoint's index and metadata");
  s_in->add_option("--model", in.model)->required();
  bind(s_in, "inspect", [&](Manifest&) { cmd_inspect(in, out); });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error kind=usage msg=\"" << quote_msg(e.what()) << "\"\n";
    return 2;
  }

  try {
    Manifest manifest(command, args);
    action(manifest);
    return 0;
  } catch (const Error& e) {
    err << "error kind=" << to_string(e.kind()) << " msg=\"" << quote_msg(e.what()) << "\"\n";
  } catch (const std::exception& e) {
    err << "error kind=internal msg=\"" << quote_msg(e.what()) << "\"\n";
  }
  return 1;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace yoto
