#include "yoto/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "yoto/error.hpp"

namespace yoto {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string format_cell(const std::optional<double>& x) { return x ? format_number(*x) : "-"; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorKind::parse, "report line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::optional<double> parse_cell(const std::string& s, std::size_t line_no) {
  if (s == "-") return std::nullopt;
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::parse, "report line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return x;
}

ReportRow make_row(const std::string& model, const std::string& dataset, const Dataset& data, const Metrics& m,
                   std::optional<double> lambda, const Checkpoint& ckpt) {
  if (lambda) lambda = decimal_lambda(static_cast<float>(*lambda));
  return {model, dataset, to_string(data.role), m, lambda, fingerprint(ckpt.params)};
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Argmax over a grid of candidates built by `build(lambda)`, scored by mean
// validation accuracy; ties keep the smaller lambda.
template <typename Build>
LambdaSelection select_over_grid(const std::vector<float>& grid, const std::vector<EvalTarget>& valsets, Build build) {
  if (grid.empty()) throw Error(ErrorKind::argument, "lambda grid is empty");
  if (valsets.empty()) throw Error(ErrorKind::argument, "lambda selection needs at least one validation set");
  for (const auto& t : valsets) {
    if (!t.dataset) throw Error(ErrorKind::argument, "null validation dataset");
    if (t.dataset->role != SplitRole::val) {
      throw Error(ErrorKind::split_role, "lambda selection may only read validation splits; '" + t.label +
                                             "' is tagged " + to_string(t.dataset->role));
    }
  }
  std::vector<float> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  LambdaSelection sel;
  double best = -1.0;
  for (float lambda : sorted) {
    const Checkpoint merged = build(lambda);
    std::vector<double> accs;
    for (const auto& t : valsets) {
      const Metrics m = cross_eval(merged, t.head_id, *t.dataset);
      accs.push_back(m.accuracy.value_or(0.0));
      sel.report.rows.push_back(make_row("yoto", t.label, *t.dataset, m, lambda, merged));
    }
    const double score = mean_of(accs);
    sel.scores.emplace_back(lambda, score);
    if (score > best) {
      best = score;
      sel.lambda = lambda;
    }
  }
  return sel;
}

void write_partial(const Report& report, const std::string& path, const std::string& what) {
  if (path.empty()) return;
  Report partial = report;
  std::string msg = what;
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  partial.rows.push_back({"FAILED", msg, "-", {}, std::nullopt, "-"});
  try {
    emit_report(partial, path);
  } catch (const std::exception&) {
    // The original failure is the one worth reporting.
  }
}

std::uint64_t name_stream(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ull;
  return h;
}

class ScenarioRunner {
 public:
  explicit ScenarioRunner(const ScenarioSpec& spec) : spec_(spec) {}

  ScenarioOutcome run() {
    validate();
    try {
      switch (spec_.kind) {
        case ScenarioKind::single_merge:
        case ScenarioKind::multi_merge:
          run_merge();
          break;
        case ScenarioKind::incremental:
          run_incremental();
          break;
      }
    } catch (const std::exception& e) {
      write_partial(out_.report, spec_.partial_report_path, e.what());
      throw;
    }
    out_.report.provenance["scenario"] = to_string(spec_.kind);
    out_.report.provenance["seed"] = std::to_string(spec_.seed);
    out_.report.provenance["base"] = fingerprint(spec_.base->params);
    return std::move(out_);
  }

 private:
  void validate() const {
    if (!spec_.base) throw Error(ErrorKind::argument, "scenario needs a base checkpoint");
    if (spec_.base->meta.role != Role::pretrained) {
      throw Error(ErrorKind::precondition, "scenario base must be a pretrained checkpoint");
    }
    spec_.hyper.validate();
    const std::size_t min_tasks = spec_.kind == ScenarioKind::incremental ? 1 : 2;
    if (spec_.tasks.size() < min_tasks) {
      throw Error(ErrorKind::precondition, "scenario " + to_string(spec_.kind) + " needs at least " +
                                               std::to_string(min_tasks) + " tasks");
    }
    for (std::size_t i = 0; i < spec_.tasks.size(); ++i) {
      const Task& t = spec_.tasks[i];
      validate_head_id(t.name);
      for (std::size_t j = 0; j < i; ++j) {
        if (spec_.tasks[j].name == t.name) throw Error(ErrorKind::name, "duplicate task name '" + t.name + "'");
      }
      if (t.val.role != SplitRole::val || t.test.role != SplitRole::test) {
        throw Error(ErrorKind::split_role, "task '" + t.name + "' needs val/test splits tagged as such");
      }
      const bool binary = t.train.n_classes() == 2;
      if (spec_.kind == ScenarioKind::single_merge && !binary) {
        throw Error(ErrorKind::precondition, "single-merge task '" + t.name + "' is not binary");
      }
      if (spec_.kind == ScenarioKind::incremental && i > 0 && !binary) {
        throw Error(ErrorKind::precondition, "incremental fold task '" + t.name + "' is not binary");
      }
    }
    if (spec_.lambda && !std::isfinite(*spec_.lambda)) throw Error(ErrorKind::argument, "lambda is not finite");
    if (!spec_.lambda && spec_.grid.empty()) throw Error(ErrorKind::argument, "lambda grid is empty");
  }

  TrainHyper task_hyper(const std::string& name) const {
    TrainHyper h = spec_.hyper;
    h.seed = derive_seed(spec_.seed, name_stream(name));
    return h;
  }

  const Checkpoint& specialist(const Task& t) {
    if (auto it = out_.models.find("ft:" + t.name); it != out_.models.end()) return it->second;
    if (auto it = spec_.trained.find(t.name); it != spec_.trained.end()) {
      const Checkpoint& c = it->second;
      if (c.meta.base_fingerprint != fingerprint(spec_.base->params)) {
        throw Error(ErrorKind::lineage, "provided model for '" + t.name + "' does not derive from the scenario base");
      }
      if (head_classes(c.params, t.name) != static_cast<int>(t.train.n_classes())) {
        throw Error(ErrorKind::config, "provided model for '" + t.name + "' lacks a matching head");
      }
      return out_.models.emplace("ft:" + t.name, c).first->second;
    }
    return out_.models.emplace("ft:" + t.name, finetune(*spec_.base, t.train, t.name, task_hyper(t.name)).checkpoint)
        .first->second;
  }

  Metrics eval_row(const std::string& model, const Checkpoint& ckpt, const std::string& head, const Task& t,
                   std::optional<double> lambda = std::nullopt) {
    const Metrics m = cross_eval(ckpt, head, t.test);
    out_.report.rows.push_back(make_row(model, t.name, t.test, m, lambda, ckpt));
    return m;
  }

  void run_merge() {
    const auto& tasks = spec_.tasks;
    std::vector<double> own, cross;
    for (const Task& t : tasks) own.push_back(eval_row("ft:" + t.name, specialist(t), t.name, t).accuracy.value_or(0));
    for (const Task& m : tasks) {
      for (const Task& d : tasks) {
        if (m.name == d.name) continue;
        const Checkpoint& c = out_.models.at("ft:" + m.name);
        // The specialist keeps its own head; class counts must agree.
        if (head_classes(c.params, m.name) != static_cast<int>(d.test.n_classes())) continue;
        cross.push_back(eval_row("ft:" + m.name, c, m.name, d).accuracy.value_or(0));
      }
    }

    std::vector<const Checkpoint*> members;
    std::vector<HeadSource> heads;
    std::vector<VulVector> vectors;
    std::vector<EvalTarget> valsets;
    for (const Task& t : tasks) {
      const Checkpoint& c = out_.models.at("ft:" + t.name);
      members.push_back(&c);
      heads.push_back({&c, t.name});
      vectors.push_back(compute_vulvector(c, *spec_.base));
      valsets.push_back({&t.val, t.name, t.name});
    }

    const Checkpoint mean = param_mean(members, heads);
    out_.models.emplace("param_mean", mean);
    std::vector<double> mean_acc;
    for (const Task& t : tasks) mean_acc.push_back(eval_row("param_mean", mean, t.name, t).accuracy.value_or(0));

    float lambda = 0.0f;
    if (spec_.lambda) {
      lambda = *spec_.lambda;
    } else {
      lambda = select_lambda(*spec_.base, vectors, heads, valsets, spec_.grid).lambda;
    }
    std::vector<const VulVector*> ptrs;
    for (const auto& v : vectors) ptrs.push_back(&v);
    const Checkpoint merged = merge(*spec_.base, MergeSpec{ptrs, lambda}, heads);
    out_.models.emplace("yoto", merged);
    std::vector<double> yoto_acc;
    double min_recall = 1.0;
    for (const Task& t : tasks) {
      const Metrics m = eval_row("yoto", merged, t.name, t, lambda);
      yoto_acc.push_back(m.accuracy.value_or(0));
      min_recall = std::min(min_recall, m.recall.value_or(0));
    }

    auto& s = out_.summary;
    s["lambda"] = decimal_lambda(lambda);
    s["specialist_mean_accuracy"] = mean_of(own);
    s["cross_mean_accuracy"] = mean_of(cross);
    s["param_mean_mean_accuracy"] = mean_of(mean_acc);
    s["yoto_mean_accuracy"] = mean_of(yoto_acc);
    s["yoto_min_recall"] = min_recall;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      s["specialist_accuracy." + tasks[i].name] = own[i];
      s["yoto_accuracy." + tasks[i].name] = yoto_acc[i];
    }

    if (spec_.with_joint) {
      std::vector<Dataset> parts;
      for (const Task& t : tasks) parts.push_back(t.train);
      const Checkpoint joint = joint_train(*spec_.base, parts, "joint", task_hyper("joint")).checkpoint;
      const auto names = concat_datasets(parts).class_names;
      std::vector<double> joint_acc;
      for (const Task& t : tasks) {
        Dataset test = relabel(t.test, names);
        test.role = t.test.role;
        const Metrics m = cross_eval(joint, "joint", test);
        out_.report.rows.push_back(make_row("joint", t.name, test, m, std::nullopt, joint));
        joint_acc.push_back(m.accuracy.value_or(0));
      }
      out_.models.emplace("joint", joint);
      s["joint_mean_accuracy"] = mean_of(joint_acc);
    }
  }

  void run_incremental() {
    const auto& tasks = spec_.tasks;
    const Task& start = tasks.front();
    const Checkpoint& start_model = specialist(start);
    auto& s = out_.summary;

    // Stage 0 is the starting model itself, evaluated as-is.
    const Metrics m0 = eval_row("stage0", start_model, start.name, start);
    s["stage0_accuracy." + start.name] = m0.accuracy.value_or(0);
    if (tasks.size() == 1) return;

    const VulVector tau_start = compute_vulvector(start_model, *spec_.base);
    std::vector<HeadSource> heads{{&start_model, start.name}};
    std::vector<EvalTarget> valsets{{&start.val, start.name, start.name}};
    // Encoder after stage k: the stage k-1 encoder plus lambda_k * tau_k.
    VulVector current = tau_start;
    double min_new_recall = 1.0;
    for (std::size_t k = 1; k < tasks.size(); ++k) {
      const Task& t = tasks[k];
      const Checkpoint& c = specialist(t);
      const VulVector incoming = compute_vulvector(c, *spec_.base);
      heads.push_back({&c, t.name});
      valsets.push_back({&t.val, t.name, t.name});
      auto build = [&](float lambda) {
        Checkpoint out = apply(*spec_.base, vv_add(current, vv_scale(incoming, lambda)), heads);
        out.meta.lambda = decimal_lambda(lambda);
        return out;
      };
      const float lambda = spec_.lambda ? *spec_.lambda : select_over_grid(spec_.grid, valsets, build).lambda;
      const Checkpoint stage = build(lambda);
      current = vv_add(current, vv_scale(incoming, lambda));
      const std::string label = "stage" + std::to_string(k);
      for (std::size_t j = 0; j <= k; ++j) {
        const Metrics m = eval_row(label, stage, tasks[j].name, tasks[j], lambda);
        s[label + "_accuracy." + tasks[j].name] = m.accuracy.value_or(0);
        if (j == k) {
          s[label + "_recall." + tasks[j].name] = m.recall.value_or(0);
          min_new_recall = std::min(min_new_recall, m.recall.value_or(0));
        }
      }
      s[label + "_lambda"] = decimal_lambda(lambda);
      out_.models.emplace(label, stage);
    }
    const std::string last = "stage" + std::to_string(tasks.size() - 1);
    s["start_accuracy_drop"] = s["stage0_accuracy." + start.name] - s[last + "_accuracy." + start.name];
    s["min_new_recall"] = min_new_recall;
  }

  const ScenarioSpec& spec_;
  ScenarioOutcome out_;
};

}  // namespace

std::string to_string(MetricScheme scheme) {
  return scheme == MetricScheme::binary_positive ? "binary-positive" : "macro-vul";
}

MetricScheme default_scheme(std::size_t n_classes) {
  return n_classes == 2 ? MetricScheme::binary_positive : MetricScheme::macro_vul;
}

Metrics compute_metrics(std::span<const int> preds, std::span<const int> targets, std::size_t n_classes,
                        MetricScheme scheme) {
  if (preds.size() != targets.size()) {
    throw Error(ErrorKind::argument, "compute_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                                         std::to_string(targets.size()) + " targets");
  }
  if (n_classes < 2) throw Error(ErrorKind::argument, "compute_metrics needs at least two classes");
  if (scheme == MetricScheme::binary_positive && n_classes != 2) {
    throw Error(ErrorKind::argument, "binary-positive scheme needs exactly two classes, got " +
                                         std::to_string(n_classes));
  }
  std::vector<std::size_t> tp(n_classes, 0), predicted(n_classes, 0), support(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], t = targets[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= n_classes || static_cast<std::size_t>(t) >= n_classes) {
      throw Error(ErrorKind::index, "compute_metrics: class id out of range at position " + std::to_string(i));
    }
    ++predicted[static_cast<std::size_t>(p)];
    ++support[static_cast<std::size_t>(t)];
    if (p == t) {
      ++correct;
      ++tp[static_cast<std::size_t>(p)];
    }
  }
  Metrics m;
  m.count = preds.size();
  m.accuracy = ratio(correct, preds.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    m.per_class.push_back({ratio(tp[c], support[c]), ratio(tp[c], predicted[c]), support[c]});
  }
  if (scheme == MetricScheme::binary_positive) {
    m.recall = m.per_class[1].recall;
    m.precision = m.per_class[1].precision;
  } else {
    std::vector<std::optional<double>> rs, ps;
    for (std::size_t c = 1; c < n_classes; ++c) {
      rs.push_back(m.per_class[c].recall);
      ps.push_back(m.per_class[c].precision);
    }
    m.recall = mean_defined(rs);
    m.precision = mean_defined(ps);
  }
  return m;
}

std::vector<int> predict_dataset(const Checkpoint& checkpoint, const std::string& head_id, const Dataset& dataset) {
  const Vocab vocab(checkpoint.meta.vocab);
  const auto enc = encode_dataset(vocab, dataset, static_cast<std::size_t>(checkpoint.config.max_len));
  std::vector<int> preds;
  preds.reserve(enc.sequences.size());
  for (std::size_t start = 0; start < enc.sequences.size(); start += kEvalBatch) {
    const std::size_t end = std::min(enc.sequences.size(), start + kEvalBatch);
    std::vector<std::vector<std::int32_t>> chunk(enc.sequences.begin() + static_cast<std::ptrdiff_t>(start),
                                                 enc.sequences.begin() + static_cast<std::ptrdiff_t>(end));
    for (int p : predict(checkpoint.params, checkpoint.config, make_batch(chunk), head_id)) preds.push_back(p);
  }
  return preds;
}

Metrics cross_eval(const Checkpoint& checkpoint, const std::string& head_id, const Dataset& dataset,
                   std::optional<MetricScheme> scheme) {
  dataset.validate();
  const int classes = head_classes(checkpoint.params, head_id);
  if (classes != static_cast<int>(dataset.n_classes())) {
    throw Error(ErrorKind::config, "head '" + head_id + "' has " + std::to_string(classes) + " classes but dataset '" +
                                       dataset.provenance + "' has " + std::to_string(dataset.n_classes()));
  }
  const auto preds = predict_dataset(checkpoint, head_id, dataset);
  const auto targets = dataset.targets();
  return compute_metrics(preds, targets, dataset.n_classes(), scheme.value_or(default_scheme(dataset.n_classes())));
}

double Report::mean_accuracy(const std::string& model) const {
  std::vector<double> xs;
  for (const auto* r : rows_for(model)) {
    if (r->metrics.accuracy) xs.push_back(*r->metrics.accuracy);
  }
  return mean_of(xs);
}

std::vector<const ReportRow*> Report::rows_for(const std::string& model) const {
  std::vector<const ReportRow*> out;
  for (const auto& r : rows) {
    if (r.model == model) out.push_back(&r);
  }
  return out;
}

std::string report_to_csv(const Report& report) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : report.rows) {
    out += csv_field(r.model) + "," + csv_field(r.dataset) + "," + csv_field(r.split) + "," +
           format_cell(r.metrics.accuracy) + "," + format_cell(r.metrics.recall) + "," +
           format_cell(r.metrics.precision) + "," + format_cell(r.lambda) + "," + csv_field(r.fingerprint) + "\n";
  }
  return out;
}

void emit_report(const Report& report, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write report '" + path + "'");
    f << report_to_csv(report);
    if (!f) throw Error(ErrorKind::io, "write failed for report '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorKind::io, "cannot rename report into '" + path + "'");
}

std::vector<ParsedReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw Error(ErrorKind::parse, "report header missing or wrong");
  std::vector<ParsedReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line, line_no);
    if (f.size() != 8) {
      throw Error(ErrorKind::parse, "report line " + std::to_string(line_no) + ": expected 8 fields, got " +
                                        std::to_string(f.size()));
    }
    rows.push_back({f[0], f[1], f[2], parse_cell(f[3], line_no), parse_cell(f[4], line_no), parse_cell(f[5], line_no),
                    parse_cell(f[6], line_no), f[7]});
  }
  return rows;
}

std::vector<float> default_lambda_grid() {
  std::vector<float> g;
  for (int i = 1; i <= 10; ++i) g.push_back(static_cast<float>(i / 10.0));
  return g;
}

LambdaSelection select_lambda(const Checkpoint& base, const std::vector<VulVector>& vectors,
                              const std::vector<HeadSource>& heads, const std::vector<EvalTarget>& valsets,
                              const std::vector<float>& grid) {
  std::vector<const VulVector*> ptrs;
  for (const auto& v : vectors) ptrs.push_back(&v);
  return select_over_grid(grid, valsets, [&](float lambda) { return merge(base, MergeSpec{ptrs, lambda}, heads); });
}

Task make_task(const std::string& name, const Dataset& whole, const SplitRatios& ratios, std::uint64_t seed) {
  SplitResult s = split(whole, ratios, seed);
  return {name, std::move(s.train), std::move(s.val), std::move(s.test)};
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::single_merge: return "single";
    case ScenarioKind::multi_merge: return "multi";
    case ScenarioKind::incremental: return "incremental";
  }
  return "?";
}

ScenarioKind parse_scenario_kind(const std::string& text) {
  if (text == "single") return ScenarioKind::single_merge;
  if (text == "multi") return ScenarioKind::multi_merge;
  if (text == "incremental") return ScenarioKind::incremental;
  throw Error(ErrorKind::parse, "unknown scenario kind '" + text + "' (single|multi|incremental)");
}

ScenarioOutcome run_scenario(const ScenarioSpec& spec) { return ScenarioRunner(spec).run(); }

}  // namespace yoto
