// Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned
// below. Criterion 8 is a reported comparison; its line is printed honestly
// but it does not set the exit status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "../gradcheck.hpp"
#include "../support.hpp"
#include "yoto/evaluator.hpp"
#include "yoto/run_config.hpp"
#include "yoto/vulvector.hpp"

using namespace yoto;

namespace {

constexpr double kAssocTol = 1e-6;
constexpr double kRoundTripTol = 1e-6;
constexpr double kGradTol = 1e-3;
constexpr double kCrossMargin = 0.05;
constexpr double kSpecialistFraction = 0.8;
constexpr double kIncrementalDrop = 0.15;
constexpr double kJointGap = 0.10;
constexpr int kSeedsNeeded = 4;

constexpr double kLimitFast = 10.0;
constexpr double kLimitMinute = 60.0;
constexpr double kLimitScenario = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  double limit_s;
  bool gating;
  std::function<Outcome()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

bool bits_equal(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

Checkpoint nudged(const Checkpoint& base, std::uint64_t seed, const std::string& head, float scale) {
  Checkpoint c = base;
  SeededRng rng(seed);
  for (auto& [name, t] : c.params) {
    if (!is_encoder_name(name)) continue;
    for (float& v : t.data()) v += scale * static_cast<float>(rng.normal());
  }
  add_head(c.params, c.config, head, 2, rng);
  c.meta.role = Role::finetuned;
  c.meta.base_fingerprint = fingerprint(base.params);
  return c;
}

// ---- 1: algebra ------------------------------------------------------------

Outcome algebra() {
  const Checkpoint base = test_support::random_base(test_support::tiny_config(), 1);
  int commute_fail = 0, zero_fail = 0;
  double worst_assoc = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    // Scales spread over four decades so rounding actually happens.
    const float sa = std::pow(10.0f, -static_cast<float>(i % 4)), sb = 1.0f / sa;
    const VulVector a = compute_vulvector(nudged(base, 1000 + i, "a", sa), base);
    const VulVector b = compute_vulvector(nudged(base, 2000 + i, "b", sb), base);
    const VulVector c = compute_vulvector(nudged(base, 3000 + i, "c", 0.1f), base);
    if (!params_bitwise_equal(vv_add(a, b).entries, vv_add(b, a).entries)) ++commute_fail;

    const VulVector left = vv_add(vv_add(a, b), c), right = vv_add(a, vv_add(b, c));
    for (const auto& [name, l] : left.entries) {
      const Tensor& r = right.entries.at(name);
      for (std::size_t k = 0; k < l.size(); ++k) {
        const double scale = std::fabs(a.entries.at(name)[k]) + std::fabs(b.entries.at(name)[k]) +
                             std::fabs(c.entries.at(name)[k]);
        if (scale > 0.0) worst_assoc = std::max(worst_assoc, std::fabs(static_cast<double>(l[k]) - r[k]) / scale);
      }
    }

    const VulVector zero = vv_scale(a, 0.0f);
    bool zeros = true;
    for (const auto& [_, t] : zero.entries)
      for (float x : t.data()) zeros = zeros && bits_equal(x, 0.0f);
    if (!zeros || !params_bitwise_equal(vv_add(a, zero).entries, a.entries)) ++zero_fail;
  }
  return {commute_fail == 0 && zero_fail == 0 && worst_assoc <= kAssocTol,
          "commute_fail=" + std::to_string(commute_fail) + " zero_fail=" + std::to_string(zero_fail) +
              " assoc_max=" + fmt("%.3g", worst_assoc)};
}

// ---- 2: round trip ---------------------------------------------------------

Outcome round_trip() {
  double worst = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Checkpoint base = test_support::random_base(test_support::tiny_config(), s);
    const Checkpoint ft = nudged(base, 100 + s, "a", 0.05f);
    const Checkpoint back = apply(base, compute_vulvector(ft, base), {{&ft, "a"}});
    for (const auto& [name, t] : ft.encoder_params()) {
      const Tensor& u = back.params.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double den = std::max({std::fabs(static_cast<double>(t[i])), std::fabs(static_cast<double>(u[i])), 1e-30});
        worst = std::max(worst, std::fabs(static_cast<double>(t[i]) - u[i]) / den);
      }
    }
  }
  return {worst <= kRoundTripTol, "seeds=5 max_rel=" + fmt("%.3g", worst)};
}

// ---- 3: gradients ----------------------------------------------------------

Outcome gradients() {
  double worst = 0.0;
  std::string where;
  std::size_t tensors = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& [name, e] : test_support::gradient_check(seed)) {
      ++tensors;
      if (e.rel_error >= worst) worst = e.rel_error, where = name;
    }
  }
  return {worst < kGradTol, "seeds=3 tensors=" + std::to_string(tensors) + " max_rel=" + fmt("%.3g", worst) +
                                " at " + where};
}

// ---- 4: serialization ------------------------------------------------------

Outcome serialization() {
  test_support::TempDir dir("accept");
  Checkpoint c = test_support::random_base(test_support::tiny_config(), 3);
  SeededRng rng(4);
  add_head(c.params, c.config, "a", 3, rng);
  save_checkpoint(c, dir.file("m.yoto"));
  const Checkpoint back = load_checkpoint(dir.file("m.yoto"));
  const bool identical = params_bitwise_equal(back.params, c.params) && back.meta == c.meta;

  const std::string bytes = encode_checkpoint(c);
  std::size_t undetected = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x01);
    try {
      decode_checkpoint(bad);
      ++undetected;
    } catch (const Error&) {
    }
  }

  // Two independent pretraining runs from the same seed.
  CorpusSpec spec;
  spec.patterns = {{"cwe190", {10, 10}}};
  const Dataset d = generate_corpus(spec).at("cwe190");
  TrainHyper h = default_pretrain_hyper();
  h.epochs = 1;
  const ModelConfig cfg{.vocab_size = 48, .d_model = 8, .n_heads = 2, .n_layers = 1, .d_ff = 16, .max_len = 32};
  const std::string fa = fingerprint(pretrain({d}, cfg, h).checkpoint.params);
  const std::string fb = fingerprint(pretrain({d}, cfg, h).checkpoint.params);

  return {identical && undetected == 0 && fa == fb,
          std::string("roundtrip=") + (identical ? "bitwise" : "differs") + " flips=" + std::to_string(bytes.size()) +
              " undetected=" + std::to_string(undetected) + " fingerprint_stable=" + (fa == fb ? "yes" : "no")};
}

// ---- scenario runs ---------------------------------------------------------

nlohmann::json base_run(std::uint64_t seed) {
  return {{"seed", seed},
          {"corpus", {{"positives", 100}, {"negatives", 100}}},
          {"split", {{"train", 0.6}, {"val", 0.2}, {"test", 0.2}}}};
}

ScenarioOutcome run_json(const nlohmann::json& j) {
  const RunConfig rc = parse_run_config(j);
  const PreparedRun prepared = prepare_run(rc);
  return run_scenario(scenario_spec(rc, prepared));
}

Outcome single_merge() {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 42; seed <= 46; ++seed) {
    nlohmann::json j = base_run(seed);
    j["scenario"] = "single";
    j["tasks"] = {{{"name", "cwe190"}, {"patterns", {"cwe190"}}},
                  {{"name", "cwe617"}, {"patterns", {"cwe617"}}},
                  {{"name", "cwe772"}, {"patterns", {"cwe772"}}},
                  {{"name", "cwe269"}, {"patterns", {"cwe269"}}}};
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = run_json(j).summary;
    const double took = seconds_since(t0);
    const double yoto = s.at("yoto_mean_accuracy"), mean = s.at("param_mean_mean_accuracy");
    const double cross = s.at("cross_mean_accuracy"), recall = s.at("yoto_min_recall");
    const bool ok = yoto >= mean && yoto >= cross + kCrossMargin && recall > 0.0 && took < kLimitScenario;
    held += ok;
    detail += " [seed " + std::to_string(seed) + (ok ? " ok" : " no") + " yoto=" + fmt("%.4f", yoto) +
              " mean=" + fmt("%.4f", mean) + " cross=" + fmt("%.4f", cross) + " min_recall=" + fmt("%.3f", recall) +
              " " + fmt("%.0fs", took) + "]";
  }
  return {held >= kSeedsNeeded, "held=" + std::to_string(held) + "/5" + detail};
}

nlohmann::json multi_run() {
  nlohmann::json j = base_run(42);
  j["scenario"] = "multi";
  j["with_joint"] = true;
  j["tasks"] = {{{"name", "A"}, {"patterns", {"cwe190", "cwe617"}}}, {{"name", "B"}, {"patterns", {"cwe772", "cwe269"}}}};
  return j;
}

// Criteria 6 and 8 share one run.
struct MultiResult {
  std::map<std::string, double> summary;
  double seconds = 0.0;
};

const MultiResult& multi_result() {
  static const MultiResult r = [] {
    const auto t0 = std::chrono::steady_clock::now();
    MultiResult m;
    m.summary = run_json(multi_run()).summary;
    m.seconds = seconds_since(t0);
    return m;
  }();
  return r;
}

Outcome multi_merge() {
  const auto& s = multi_result().summary;
  bool ok = s.at("yoto_mean_accuracy") >= s.at("param_mean_mean_accuracy");
  std::string detail;
  for (const char* t : {"A", "B"}) {
    const double y = s.at(std::string("yoto_accuracy.") + t), sp = s.at(std::string("specialist_accuracy.") + t);
    ok = ok && y >= kSpecialistFraction * sp;
    detail += std::string(t) + ": yoto=" + fmt("%.4f", y) + " specialist=" + fmt("%.4f", sp) + " ";
  }
  return {ok, detail + "yoto_mean=" + fmt("%.4f", s.at("yoto_mean_accuracy")) +
                  " param_mean=" + fmt("%.4f", s.at("param_mean_mean_accuracy")) +
                  " lambda=" + fmt("%g", s.at("lambda"))};
}

Outcome joint_comparator() {
  const auto& s = multi_result().summary;
  const double yoto = s.at("yoto_mean_accuracy"), joint = s.at("joint_mean_accuracy");
  return {yoto >= joint - kJointGap, "yoto_mean=" + fmt("%.4f", yoto) + " joint_mean=" + fmt("%.4f", joint) +
                                         " gap=" + fmt("%.1f", 100.0 * (joint - yoto)) + " points (allowed " +
                                         fmt("%.0f", 100.0 * kJointGap) + ")"};
}

Outcome incremental() {
  nlohmann::json j = base_run(42);
  j["scenario"] = "incremental";
  j["tasks"] = {{{"name", "AB"}, {"patterns", {"cwe190", "cwe617"}}},
                {{"name", "cwe772"}, {"patterns", {"cwe772"}}},
                {{"name", "cwe269"}, {"patterns", {"cwe269"}}}};
  const ScenarioOutcome out = run_json(j);
  const double drop = out.summary.at("start_accuracy_drop");
  // Every folded vulnerability, at every stage after it joins.
  double min_recall = 1.0;
  for (const auto& row : out.report.rows) {
    if (row.model == "stage0" || row.dataset == "AB") continue;
    min_recall = std::min(min_recall, row.metrics.recall.value_or(0.0));
  }
  return {drop <= kIncrementalDrop && min_recall > 0.0,
          "start_acc=" + fmt("%.4f", out.summary.at("stage0_accuracy.AB")) + " drop=" + fmt("%.1f", 100.0 * drop) +
              " points min_new_recall=" + fmt("%.3f", min_recall)};
}

Outcome lambda_integrity() {
  const Checkpoint base = test_support::random_base(test_support::tiny_config(), 5);
  const Checkpoint ft = nudged(base, 6, "a", 0.05f);
  const std::vector<VulVector> vs = {compute_vulvector(ft, base)};
  const std::vector<HeadSource> heads = {{&ft, "a"}};
  Dataset d;
  d.class_names = {"none", "CWE-1"};
  d.records = {{"t3 t4", 0, ""}, {"t5 t6", 1, "CWE-1"}};
  d.role = SplitRole::val;
  Dataset test = d;
  test.role = SplitRole::test;

  const bool clean_ok = [&] {
    try {
      select_lambda(base, vs, heads, {{&d, "a", "val"}}, {0.5f});
      return true;
    } catch (const Error&) {
      return false;
    }
  }();
  const bool violation_refused = [&] {
    try {
      select_lambda(base, vs, heads, {{&d, "a", "val"}, {&test, "a", "test"}}, {0.5f});
    } catch (const Error& e) {
      return e.kind() == ErrorKind::split_role;
    }
    return false;
  }();
  return {clean_ok && violation_refused, std::string("val_only=") + (clean_ok ? "accepted" : "rejected") +
                                             " test_split=" + (violation_refused ? "refused" : "accepted")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, kLimitFast, true, algebra},           {2, kLimitMinute, true, round_trip},
      {3, kLimitMinute, true, gradients},       {4, kLimitFast, true, serialization},
      {5, 5 * kLimitScenario, true, single_merge}, {6, kLimitScenario, true, multi_merge},
      {7, kLimitScenario, true, incremental},   {8, kLimitScenario, false, joint_comparator},
      {9, kLimitFast, true, lambda_integrity},
  };
  int gating_failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double took = seconds_since(t0);
    if (c.id == 8) took = multi_result().seconds;
    if (c.id == 6) took = multi_result().seconds;
    const bool pass = o.pass && took < c.limit_s;
    if (!pass && c.gating) ++gating_failures;
    std::printf("criterion %d: %s (%.1fs, limit %.0fs)%s %s\n", c.id, pass ? "PASS" : "FAIL", took, c.limit_s,
                c.gating ? "" : " [reported]", o.detail.c_str());
    std::fflush(stdout);
  }
  return gating_failures == 0 ? 0 : 1;
}
