#include <array>
#include <functional>
#include <map>
#include <set>

#include "doctest.h"
#include "support.hpp"

using namespace yoto;
using test_support::error_kind_of;

namespace {

Dataset binary(const std::string& cwe, int pos, int neg, const std::string& tag = "") {
  Dataset d;
  d.class_names = {"none", cwe};
  for (int i = 0; i < pos; ++i) d.records.push_back({tag + "vuln " + std::to_string(i), 1, cwe});
  for (int i = 0; i < neg; ++i) d.records.push_back({tag + "safe " + std::to_string(i), 0, ""});
  return d;
}

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("jsonl roundtrip") {
  Dataset d = binary("CWE-190", 3, 4);
  d.provenance = "unit";
  d.role = SplitRole::val;
  const Dataset back = parse_jsonl(to_jsonl(d));
  CHECK(back.records == d.records);
  CHECK(back.class_names == d.class_names);
  CHECK(back.provenance == "unit");
  CHECK(back.role == SplitRole::val);

  test_support::TempDir dir("corpus");
  save_jsonl(d, dir.file("d.jsonl"));
  CHECK(load_jsonl(dir.file("d.jsonl")).records == d.records);
  CHECK(error_kind_of([&] { load_jsonl(dir.file("missing.jsonl")); }) == ErrorKind::io);
}

TEST_CASE("header-only file is an empty dataset") {
  const Dataset d = parse_jsonl("{\"schema\":\"yoto-dataset/1\",\"classes\":[\"none\",\"CWE-1\"]}\n");
  CHECK(d.records.empty());
  CHECK(d.n_classes() == 2);
}

TEST_CASE("jsonl errors carry line numbers") {
  const std::string header = "{\"schema\":\"yoto-dataset/1\"}\n";
  const std::string bad = header + "{\"func\":\"a\",\"target\":0}\n{not json\n";
  CHECK(error_kind_of([&] { parse_jsonl(bad, "f.jsonl"); }) == ErrorKind::parse);
  CHECK(error_message([&] { parse_jsonl(bad, "f.jsonl"); }).find("f.jsonl:3") != std::string::npos);
  CHECK(error_kind_of([&] { parse_jsonl(header + "{\"func\":1,\"target\":0}\n"); }) == ErrorKind::parse);
  CHECK(error_kind_of([] { parse_jsonl("{\"func\":\"a\",\"target\":0}\n"); }) == ErrorKind::parse);
  CHECK(error_kind_of([] { parse_jsonl("{\"schema\":\"yoto-dataset/9\"}\n"); }) == ErrorKind::version);
  CHECK(error_kind_of([] { parse_jsonl("{\"schema\":\"other\"}\n"); }) == ErrorKind::parse);
  CHECK(error_kind_of([] { parse_jsonl(""); }) == ErrorKind::parse);
}

TEST_CASE("inconsistent labels violate the invariant") {
  const std::string text =
      "{\"schema\":\"yoto-dataset/1\",\"classes\":[\"none\",\"A\",\"B\"]}\n"
      "{\"func\":\"x\",\"target\":3,\"cwe\":\"C\"}\n";
  CHECK(error_kind_of([&] { parse_jsonl(text); }) == ErrorKind::invariant);
  const std::string mismatch =
      "{\"schema\":\"yoto-dataset/1\",\"classes\":[\"none\",\"A\"]}\n"
      "{\"func\":\"x\",\"target\":1,\"cwe\":\"B\"}\n";
  CHECK(error_kind_of([&] { parse_jsonl(mismatch); }) == ErrorKind::invariant);
  const std::string no_cwe =
      "{\"schema\":\"yoto-dataset/1\",\"classes\":[\"none\",\"A\"]}\n"
      "{\"func\":\"x\",\"target\":1}\n";
  CHECK(error_kind_of([&] { parse_jsonl(no_cwe); }) == ErrorKind::invariant);
}

TEST_CASE("classes are inferred in order of first appearance") {
  const std::string text =
      "{\"schema\":\"yoto-dataset/1\"}\n"
      "{\"func\":\"x\",\"target\":0}\n"
      "{\"func\":\"y\",\"target\":1,\"cwe\":\"CWE-9\"}\n";
  CHECK(parse_jsonl(text).class_names == std::vector<std::string>{"none", "CWE-9"});
}

TEST_CASE("concat renumbers vulnerability classes") {
  const Dataset a = binary("CWE-772", 1, 1438, "a");
  const Dataset b = binary("CWE-269", 2, 1837, "b");
  const Dataset c = concat_datasets({a, b});
  CHECK(c.records.size() == 3278);
  CHECK(c.class_names == std::vector<std::string>{"none", "CWE-772", "CWE-269"});
  int t2 = 0;
  for (const auto& r : c.records) {
    if (r.cwe == "CWE-269") {
      CHECK(r.target == 2);
      ++t2;
    }
  }
  CHECK(t2 == 2);
  CHECK(concat_datasets({a}).records == a.records);
  CHECK(error_kind_of([&] { concat_datasets({a, a}); }) == ErrorKind::conflict);
  CHECK(error_kind_of([] { concat_datasets({}); }) == ErrorKind::argument);
}

TEST_CASE("concat is associative on records") {
  const Dataset a = binary("A", 2, 2, "a"), b = binary("B", 3, 1, "b"), c = binary("C", 1, 2, "c");
  const Dataset left = concat_datasets({concat_datasets({a, b}), c});
  const Dataset right = concat_datasets({a, concat_datasets({b, c})});
  CHECK(left.records == right.records);
  CHECK(left.class_names == right.class_names);
}

TEST_CASE("relabel maps into a wider label space") {
  const Dataset b = binary("B", 2, 1);
  const Dataset r = relabel(b, {"none", "A", "B"});
  for (const auto& rec : r.records) CHECK(rec.target == (rec.cwe == "B" ? 2 : 0));
  CHECK(error_kind_of([&] { relabel(b, {"none", "A"}); }) == ErrorKind::config);
}

TEST_CASE("tokenizer") {
  CHECK(split_tokens("a + b").size() == 3);
  CHECK(split_tokens("p->len <= n_max;") == std::vector<std::string>{"p", "->", "len", "<=", "n_max", ";"});
  Dataset d;
  d.records = {{"x x x y y z", 0, ""}};
  const Vocab v = build_vocab({d}, 5);
  CHECK(v.size() == 5);
  CHECK(v.token(3) == "x");
  CHECK(v.token(4) == "y");
  CHECK(v.id("z") == kUnknownId);
  CHECK(v.id("never") == kUnknownId);
  const auto ids = tokenize(v, "x y x y x y x", 4);
  CHECK(ids.size() == 4);
  CHECK(tokenize(v, "   ", 4) == std::vector<std::int32_t>{kUnknownId});
  // Equal counts break ties lexicographically.
  Dataset tie;
  tie.records = {{"b a c", 0, ""}};
  CHECK(build_vocab({tie}, 10).tokens() == std::vector<std::string>{"<pad>", "<unk>", "<mask>", "a", "b", "c"});
}

TEST_CASE("split sizes and stratification") {
  Dataset d = binary("A", 30, 70);
  const auto s = split(d, {0.8, 0.1, 0.1}, 7);
  CHECK(s.train.records.size() == 80);
  CHECK(s.val.records.size() == 10);
  CHECK(s.test.records.size() == 10);
  CHECK(s.train.role == SplitRole::train);
  CHECK(s.test.role == SplitRole::test);
  CHECK(s.warnings.empty());

  // Oracle: each class's share of each partition is within one record of
  // its exact proportional share.
  const auto gen = generate_corpus([] {
    CorpusSpec spec;
    spec.patterns = {{"cwe190", {37, 151}}, {"cwe617", {13, 88}}};
    return spec;
  }());
  const Dataset mix = concat_datasets({gen.at("cwe190"), gen.at("cwe617")});
  const std::array<double, 3> ratios = {0.6, 0.25, 0.15};
  const auto m = split(mix, {ratios[0], ratios[1], ratios[2]}, 11);
  std::map<int, int> total;
  for (const auto& r : mix.records) ++total[r.target];
  const Dataset* parts[3] = {&m.train, &m.val, &m.test};
  std::size_t sum = 0;
  for (int k = 0; k < 3; ++k) {
    std::map<int, int> got;
    for (const auto& r : parts[k]->records) ++got[r.target];
    for (const auto& [cls, n] : total) CHECK(std::abs(got[cls] - n * ratios[k]) <= 1.0);
    sum += parts[k]->records.size();
  }
  CHECK(sum == mix.records.size());

  // Partition: every record lands exactly once.
  std::multiset<std::string> seen;
  for (auto* p : parts)
    for (const auto& r : p->records) seen.insert(r.func);
  std::multiset<std::string> all;
  for (const auto& r : mix.records) all.insert(r.func);
  CHECK(seen == all);
}

TEST_CASE("split determinism, preconditions and warnings") {
  const Dataset d = binary("A", 20, 20);
  const auto a = split(d, {0.8, 0.1, 0.1}, 3);
  const auto b = split(d, {0.8, 0.1, 0.1}, 3);
  const auto c = split(d, {0.8, 0.1, 0.1}, 4);
  CHECK(a.train.records == b.train.records);
  CHECK(a.train.records != c.train.records);
  CHECK(error_kind_of([&] { split(d, {1.0, 0.0, 0.0}, 1); }) == ErrorKind::precondition);
  CHECK(error_kind_of([&] { split(d, {0.5, 0.3, 0.3}, 1); }) == ErrorKind::precondition);
  const auto w = split(binary("A", 2, 30), {0.8, 0.1, 0.1}, 1);
  CHECK(w.warnings.size() == 1);
}

TEST_CASE("synthetic corpus is seeded and labelled consistently") {
  CorpusSpec spec;
  spec.patterns = {{"cwe772", {10, 12}}, {"cwe269", {5, 5}}};
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(spec);
  spec.seed = 43;
  const auto c = generate_corpus(spec);
  CHECK(a.at("cwe772").records == b.at("cwe772").records);
  CHECK(a.at("cwe772").records != c.at("cwe772").records);
  const Dataset& d = a.at("cwe772");
  CHECK(d.class_names == std::vector<std::string>{"none", "CWE-772"});
  CHECK(d.records.size() == 22);
  CHECK_NOTHROW(d.validate());
  CHECK(pattern_catalog().size() == 8);
  CorpusSpec unknown;
  unknown.patterns = {{"cwe000", {1, 1}}};
  CHECK_THROWS_AS(generate_corpus(unknown), Error);
}

TEST_CASE("signatures are learnable by a bag-of-tokens linear probe") {
  // Perceptron over token-presence features; each pattern must be separable
  // to >= 95% training accuracy.
  for (const auto& info : pattern_catalog()) {
    CorpusSpec spec;
    spec.patterns = {{info.id, {100, 100}}};
    const Dataset d = generate_corpus(spec).at(info.id);
    std::map<std::string, std::size_t> feat;
    std::vector<std::vector<std::size_t>> xs;
    for (const auto& r : d.records) {
      std::set<std::size_t> present;
      for (const auto& t : split_tokens(r.func)) present.insert(feat.emplace(t, feat.size()).first->second);
      xs.emplace_back(present.begin(), present.end());
    }
    std::vector<double> w(feat.size(), 0.0);
    double bias = 0.0;
    auto score = [&](std::size_t i) {
      double s = bias;
      for (auto f : xs[i]) s += w[f];
      return s;
    };
    for (int epoch = 0; epoch < 50; ++epoch) {
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double y = d.records[i].target == 1 ? 1.0 : -1.0;
        if (y * score(i) <= 0.0) {
          for (auto f : xs[i]) w[f] += y;
          bias += y;
        }
      }
    }
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) correct += (score(i) > 0.0) == (d.records[i].target == 1);
    INFO(info.id);
    CHECK(correct >= 190);
  }
}
