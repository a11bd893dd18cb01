#include "yoto/corpus.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "yoto/error.hpp"
#include "yoto/numkern.hpp"

namespace yoto {

using nlohmann::json;

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::whole: return "whole";
    case SplitRole::train: return "train";
    case SplitRole::val: return "val";
    case SplitRole::test: return "test";
  }
  return "whole";
}

SplitRole parse_split_role(const std::string& text) {
  if (text == "whole") return SplitRole::whole;
  if (text == "train") return SplitRole::train;
  if (text == "val") return SplitRole::val;
  if (text == "test") return SplitRole::test;
  throw Error(ErrorKind::parse, "unknown split role '" + text + "'");
}

std::vector<int> Dataset::targets() const {
  std::vector<int> t;
  t.reserve(records.size());
  for (const auto& r : records) t.push_back(r.target);
  return t;
}

void Dataset::validate() const {
  if (class_names.empty() || class_names[0] != "none") {
    throw Error(ErrorKind::invariant, "class 0 must be named \"none\"");
  }
  std::set<std::string> seen;
  for (const auto& c : class_names) {
    if (!seen.insert(c).second) throw Error(ErrorKind::invariant, "duplicate class name '" + c + "'");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.target < 0 || static_cast<std::size_t>(r.target) >= class_names.size()) {
      throw Error(ErrorKind::invariant, "record " + std::to_string(i) + " has target " + std::to_string(r.target) +
                                            " but only " + std::to_string(class_names.size()) + " classes");
    }
    if ((r.target == 0) != r.cwe.empty()) {
      throw Error(ErrorKind::invariant, "record " + std::to_string(i) + ": target 0 iff cwe is empty");
    }
    if (r.target != 0 && class_names[static_cast<std::size_t>(r.target)] != r.cwe) {
      throw Error(ErrorKind::invariant, "record " + std::to_string(i) + ": cwe '" + r.cwe + "' disagrees with class '" +
                                            class_names[static_cast<std::size_t>(r.target)] + "'");
    }
  }
}

// ---- JSONL -----------------------------------------------------------------

Dataset parse_jsonl(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::parse, source + ":" + std::to_string(line_no) + ": " + what);
  };

  Dataset ds;
  bool have_header = false;
  bool header_classes = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail("expected a JSON object");
    if (!have_header) {
      if (!j.contains("schema") || !j["schema"].is_string()) fail("first line must be a header with \"schema\"");
      const std::string schema = j["schema"].get<std::string>();
      if (schema != kDatasetSchema) {
        if (schema.rfind("yoto-dataset/", 0) == 0) {
          throw Error(ErrorKind::version, source + ": unsupported dataset schema version '" + schema + "'");
        }
        fail("unknown schema '" + schema + "'");
      }
      if (j.contains("classes")) {
        if (!j["classes"].is_array()) fail("\"classes\" must be an array");
        ds.class_names.clear();
        for (const auto& c : j["classes"]) {
          if (!c.is_string()) fail("class names must be strings");
          ds.class_names.push_back(c.get<std::string>());
        }
        header_classes = true;
      }
      if (j.contains("provenance") && j["provenance"].is_string()) ds.provenance = j["provenance"].get<std::string>();
      if (j.contains("split") && j["split"].is_string()) ds.role = parse_split_role(j["split"].get<std::string>());
      have_header = true;
      continue;
    }
    if (!j.contains("func") || !j["func"].is_string()) fail("missing string field \"func\"");
    if (!j.contains("target") || !j["target"].is_number_integer()) fail("missing integer field \"target\"");
    FuncRecord r;
    r.func = j["func"].get<std::string>();
    r.target = j["target"].get<int>();
    if (j.contains("cwe")) {
      if (!j["cwe"].is_string()) fail("\"cwe\" must be a string");
      r.cwe = j["cwe"].get<std::string>();
    }
    ds.records.push_back(std::move(r));
  }
  if (!have_header) {
    line_no = 1;
    fail("missing header line");
  }
  if (!header_classes) {
    // Inferred: vulnerability classes in order of first appearance.
    for (const auto& r : ds.records) {
      if (!r.cwe.empty() && std::find(ds.class_names.begin(), ds.class_names.end(), r.cwe) == ds.class_names.end()) {
        ds.class_names.push_back(r.cwe);
      }
    }
  }
  ds.validate();
  return ds;
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open dataset '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), path);
}

std::string to_jsonl(const Dataset& dataset) {
  dataset.validate();
  json header = {{"schema", kDatasetSchema}, {"classes", dataset.class_names}};
  if (!dataset.provenance.empty()) header["provenance"] = dataset.provenance;
  if (dataset.role != SplitRole::whole) header["split"] = to_string(dataset.role);
  std::string out = header.dump() + "\n";
  for (const auto& r : dataset.records) {
    // Key order is fixed by hand rather than by json's sorted object map.
    out += "{\"func\":" + json(r.func).dump() + ",\"target\":" + std::to_string(r.target) +
           ",\"cwe\":" + json(r.cwe).dump() + "}\n";
  }
  return out;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  const std::string text = to_jsonl(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write dataset '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

// ---- dataset algebra -------------------------------------------------------

Dataset concat_datasets(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw Error(ErrorKind::argument, "concat_datasets: no parts");
  Dataset out;
  std::vector<std::string> provenance;
  for (const auto& part : parts) {
    part.validate();
    std::vector<int> remap(part.class_names.size(), 0);
    for (std::size_t c = 1; c < part.class_names.size(); ++c) {
      const auto& name = part.class_names[c];
      if (std::find(out.class_names.begin(), out.class_names.end(), name) != out.class_names.end()) {
        throw Error(ErrorKind::conflict, "CWE label '" + name + "' appears in more than one part");
      }
      remap[c] = static_cast<int>(out.class_names.size());
      out.class_names.push_back(name);
    }
    for (const auto& r : part.records) {
      out.records.push_back({r.func, remap[static_cast<std::size_t>(r.target)], r.cwe});
    }
    provenance.push_back(part.provenance);
  }
  out.role = parts.front().role;
  for (const auto& p : parts) {
    if (p.role != out.role) out.role = SplitRole::whole;
  }
  out.provenance = parts.size() == 1 ? parts.front().provenance : "concat(";
  if (parts.size() > 1) {
    for (std::size_t i = 0; i < provenance.size(); ++i) out.provenance += (i ? "," : "") + provenance[i];
    out.provenance += ")";
  }
  return out;
}

Dataset relabel(const Dataset& dataset, const std::vector<std::string>& class_names) {
  Dataset out = dataset;
  out.class_names = class_names;
  std::vector<int> remap(dataset.class_names.size(), 0);
  for (std::size_t c = 1; c < dataset.class_names.size(); ++c) {
    auto it = std::find(class_names.begin(), class_names.end(), dataset.class_names[c]);
    if (it == class_names.end()) {
      throw Error(ErrorKind::config, "class '" + dataset.class_names[c] + "' missing from target label space");
    }
    remap[c] = static_cast<int>(it - class_names.begin());
  }
  for (auto& r : out.records) r.target = remap[static_cast<std::size_t>(r.target)];
  out.validate();
  return out;
}

// ---- synthetic generator ---------------------------------------------------

namespace {

struct Family {
  PatternInfo info;
  std::vector<std::string> signatures;
};

// Placeholders: {v}/{w} scalar vars, {p}/{q} pointers, {f} fields.
const std::vector<Family>& families() {
  static const std::vector<Family> f = {
      {{"cwe190", "CWE-190", "unchecked size multiplication"},
       {"unsigned int alloc_sz = nmemb * elem_size ;", "{v} = {w} * elem_size ;",
        "int total_bytes = nmemb * {v} + header_len ;"}},
      {{"cwe617", "CWE-617", "reachable assertion"},
       {"assert ( {v} < MAX_DEPTH ) ;", "BUG_ON ( {p} -> refcnt == 0 ) ;", "assert ( {p} -> {f} != NULL ) ;"}},
      {{"cwe772", "CWE-772", "handle acquired and never released"},
       {"fp = fopen ( path , \"r\" ) ; if ( {v} < 0 ) return - 1 ;", "fd = open_handle ( {p} ) ; if ( err ) return err ;",
        "sock = acquire_socket ( {p} ) ; if ( ! {v} ) return 0 ;"}},
      {{"cwe269", "CWE-269", "privilege raised without drop"},
       {"setuid ( 0 ) ;", "cap_raise ( cred , CAP_SYS_ADMIN ) ;", "seteuid ( owner_uid ) ;"}},
      {{"cwe119", "CWE-119", "copy bounded by untrusted length"},
       {"memcpy ( {p} , {q} , user_len ) ;", "{p} [ user_len ] = 0 ;", "memmove ( {p} , {q} + user_len , {v} ) ;"}},
      {{"cwe416", "CWE-416", "object used after release"},
       {"kfree ( {p} ) ; {p} -> {f} = 0 ;", "release_obj ( {p} ) ; use_obj ( {p} ) ;", "kfree ( {q} ) ; {v} = {q} -> {f} ;"}},
      {{"cwe476", "CWE-476", "lookup result dereferenced unchecked"},
       {"entry = lookup_entry ( table , {v} ) ; entry -> {f} = {w} ;", "{p} = find_node ( list , key ) ; {v} = {p} -> next_node ;",
        "entry = lookup_entry ( table , key ) ; {v} = entry -> {f} ;"}},
      {{"cwe787", "CWE-787", "unbounded write into fixed buffer"},
       {"strcpy ( dest_buf , {p} ) ;", "sprintf ( dest_buf , fmt , {v} ) ;", "strcat ( dest_buf , {q} ) ;"}},
  };
  return f;
}

const std::vector<std::string> kScalars = {"n", "len", "count", "idx", "pos", "size", "total", "off", "val", "ret"};
const std::vector<std::string> kPointers = {"buf", "data", "ptr", "src", "dst", "ctx", "node", "req", "msg", "item"};
const std::vector<std::string> kFields = {"flags", "state", "length", "owner", "next", "mode"};
const std::vector<std::string> kVerbs = {"process", "handle", "parse", "update", "read", "write", "init", "load"};
const std::vector<std::string> kNouns = {"entry", "block", "packet", "record", "frame", "buffer", "header", "table"};
const std::vector<std::string> kTypes = {"char", "uint8_t", "struct item", "void", "int"};
const std::vector<std::string> kFillers = {
    "int {v} = 0 ;",
    "{v} = {w} + 1 ;",
    "if ( {p} == NULL ) return - 1 ;",
    "for ( i = 0 ; i < {v} ; i ++ ) {p} [ i ] = 0 ;",
    "{v} = strlen ( {p} ) ;",
    "memset ( {p} , 0 , {v} ) ;",
    "{p} -> {f} = {v} ;",
    "{v} += {w} ;",
    "if ( {v} > {w} ) {v} = {w} ;",
    "ret = check_state ( {p} , {v} ) ;",
    "log_debug ( \"{v}\" , {v} ) ;",
};

template <typename T>
const T& pick(SeededRng& rng, const std::vector<T>& items) {
  return items[static_cast<std::size_t>(rng.below(items.size()))];
}

std::string fill(const std::string& tmpl, SeededRng& rng) {
  const std::string v = pick(rng, kScalars);
  std::string w = pick(rng, kScalars);
  const std::string p = pick(rng, kPointers);
  std::string q = pick(rng, kPointers);
  const std::string f = pick(rng, kFields);
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      switch (tmpl[i + 1]) {
        case 'v': out += v; break;
        case 'w': out += w; break;
        case 'p': out += p; break;
        case 'q': out += q; break;
        case 'f': out += f; break;
        default: out += tmpl.substr(i, 3);
      }
      i += 2;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

std::string make_function(SeededRng& rng, const std::string* signature) {
  const std::string name = pick(rng, kVerbs) + "_" + pick(rng, kNouns);
  const std::string arg_ptr = pick(rng, kPointers);
  const std::string arg_len = pick(rng, kScalars);
  std::vector<std::string> body;
  const std::size_t n_fill = 1 + static_cast<std::size_t>(rng.below(3));
  for (std::size_t i = 0; i < n_fill; ++i) body.push_back(fill(pick(rng, kFillers), rng));
  if (signature) {
    const auto at = static_cast<std::ptrdiff_t>(rng.below(body.size() + 1));
    body.insert(body.begin() + at, fill(*signature, rng));
  }
  std::string out = "static int " + name + " ( " + pick(rng, kTypes) + " * " + arg_ptr + " , size_t " + arg_len +
                    " ) { int i ;";
  for (const auto& s : body) out += " " + s;
  out += " return " + pick(rng, kScalars) + " ; }";
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

const std::vector<PatternInfo>& pattern_catalog() {
  static const std::vector<PatternInfo> catalog = [] {
    std::vector<PatternInfo> out;
    for (const auto& f : families()) out.push_back(f.info);
    return out;
  }();
  return catalog;
}

CorpusSpec imbalanced_scaled_spec(std::uint64_t seed) {
  // Vulnerable / total per CWE at about a tenth of the original counts.
  CorpusSpec spec;
  spec.seed = seed;
  spec.patterns["cwe190"] = {67, 976 - 67};
  spec.patterns["cwe617"] = {16, 349 - 16};
  spec.patterns["cwe772"] = {10, 144 - 10};
  spec.patterns["cwe269"] = {11, 184 - 11};
  return spec;
}

std::map<std::string, Dataset> generate_corpus(const CorpusSpec& spec) {
  if (!(spec.signature_rate >= 0.0 && spec.signature_rate <= 1.0)) {
    throw Error(ErrorKind::precondition, "signature_rate must lie in [0, 1]");
  }
  std::map<std::string, Dataset> out;
  for (const auto& [id, counts] : spec.patterns) {
    auto fam = std::find_if(families().begin(), families().end(), [&](const Family& f) { return f.info.id == id; });
    if (fam == families().end()) throw Error(ErrorKind::config, "unknown synthetic pattern '" + id + "'");
    if (counts.positives < 1 || counts.negatives < 1) {
      throw Error(ErrorKind::precondition, "pattern '" + id + "' needs at least one positive and one negative");
    }
    SeededRng rng(derive_seed(spec.seed, fnv1a(id)));
    Dataset ds;
    ds.class_names = {"none", fam->info.cwe};
    ds.provenance = "synthetic:" + id + ":seed=" + std::to_string(spec.seed);
    for (int i = 0; i < counts.positives; ++i) {
      const bool carries = rng.uniform() < spec.signature_rate;
      const std::string& sig = pick(rng, fam->signatures);
      ds.records.push_back({make_function(rng, carries ? &sig : nullptr), 1, fam->info.cwe});
    }
    for (int i = 0; i < counts.negatives; ++i) ds.records.push_back({make_function(rng, nullptr), 0, ""});
    rng.shuffle(ds.records);
    out.emplace(id, std::move(ds));
  }
  return out;
}

// ---- tokenizer -------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{"<pad>", "<unk>", "<mask>"}) {}

Vocab::Vocab(std::vector<std::string> tokens_by_id) : tokens_(std::move(tokens_by_id)) {
  if (tokens_.size() < static_cast<std::size_t>(kFirstTokenId) || tokens_[0] != "<pad>" || tokens_[1] != "<unk>" ||
      tokens_[2] != "<mask>") {
    throw Error(ErrorKind::invariant, "vocabulary must start with <pad>, <unk>, <mask>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw Error(ErrorKind::invariant, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

std::int32_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() || it->second < kFirstTokenId ? kUnknownId : it->second;
}

std::vector<std::string> split_tokens(const std::string& func) {
  static const std::set<std::string> two_char = {"->", "==", "!=", "<=", ">=", "&&", "||", "++", "--",
                                                 "<<", ">>", "+=", "-=", "*=", "/=", "::"};
  auto word_char = [](unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; };
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < func.size()) {
    const auto c = static_cast<unsigned char>(func[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (word_char(c)) {
      std::size_t j = i;
      while (j < func.size() && word_char(static_cast<unsigned char>(func[j]))) ++j;
      out.push_back(func.substr(i, j - i));
      i = j;
    } else if (i + 1 < func.size() && two_char.contains(func.substr(i, 2))) {
      out.push_back(func.substr(i, 2));
      i += 2;
    } else {
      out.push_back(std::string(1, func[i]));
      ++i;
    }
  }
  return out;
}

Vocab build_vocab(const std::vector<Dataset>& datasets, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(kFirstTokenId)) {
    throw Error(ErrorKind::config, "vocabulary size must leave room for the reserved tokens");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& ds : datasets) {
    for (const auto& r : ds.records) {
      for (auto& t : split_tokens(r.func)) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<mask>"};
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (tok == "<pad>" || tok == "<unk>" || tok == "<mask>") continue;
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

std::vector<std::int32_t> tokenize(const Vocab& vocab, const std::string& func, std::size_t max_len) {
  std::vector<std::int32_t> ids;
  for (const auto& t : split_tokens(func)) {
    if (ids.size() >= max_len) break;
    ids.push_back(vocab.id(t));
  }
  if (ids.empty() && max_len > 0) ids.push_back(kUnknownId);
  return ids;
}

// ---- splitting -------------------------------------------------------------

namespace {

// Rounds the strata x split table of ideal counts so that every cell is the
// floor or ceiling of its ideal value, each stratum keeps its size, and each
// split total is the largest-remainder rounding of its ideal total.
std::vector<std::array<std::size_t, 3>> controlled_round(const std::vector<std::size_t>& strata,
                                                         const std::array<double, 3>& ratios) {
  const std::size_t n_strata = strata.size();
  const std::size_t total = std::accumulate(strata.begin(), strata.end(), std::size_t{0});
  std::array<std::size_t, 3> split_total{};
  {
    std::array<double, 3> frac{};
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double ideal = static_cast<double>(total) * ratios[k];
      split_total[k] = static_cast<std::size_t>(std::floor(ideal));
      frac[k] = ideal - std::floor(ideal);
      used += split_total[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; used < total; ++i, ++used) ++split_total[order[i % 3]];
  }

  std::vector<std::array<std::size_t, 3>> cells(n_strata);
  std::vector<std::array<double, 3>> frac(n_strata);
  std::vector<std::size_t> stratum_need(n_strata);
  std::array<std::size_t, 3> split_need = split_total;
  for (std::size_t s = 0; s < n_strata; ++s) {
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double ideal = static_cast<double>(strata[s]) * ratios[k];
      cells[s][k] = static_cast<std::size_t>(std::floor(ideal));
      frac[s][k] = ideal - std::floor(ideal);
      used += cells[s][k];
      split_need[k] -= cells[s][k];
    }
    stratum_need[s] = strata[s] - used;
  }

  // Unit-capacity transport problem strata -> splits, solved by augmenting
  // paths; cells with larger fractional parts are tried first.
  std::vector<std::array<bool, 3>> bumped(n_strata, {false, false, false});
  std::function<bool(std::size_t, std::vector<bool>&, int&)> augment = [&](std::size_t s, std::vector<bool>& seen,
                                                                            int& sink) -> bool {
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[s][a] > frac[s][b]; });
    for (int k : order) {
      if (bumped[s][k]) continue;
      if (split_need[k] > 0) {
        bumped[s][k] = true;
        --split_need[k];
        sink = k;
        return true;
      }
    }
    // Reroute: take a split whose extra unit another stratum holds.
    for (int k : order) {
      if (bumped[s][k]) continue;
      for (std::size_t o = 0; o < n_strata; ++o) {
        if (o == s || seen[o] || !bumped[o][k]) continue;
        seen[o] = true;
        bumped[o][k] = false;
        int inner = -1;
        if (augment(o, seen, inner)) {
          bumped[s][k] = true;
          sink = inner;
          return true;
        }
        bumped[o][k] = true;
      }
    }
    return false;
  };
  for (std::size_t s = 0; s < n_strata; ++s) {
    for (std::size_t u = 0; u < stratum_need[s]; ++u) {
      std::vector<bool> seen(n_strata, false);
      seen[s] = true;
      int sink = -1;
      if (!augment(s, seen, sink)) throw Error(ErrorKind::invariant, "split rounding failed");
    }
  }
  for (std::size_t s = 0; s < n_strata; ++s) {
    for (int k = 0; k < 3; ++k) cells[s][k] += bumped[s][k] ? 1 : 0;
  }
  return cells;
}

}  // namespace

SplitResult split(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v > 0.0)) throw Error(ErrorKind::precondition, "split ratios must each be > 0");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw Error(ErrorKind::precondition, "split ratios must sum to 1");
  dataset.validate();

  SplitResult res;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) by_class[dataset.records[i].target].push_back(i);
  std::vector<std::vector<std::size_t>> strata;
  std::vector<std::size_t> pooled;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 3) {
      res.warnings.push_back("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                             " record(s); split unstratified");
      pooled.insert(pooled.end(), idx.begin(), idx.end());
    } else {
      strata.push_back(std::move(idx));
    }
  }
  if (!pooled.empty()) strata.push_back(std::move(pooled));

  std::vector<std::size_t> sizes;
  for (const auto& s : strata) sizes.push_back(s.size());
  const auto cells = controlled_round(sizes, r);

  SeededRng rng(seed);
  Dataset* outs[3] = {&res.train, &res.val, &res.test};
  const SplitRole roles[3] = {SplitRole::train, SplitRole::val, SplitRole::test};
  for (int k = 0; k < 3; ++k) {
    outs[k]->class_names = dataset.class_names;
    outs[k]->role = roles[k];
    outs[k]->provenance = dataset.provenance + "|" + to_string(roles[k]);
  }
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto idx = strata[s];
    rng.shuffle(idx);
    std::size_t at = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t n = 0; n < cells[s][k]; ++n) outs[k]->records.push_back(dataset.records[idx[at++]]);
    }
  }
  for (auto* d : outs) rng.shuffle(d->records);
  return res;
}

}  // namespace yoto
